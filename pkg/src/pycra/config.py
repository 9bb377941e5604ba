"""Flat ``key = value`` scenario configuration with dotted section names.

Example::

    seed = 7
    fs = 10000
    attacker.kind = t2
    attacker.tau_attack_s = 0.0005

Blank lines and ``#`` comments are ignored. Every problem found while parsing
or validating is collected and raised together in one :class:`ConfigError`.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, PycraError


@dataclass
class RingSection:
    frequency_hz: float = 71.0
    gain: float = 1.0


@dataclass
class ScheduleSection:
    mean_period_s: float = 0.05
    silence_ratio: float = 0.5
    grid_s: float = 0.002
    amplitude: float = 1.0
    # amplitude of confusion segments; 0 disables them
    beta_amp: float = 0.0


@dataclass
class PlantSection:
    settle_s: float = 0.035
    order: int = 2
    sigma_v: float = 0.003


@dataclass
class AttackerSection:
    kind: str = "none"  # none | t1 | t2 | t3
    f_start_hz: float = 60.0
    f_end_hz: float = 400.0
    sweep_s: float = 0.0  # 0 stretches the sweep over the horizon
    amplitude: float = 1.0
    tau_attack_s: float = 0.002
    cancel_gain: float = 0.0
    detector: str = "oracle"  # oracle | qcd
    delay_samples: int = 0
    alpha: float = 0.01
    hazard: float = 0.01
    sigma_obs: float = 0.5


@dataclass
class DetectorSection:
    window_T: int = 5
    threshold: float = 0.0  # 0 means calibrate from clean runs
    calibration_quantile: float = 0.98
    calibration_runs: int = 300


@dataclass
class ResilientSection:
    N: int = 5000
    window_T: int = 100
    beta_freq: float = 1000.0
    memory_factor: float = 1.1
    warmup_factor: float = 2.5
    max_hz: float = 600.0
    post_transition: bool = False
    post_width: int = 40
    beta_excess: float = 20.0


@dataclass
class QcdSection:
    A: float = 1.0
    sigma: float = 1.0
    rho: float = 0.1
    alphas: tuple = (0.1, 0.01, 0.001)
    K: int = 1
    beta_amp: float = 2.0
    trials: int = 20000
    calibration_trials: int = 20000


@dataclass
class RfidSection:
    carrier_hz: float = 125_000.0
    fs: float = 1_000_000.0
    kappa_tag: float = 0.05
    kappa_eve: tuple = (0.0, 0.002, 0.005, 0.01, 0.02)
    sigma_v: float = 0.005
    bit_period_samples: int = 256
    runs: int = 1000
    calibration_runs: int = 1000
    fpr: float = 0.01


SECTIONS = {
    "ring": RingSection,
    "schedule": ScheduleSection,
    "plant": PlantSection,
    "attacker": AttackerSection,
    "detector": DetectorSection,
    "resilient": ResilientSection,
    "qcd": QcdSection,
    "rfid": RfidSection,
}


@dataclass
class ScenarioConfig:
    seed: int = 0
    fs: float = 10_000.0
    horizon_s: float = 0.5
    ring: RingSection = field(default_factory=RingSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    plant: PlantSection = field(default_factory=PlantSection)
    attacker: AttackerSection = field(default_factory=AttackerSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    resilient: ResilientSection = field(default_factory=ResilientSection)
    qcd: QcdSection = field(default_factory=QcdSection)
    rfid: RfidSection = field(default_factory=RfidSection)

    @property
    def n_samples(self) -> int:
        return int(round(self.horizon_s * self.fs))

    def replace(self, **dotted) -> "ScenarioConfig":
        """Copy with overrides given as ``section__key=value`` or top-level ``key=value``."""
        text = self.to_text()
        extra = "\n".join(f"{k.replace('__', '.')} = {_format(v)}" for k, v in dotted.items())
        return parse_config(text + "\n" + extra)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in SECTIONS:
                for sf in fields(v):
                    lines.append(f"{f.name}.{sf.name} = {_format(getattr(v, sf.name))}")
            else:
                lines.append(f"{f.name} = {_format(v)}")
        return "\n".join(lines) + "\n"

    def validate(self) -> "ScenarioConfig":
        problems = _semantic_problems(self)
        if problems:
            raise ConfigError(problems)
        return self


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_format(x) for x in v)
    return str(v)


def _coerce(raw: str, typ):
    if typ is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    if typ is tuple:
        return tuple(float(x) for x in raw.split(",") if x.strip())
    return raw


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate configuration text; unknown keys and bad values are all reported."""
    problems = []
    top = {}
    sections = {name: {} for name in SECTIONS}
    top_types = typing.get_type_hints(ScenarioConfig)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        if "." in key:
            sec, name = key.split(".", 1)
            cls = SECTIONS.get(sec)
            if cls is None:
                problems.append(f"{key}: unknown section {sec!r}")
                continue
            hints = typing.get_type_hints(cls)
            if name not in hints:
                problems.append(f"{key}: unknown key")
                continue
            target, typ = sections[sec], hints[name]
        else:
            if key not in top_types or key in SECTIONS:
                problems.append(f"{key}: unknown key")
                continue
            target, typ, name = top, top_types[key], key
        try:
            target[name] = _coerce(raw, typ)
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
    if problems:
        raise ConfigError(problems)
    cfg = ScenarioConfig(**top, **{k: SECTIONS[k](**v) for k, v in sections.items()})
    return cfg.validate()


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from exc
    return parse_config(text)


def _semantic_problems(cfg: ScenarioConfig) -> list[str]:
    p = []

    def need(cond, msg):
        if not cond:
            p.append(msg)

    need(cfg.seed >= 0, "seed: must be non-negative")
    need(cfg.fs > 0, "fs: must be positive")
    need(cfg.horizon_s > 0, "horizon_s: must be positive")
    nyq = cfg.fs / 2
    need(0 < cfg.ring.frequency_hz < nyq, f"ring.frequency_hz: must lie in (0, {nyq})")
    need(cfg.ring.gain > 0, "ring.gain: must be positive")
    s = cfg.schedule
    need(s.mean_period_s > 0, "schedule.mean_period_s: must be positive")
    need(0 < s.silence_ratio < 1, "schedule.silence_ratio: must lie in (0, 1)")
    need(s.grid_s > 0 and s.grid_s * cfg.fs >= 1, "schedule.grid_s: must cover at least one sample")
    need(s.amplitude > 0, "schedule.amplitude: must be positive")
    need(s.beta_amp >= 0, "schedule.beta_amp: must be non-negative")
    need(cfg.plant.settle_s > 0, "plant.settle_s: must be positive")
    need(cfg.plant.order in (1, 2), "plant.order: must be 1 or 2")
    need(cfg.plant.sigma_v >= 0, "plant.sigma_v: must be non-negative")
    a = cfg.attacker
    need(a.kind in ("none", "t1", "t2", "t3"), "attacker.kind: must be none, t1, t2 or t3")
    need(a.detector in ("oracle", "qcd"), "attacker.detector: must be oracle or qcd")
    need(0 < a.f_start_hz <= a.f_end_hz < nyq, f"attacker frequencies: need 0 < f_start <= f_end < {nyq}")
    need(a.amplitude > 0, "attacker.amplitude: must be positive")
    need(a.tau_attack_s > 0, "attacker.tau_attack_s: must be positive")
    need(0 <= a.cancel_gain <= 1, "attacker.cancel_gain: must lie in [0, 1]")
    need(a.kind == "t3" or a.cancel_gain == 0, "attacker.cancel_gain: only a t3 attacker cancels")
    need(a.delay_samples >= 0, "attacker.delay_samples: must be non-negative")
    need(0 < a.alpha < 1 and 0 < a.hazard < 1, "attacker.alpha/hazard: must lie in (0, 1)")
    d = cfg.detector
    need(d.window_T >= 1, "detector.window_T: must be at least 1")
    need(d.threshold >= 0, "detector.threshold: must be non-negative")
    need(0 < d.calibration_quantile < 1, "detector.calibration_quantile: must lie in (0, 1)")
    need(d.calibration_runs >= 100, "detector.calibration_runs: need at least 100")
    r = cfg.resilient
    need(r.N >= 2, "resilient.N: must be at least 2")
    need(r.window_T >= 1, "resilient.window_T: must be at least 1")
    need(r.beta_freq > 0 and r.beta_excess > 0, "resilient thresholds: must be positive")
    need(0 < r.max_hz <= nyq, f"resilient.max_hz: must lie in (0, {nyq}]")
    q = cfg.qcd
    need(q.A > 0 and q.sigma > 0, "qcd.A/sigma: must be positive")
    need(0 < q.rho < 1, "qcd.rho: must lie in (0, 1)")
    need(len(q.alphas) > 0 and all(0 < x < 1 for x in q.alphas), "qcd.alphas: each must lie in (0, 1)")
    need(q.K >= 1 and q.trials >= 1, "qcd.K/trials: must be positive")
    f = cfg.rfid
    need(f.carrier_hz < f.fs / 2, "rfid.carrier_hz: must be below rfid.fs / 2")
    need(all(k >= 0 for k in f.kappa_eve), "rfid.kappa_eve: must be non-negative")
    need(0 < f.fpr < 1, "rfid.fpr: must lie in (0, 1)")
    return p


def check_objects(build) -> None:
    """Run ``build()`` and convert any package error into a :class:`ConfigError`."""
    try:
        build()
    except ConfigError:
        raise
    except PycraError as exc:
        raise ConfigError([str(exc)]) from exc

