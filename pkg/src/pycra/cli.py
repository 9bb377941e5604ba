"""Command-line entry point.

Exit status: 0 on success, 2 on invalid input (bad arguments or
configuration), 1 on any other failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ScenarioConfig, load_config
from .errors import ConfigError, ParameterError, PycraError, UndefinedRocError
from .experiments import export_csv, rfid_experiment, run_scenario, simulate_run, write_rows
from .metrics import roc_curve
from .presets import PRESETS, run_preset
from .qcd import QcdProblem, calibrate_problem, simulate_multi_challenge, verify_theorem1, verify_theorem2
from .sigcore import RngStream

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _out(args) -> Path:
    p = Path(args.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_simulate(args) -> int:
    cfg = _config(args)
    run = simulate_run(cfg, RngStream(cfg.seed))
    path = run.to_csv(_out(args) / "trace.csv")
    print(f"wrote {path} ({cfg.n_samples} samples)")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args)
    if args.trials is not None:
        cfg = cfg.replace(detector__calibration_runs=args.trials)
    run = run_scenario(cfg)
    path = export_csv(run.report, _out(args) / "detections.csv")
    for w in run.report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    c = run.report.counts()
    print(f"wrote {path}; threshold {run.report.threshold:.6g}; "
          f"alarms {int(run.report.alarms().sum())}/{len(run.report.evaluated)}; "
          f"tp={c['tp']} fp={c['fp']} tn={c['tn']} fn={c['fn']}")
    return EXIT_OK


def cmd_resilient(args) -> int:
    cfg = _config(args)
    if cfg.detector.threshold == 0:
        cfg = cfg.replace(detector__threshold=1.0)  # the time-domain alarm is not needed here
    run = run_scenario(cfg, resilient=True)
    out = _out(args)
    if run.post_frames is not None:
        export_csv(run.post_frames, out / "track.csv")
        est = [f.estimate_hz for f in run.post_frames]
    elif run.track is not None:
        run.track.spectrogram_csv(out / "spectrogram.csv")
        run.track.track_csv(out / "track.csv")
        est = list(run.track.estimates())
    else:
        print("horizon too short for one DFT window; nothing written", file=sys.stderr)
        return EXIT_RUNTIME
    vals = np.array([np.nan if e is None else e for e in est], dtype=float)
    med = np.nanmedian(vals) if np.isfinite(vals).any() else float("nan")
    print(f"wrote {len(vals)} frames to {out}; median estimate {med:.3f} Hz")
    return EXIT_OK


def cmd_qcd_verify(args) -> int:
    cfg = _config(args)
    q = cfg.qcd
    trials = args.trials or q.trials
    problem = QcdProblem(q.A, q.sigma, q.rho)
    rng = RngStream(cfg.seed)
    out = _out(args)
    t1 = verify_theorem1(rng.child(1), problem, q.alphas, q.K, trials, q.calibration_trials)
    rows = [r for prof in t1.profiles for r in prof.rows()]
    write_rows(out / "delay_profile.csv", list(rows[0]), (r.values() for r in rows))
    print(f"delay vs false alarm: slope {t1.slope:.3f} over alphas {list(q.alphas)}")
    for note in t1.warnings:
        print(f"warning: {note}", file=sys.stderr)
    t2 = verify_theorem2(rng.child(2), problem, q.beta_amp, q.K, min(q.alphas), trials, q.calibration_trials)
    write_rows(out / "amplitude_scaling.csv", ["beta", "K", "p_base", "lo_base", "hi_base", "p_scaled",
                                               "lo_scaled", "hi_scaled", "overlap"],
               [(t2.beta, t2.K, *t2.base, *t2.scaled, t2.overlap)])
    print(f"amplitude scaling beta={t2.beta}: base {t2.base[0]:.4f}, scaled {t2.scaled[0]:.4f}, "
          f"CIs overlap: {t2.overlap}")
    cal = calibrate_problem(rng.child(3), problem, max(q.alphas), q.calibration_trials)
    multi = simulate_multi_challenge(rng.child(4), cal, [1, 5, 20], min(trials, 10_000))
    write_rows(out / "multi_challenge.csv", ["K", "per_challenge", "empirical", "ci_low", "ci_high", "bound"],
               [(m.K, m.per_challenge, m.empirical, *m.ci, m.bound) for m in multi])
    for m in multi:
        print(f"K={m.K}: caught {m.empirical:.4f} (bound {m.bound:.4f})")
    return EXIT_OK


def _read_scores(path: Path):
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        score_key = next((k for k in ("score", "g_max") if k in fields), None)
        label_key = next((k for k in ("label", "truth_attacked") if k in fields), None)
        if score_key is None or label_key is None:
            raise ParameterError(f"{path}: need columns score,label (or g_max,truth_attacked)")
        scores, labels = [], []
        for i, row in enumerate(reader, 2):
            if row[label_key] in ("", None) or row[score_key] in ("", "nan"):
                continue
            try:
                scores.append(float(row[score_key]))
                labels.append(int(float(row[label_key])) != 0)
            except ValueError as exc:
                raise ParameterError(f"{path}:{i}: {exc}") from exc
    return np.array(scores), np.array(labels, dtype=bool)


def cmd_roc(args) -> int:
    path = Path(args.scores)
    if not path.exists():
        raise ParameterError(f"{path}: no such file")
    scores, labels = _read_scores(path)
    curve = roc_curve(scores, labels)
    out = export_csv(curve, _out(args) / "roc.csv")
    print(f"AUC {curve.auc:.6f}; wrote {out}")
    return EXIT_OK


def cmd_rfid(args) -> int:
    cfg = _config(args)
    pts = rfid_experiment(cfg, runs=args.trials)
    path = export_csv(pts, _out(args) / "rfid.csv")
    for p in pts:
        print(f"kappa_eve={p.kappa_eve:g}: alarm rate {p.alarm_rate:.3f} [{p.ci_low:.3f}, {p.ci_high:.3f}]")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_preset(args) -> int:
    seed = 0 if args.seed is None else args.seed
    res = run_preset(args.name, Path(args.out_dir) / args.name, seed, args.trials)
    for a in res.anchors:
        print(f"[{'ok' if a.holds else 'MISS'}] {a.name}: {a.measured!r}  ({a.expectation})")
    print(f"wrote {res.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS lets the flags appear before or after the subcommand without clobbering each other
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the configured seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for output files (default: .)")
    common.add_argument("--trials", type=int, default=argparse.SUPPRESS,
                        help="override the number of Monte Carlo trials")

    p = argparse.ArgumentParser(prog="pycra", description="Challenge-response sensor security simulations.",
                                parents=[common])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("simulate", cmd_simulate, "simulate a scenario and write the per-sample trace"),
        ("detect", cmd_detect, "run the residual detector over a scenario"),
        ("resilient", cmd_resilient, "run the spectral tracker over a scenario"),
        ("qcd-verify", cmd_qcd_verify, "Monte Carlo checks of the change-detection delay bounds"),
        ("rfid", cmd_rfid, "eavesdropper detection over a grid of coupling values"),
    ):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.add_argument("config", help="scenario configuration file")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("roc", help="ROC curve from a CSV of scores and labels", parents=[common])
    sp.add_argument("scores")
    sp.set_defaults(func=cmd_roc)
    sp = sub.add_parser("preset", help="regenerate a named reference data set", parents=[common])
    sp.add_argument("name", choices=sorted(PRESETS, key=lambda s: int(s[3:])))
    sp.set_defaults(func=cmd_preset)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_INVALID
    for key, default in (("seed", None), ("out_dir", "."), ("trials", None)):
        if not hasattr(args, key):
            setattr(args, key, default)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_INVALID
    except (ParameterError, UndefinedRocError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (PycraError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
