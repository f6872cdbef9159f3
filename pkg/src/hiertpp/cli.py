"""Command-line entry point: synth, ingest, train, score, evaluate, grad-check, experiment.

Exit codes: 0 success, 1 validation or usage error, 2 runtime error.
Log verbosity comes from HIERTPP_LOG (DEBUG, INFO, WARNING; default INFO).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .config import RunConfig
from .errors import ValidationError

log = logging.getLogger("hiertpp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _alphas(text: str) -> tuple:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad weights {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("need four comma-separated weights")
    return vals


def _common(p):
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--seed", type=int)


def _calendar_flags(p):
    p.add_argument("--work-start", type=int, dest="calendar.work_start")
    p.add_argument("--work-end", type=int, dest="calendar.work_end")
    p.add_argument("--timezone", dest="calendar.timezone")


def _train_flags(p):
    p.add_argument("--embed-dim", type=int, dest="model.embed_dim")
    p.add_argument("--hidden-dim", type=int, dest="model.hidden_dim")
    p.add_argument("--levels", choices=("both", "lower"), dest="model.levels")
    p.add_argument("--lr", type=float, dest="train.learning_rate")
    p.add_argument("--upper-lr", type=float, dest="train.upper_learning_rate")
    p.add_argument("--epochs-lower", type=int, dest="train.epochs_lower")
    p.add_argument("--epochs-upper", type=int, dest="train.epochs_upper")
    p.add_argument("--max-decode-len", type=int, dest="train.max_decode_len")


def _score_flags(p):
    p.add_argument("--alphas", type=_alphas, dest="score.alphas", help="four weights, e.g. 1,0,1,1")
    p.add_argument("--raw", action="store_const", const=False, dest="score.standardize",
                   help="combine raw sub-scores without median/IQR standardization")
    p.add_argument("--max-decode-len", type=int, dest="train.max_decode_len")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hiertpp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic train/test corpus")
    _common(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("ingest", help="CERT-style CSV logs to session JSONL")
    _common(p)
    _calendar_flags(p)
    p.add_argument("--logs", type=Path, required=True, help="directory holding the CSV files")
    p.add_argument("--out", type=Path, required=True, help="output JSONL")
    p.add_argument("--labels", type=Path, help="optional labels CSV (user,k,label) to attach")
    p.add_argument("--internal-domain", dest="calendar.internal_domain")

    p = sub.add_parser("train", help="two-stage training on benign sessions")
    _common(p)
    _calendar_flags(p)
    _train_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--curve", type=Path, help="optional training-curve CSV")

    p = sub.add_parser("score", help="fraud reports for every scorable session")
    _common(p)
    _calendar_flags(p)
    _score_flags(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--labels", type=Path)
    p.add_argument("--out", type=Path, required=True, help="fraud report CSV")

    p = sub.add_parser("evaluate", help="ROC curves and AUCs from a fraud report CSV")
    p.add_argument("--reports", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="report directory")

    p = sub.add_parser("grad-check", help="finite-difference gradient suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-seeds", type=int, default=1)

    p = sub.add_parser("experiment", help="synth + train + score + evaluate in one go")
    _common(p)
    _calendar_flags(p)
    _train_flags(p)
    p.add_argument("--alphas", type=_alphas, dest="score.alphas")
    p.add_argument("--raw", action="store_const", const=False, dest="score.standardize")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--overwrite", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: v for k, v in vars(args).items() if "." in k}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    cfg.override(overrides).validate()
    log.info("resolved config (seed %d):\n%s", cfg.seed, cfg.dumps())
    return cfg


def _attach_labels(sessions, path):
    from .ingest import read_labels
    from .sessions import Session

    labels = read_labels(path)
    return [Session(s.user, s.k, s.events, labels.get((s.user, s.k), s.label)) for s in sessions]


def cmd_synth(args) -> None:
    from .synth import synth_generate

    cfg = resolve_config(args)
    if args.seed is not None:
        cfg.synth.seed = args.seed
    paths = synth_generate(cfg.synth).write(args.out)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))


def cmd_ingest(args) -> None:
    from .ingest import ingest
    from .sessions import write_sessions

    cfg = resolve_config(args)
    sessions, stats = ingest(args.logs, cfg.calendar.calendar(), cfg.calendar.internal_domain)
    if args.labels:
        sessions = _attach_labels(sessions, args.labels)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_sessions(args.out, sessions)
    log.info("%d sessions -> %s (%s)", len(sessions), args.out, stats)


def cmd_train(args) -> None:
    from .evaluation import write_training_curve
    from .sessions import read_sessions
    from .train import train

    cfg = resolve_config(args)
    sessions = read_sessions(args.data)
    result = train(sessions, cfg.model.model_config(), cfg.train, cfg.seed, cfg.calendar.calendar())
    args.out.parent.mkdir(parents=True, exist_ok=True)
    result.model.save(args.out, {**result.checkpoint_extra(), "run": cfg.to_dict()})
    if args.curve:
        write_training_curve(args.curve, result.curve)
    log.info("saved checkpoint %s", args.out)


def cmd_score(args) -> None:
    from .model import HierModel
    from .scoring import Standardizer, score_sessions, write_reports
    from .sessions import read_sessions

    cfg = resolve_config(args)
    model, header = HierModel.load(args.model)
    sessions = read_sessions(args.data)
    if args.labels:
        sessions = _attach_labels(sessions, args.labels)
    std = None
    if cfg.score.standardize:
        saved = header.get("standardization")
        if not saved:
            raise ValidationError(f"{args.model} has no standardization statistics; use --raw")
        std = Standardizer(saved["median"], saved["iqr"])
    reports = score_sessions(model, sessions, cfg.train.max_decode_len, cfg.score.alphas, std,
                             cfg.calendar.calendar())
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_reports(args.out, reports)
    log.info("%d fraud reports -> %s", len(reports), args.out)


def cmd_evaluate(args) -> None:
    from .evaluation import write_evaluation
    from .scoring import read_reports

    reports = read_reports(args.reports)
    args.out.mkdir(parents=True, exist_ok=True)
    aucs = write_evaluation(reports, args.out)
    for name, auc in aucs.items():
        print(f"{name}\t{auc:.4f}")


def cmd_grad_check(args) -> int:
    from .gradcheck import TOLERANCE, run_suites

    seeds = range(args.seed, args.seed + args.n_seeds)
    log.info("gradient suites, seeds %s", list(seeds))
    errors = run_suites(seeds)
    ok = True
    for name, err in errors.items():
        passed = err < TOLERANCE
        ok &= passed
        print(f"{name}\tmax_rel_err={err:.3e}\t{'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_experiment(args) -> None:
    from .evaluation import run_experiment

    cfg = resolve_config(args)
    res = run_experiment(cfg, args.out, overwrite=args.overwrite)
    for name, auc in res.aucs.items():
        print(f"{name}\t{auc:.4f}")
    print(f"runtime\t{res.seconds:.1f}s")


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train, "score": cmd_score,
            "evaluate": cmd_evaluate, "grad-check": cmd_grad_check, "experiment": cmd_experiment}


def main(argv=None) -> int:
    level = os.environ.get("HIERTPP_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    started = time.perf_counter()
    try:
        code = COMMANDS[args.command](args) or 0
    except (ValidationError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # runtime failures: numeric blow-ups, I/O, bugs
        log.error("%s failed: %s: %s", args.command, type(exc).__name__, exc)
        log.debug("traceback", exc_info=True)
        return 2
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - started)
    return code


if __name__ == "__main__":
    sys.exit(main())
