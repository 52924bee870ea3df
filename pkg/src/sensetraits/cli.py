"""Command-line entry point: ``sensetraits <stage|run|synth> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, PipelineConfig
from .pipeline import LockError, StageError, Workspace, configure_logging, run_pipeline, run_stage
from .synth import NOISE_LEVELS, SynthConfig, gen_cohort
from .targets import TRAITS

log = logging.getLogger("sensetraits.cli")

CELL_STAGES = ("select", "tune", "evaluate")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", required=True, help="pipeline config (YAML)")
    p.add_argument("--output-dir", help="artifact directory (overrides config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--tz", help="IANA time zone for day boundaries")
    p.add_argument("--min-days", type=int, help="minimum event days per modelable user")
    p.add_argument("--folds", type=int, help="cross-validation folds k")
    p.add_argument("--f1", choices=["macro", "positive", "weighted"])
    p.add_argument("--paper-mode", action="store_true",
                   help="select and tune once on all users, then cross-validate (non-nested)")
    p.add_argument("--fold-local-thresholds", action="store_true",
                   help="recompute class thresholds on each training fold")
    p.add_argument("--rfe-step", type=float)
    p.add_argument("--bo-budget", type=int)
    p.add_argument("--bo-init", type=int)
    p.add_argument("--scheme", dest="schemes", action="append", choices=["binary", "ternary"])
    p.add_argument("--format", dest="formats", action="append", choices=["csv", "json", "md"])
    p.add_argument("--reference", help="reference population stats CSV")
    p.add_argument("--key", help="questionnaire scoring key CSV")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_cell_filters(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trait", choices=TRAITS)
    p.add_argument("--model", choices=["rf", "gbt"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sensetraits", description="phone activity to personality pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    for name, helptext in [("run", "run every stage"), ("ingest", "validate raw inputs"),
                           ("featurize", "build the feature matrix"), ("targets", "score traits and label"),
                           ("select", "recursive feature elimination"), ("tune", "Bayesian optimization"),
                           ("evaluate", "cross-validated F1 per cell"), ("report", "tables and curves")]:
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name in CELL_STAGES:
            _add_cell_filters(p)

    p = sub.add_parser("synth", help="write a synthetic cohort")
    p.add_argument("--out", required=True, help="directory for events.csv, daily_metrics.csv, bfi.csv")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--noise", choices=sorted(NOISE_LEVELS), default="medium")
    p.add_argument("--n-users", type=int, default=144)
    p.add_argument("--n-days", type=int, default=60)
    p.add_argument("--null", action="store_true", help="set every planted effect to zero")
    p.add_argument("--synth-config", help="YAML with SynthConfig fields (overrides presets)")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    import yaml

    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        d = yaml.safe_load(fh) or {}
    if args.seed is not None:
        d["seed"] = args.seed
    if args.output_dir:
        d["output_dir"] = str(Path(args.output_dir).resolve())
    for flag, key in [("tz", "tz"), ("min_days", "min_days"), ("folds", "folds"), ("f1", "f1"),
                      ("schemes", "schemes"), ("formats", "report_formats")]:
        v = getattr(args, flag)
        if v is not None:
            d[key] = v
    if args.fold_local_thresholds:
        d["fold_local_thresholds"] = True
    rfe = dict(d.get("rfe") or {})
    if args.paper_mode:
        rfe["mode"] = "paper"
    if args.rfe_step is not None:
        rfe["step"] = args.rfe_step
    d["rfe"] = rfe
    bo = dict(d.get("bo") or {})
    if args.bo_budget is not None:
        bo["budget"] = args.bo_budget
    if args.bo_init is not None:
        bo["init_points"] = args.bo_init
    d["bo"] = bo
    inputs = dict(d.get("inputs") or {})
    for flag in ("reference", "key"):
        v = getattr(args, flag)
        if v is not None:
            inputs[flag] = str(Path(v).resolve())
    d["inputs"] = inputs
    return PipelineConfig.from_dict(d, base_dir=path.parent)


def _cmd_synth(args) -> int:
    if args.synth_config:
        import yaml

        with open(args.synth_config) as fh:
            d = yaml.safe_load(fh) or {}
        d.setdefault("seed", args.seed)
        cfg = SynthConfig.from_dict(d)
    else:
        cfg = SynthConfig.preset(args.noise, seed=args.seed, n_users=args.n_users, n_days=args.n_days)
    if args.null:
        cfg = cfg.null()
    cohort = gen_cohort(cfg)
    paths = cohort.write(args.out)
    log.info("wrote %d users, %d events to %s", len(cohort.users), len(cohort.cohort.events), args.out)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(logging.DEBUG if args.verbose else logging.INFO)
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        cfg = load_config(args)
        if args.command == "run":
            manifest = run_pipeline(cfg)
            log.info("%d artifacts, manifest at %s", len(manifest.artifacts),
                     Path(cfg.output_dir) / "manifest.json")
            return 0
        ws = Workspace(cfg.output_dir)
        with ws.lock():
            if args.command in CELL_STAGES:
                # --scheme already narrows cfg.schemes
                run_stage(cfg, args.command, ws, trait=args.trait, model=args.model)
            else:
                run_stage(cfg, args.command, ws)
        for p in ws.written:
            print(p)
        return 0
    except (StageError, ConfigError, LockError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
