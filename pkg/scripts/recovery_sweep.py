"""Run the full pipeline on synthetic cohorts over several seeds.

Prints per-seed binary mean F1 for every (trait, model) cell, the median over
seeds, and wall time per run. With --null every planted effect is zero.

    python scripts/recovery_sweep.py --noise low --seeds 0 1 2 3 4
    python scripts/recovery_sweep.py --null --seeds 0-9 --json null.json
"""

from __future__ import annotations

import argparse
import json
import logging
import tempfile
import time
from collections import defaultdict
from pathlib import Path

import numpy as np
import yaml

from sensetraits.cli import main as cli_main
from sensetraits.pipeline import configure_logging
from sensetraits.targets import TRAITS

REPO = Path(__file__).resolve().parent.parent


def parse_seeds(tokens: list[str]) -> list[int]:
    out = []
    for tok in tokens:
        if "-" in tok:
            a, b = tok.split("-")
            out += range(int(a), int(b) + 1)
        else:
            out.append(int(tok))
    return out


def run_one(work: Path, seed: int, noise: str, null: bool, profile: dict, n_users: int,
            n_days: int, scheme: str) -> tuple[dict, float]:
    data = work / f"data_{seed}"
    argv = ["synth", "--out", str(data), "--seed", str(seed), "--noise", noise,
            "--n-users", str(n_users), "--n-days", str(n_days)]
    if null:
        argv.append("--null")
    if cli_main(argv) != 0:
        raise SystemExit("synth failed")
    cfg = dict(profile, seed=seed, output_dir=str(work / f"out_{seed}"),
               inputs={"events": str(data / "events.csv"), "metrics": str(data / "daily_metrics.csv"),
                       "bfi": str(data / "bfi.csv")})
    path = work / f"config_{seed}.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    t0 = time.perf_counter()
    if cli_main(["run", "-c", str(path)]) != 0:
        raise SystemExit(f"pipeline failed for seed {seed}")
    elapsed = time.perf_counter() - t0
    scores = {}
    for rep in sorted((work / f"out_{seed}" / "evaluate").glob(f"*_{scheme}_*.json")):
        d = json.loads(rep.read_text())
        scores[(d["trait"], d["model"])] = d["mean_f1"]
    return scores, elapsed


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", nargs="+", default=["0-4"], help="seeds or ranges like 0-9")
    ap.add_argument("--noise", default="low", choices=["none", "low", "medium", "high"])
    ap.add_argument("--null", action="store_true")
    ap.add_argument("--config", default=str(REPO / "configs" / "acceptance.yaml"),
                    help="profile YAML; its seed, inputs and output_dir are replaced")
    ap.add_argument("--n-users", type=int, default=144)
    ap.add_argument("--n-days", type=int, default=60)
    ap.add_argument("--scheme", default="binary", choices=["binary", "ternary"])
    ap.add_argument("--workdir", help="keep artifacts here instead of a temp dir")
    ap.add_argument("--json", help="write per-seed results to this file")
    args = ap.parse_args(argv)

    profile = yaml.safe_load(Path(args.config).read_text())
    for k in ("seed", "inputs", "output_dir"):
        profile.pop(k, None)
    seeds = parse_seeds(args.seeds)

    with tempfile.TemporaryDirectory() as tmp:
        work = Path(args.workdir or tmp)
        work.mkdir(parents=True, exist_ok=True)
        per_cell = defaultdict(list)
        times = []
        for seed in seeds:
            scores, elapsed = run_one(work, seed, args.noise, args.null, profile, args.n_users,
                                      args.n_days, args.scheme)
            configure_logging(logging.WARNING)
            times.append(elapsed)
            cells = " ".join(f"{t}/{m}={v:.3f}" for (t, m), v in sorted(scores.items()))
            print(f"seed {seed}: {elapsed:6.1f}s  {cells}", flush=True)
            for k, v in scores.items():
                per_cell[k].append(v)

    label = "null" if args.null else f"noise={args.noise}"
    print(f"\nmedian {args.scheme} mean F1 over {len(seeds)} seeds ({label})")
    models = sorted({m for _, m in per_cell})
    print("trait  " + "  ".join(f"{m:>6}" for m in models))
    for t in TRAITS:
        print(f"{t:5}  " + "  ".join(f"{np.median(per_cell[(t, m)]):6.3f}" for m in models))
    print(f"wall time per run: max {max(times):.1f}s, mean {np.mean(times):.1f}s")
    if args.json:
        Path(args.json).write_text(json.dumps({
            "seeds": seeds, "noise": args.noise, "null": args.null, "times": times,
            "scores": {f"{t}/{m}": v for (t, m), v in sorted(per_cell.items())},
        }, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
