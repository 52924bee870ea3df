"""Compare nested selection with select-then-cross-validate on one cohort.

Selecting features and tuning on all users before cross-validating lets the
held-out folds influence the model, so its F1 is optimistic. On a null cohort
the gap shows up directly as F1 above 0.5.

    python scripts/nested_vs_paper_mode.py --seed 0 --null
"""

from __future__ import annotations

import argparse
import json
import logging
import tempfile
from pathlib import Path

import yaml

from sensetraits.cli import main as cli_main
from sensetraits.pipeline import configure_logging
from sensetraits.targets import TRAITS

REPO = Path(__file__).resolve().parent.parent


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", default="medium", choices=["none", "low", "medium", "high"])
    ap.add_argument("--null", action="store_true")
    ap.add_argument("--config", default=str(REPO / "configs" / "acceptance.yaml"))
    args = ap.parse_args(argv)

    profile = yaml.safe_load(Path(args.config).read_text())
    for k in ("seed", "inputs", "output_dir"):
        profile.pop(k, None)
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp)
        synth = ["synth", "--out", str(work / "data"), "--seed", str(args.seed), "--noise", args.noise]
        if args.null:
            synth.append("--null")
        cli_main(synth)
        results = {}
        for mode in ("nested", "paper"):
            cfg = dict(profile, seed=args.seed, output_dir=str(work / mode),
                       inputs={"events": str(work / "data" / "events.csv"),
                               "metrics": str(work / "data" / "daily_metrics.csv"),
                               "bfi": str(work / "data" / "bfi.csv")})
            cfg["rfe"] = dict(cfg.get("rfe") or {}, mode=mode)
            path = work / f"{mode}.yaml"
            path.write_text(yaml.safe_dump(cfg))
            if cli_main(["run", "-c", str(path)]) != 0:
                raise SystemExit(f"{mode} run failed")
            configure_logging(logging.WARNING)
            for p in (work / mode / "evaluate").glob("*.json"):
                d = json.loads(p.read_text())
                results[(mode, d["trait"], d["scheme"], d["model"])] = d["mean_f1"]

    cells = sorted({k[1:] for k in results}, key=lambda c: (TRAITS.index(c[0]), c[1], c[2]))
    print(f"{'cell':22} {'nested':>7} {'paper':>7} {'gap':>7}")
    for t, s, m in cells:
        a, b = results[("nested", t, s, m)], results[("paper", t, s, m)]
        print(f"{t}_{s}_{m:14} {a:7.3f} {b:7.3f} {b - a:+7.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
