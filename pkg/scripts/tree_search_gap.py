"""How often does greedy tree growth reach the depth-limited global optimum?

Draws small integer fixtures, fits greedy and exhaustive trees and compares
their training loss with a brute-force global search in exact rationals.

    python scripts/tree_search_gap.py --fixtures 200 --depth 2
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from _oracles import Problem, global_oracle, partition_loss, random_fixture  # noqa: E402
from sensetraits.trees import TreeParams, fit_tree  # noqa: E402


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fixtures", type=int, default=200)
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    for mode in ("impurity", "gradhess"):
        lam = 1.0 if mode == "gradhess" else 0.0
        greedy_hits, exhaustive_hits, gaps = 0, 0, []
        for _ in range(args.fixtures):
            X, target = random_fixture(rng, mode)
            p = Problem(X, target, mode, lam=lam)
            best = global_oracle(p, args.depth)
            g = partition_loss(p, fit_tree(X, target, TreeParams(max_depth=args.depth, mode=mode,
                                                                 lambda_l2=lam)).apply(X))
            e = partition_loss(p, fit_tree(X, target, TreeParams(max_depth=args.depth, mode=mode, lambda_l2=lam,
                                                                 search="exhaustive")).apply(X))
            greedy_hits += g == best
            exhaustive_hits += e == best
            gaps.append(float(g - best))
        print(f"{mode:9}  depth {args.depth}: greedy optimal {greedy_hits}/{args.fixtures}, "
              f"exhaustive optimal {exhaustive_hits}/{args.fixtures}, "
              f"mean greedy excess loss {np.mean(gaps):.4f} (max {np.max(gaps):.4f})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
