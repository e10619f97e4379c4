"""Cross-entropy on a random 2-D slice around the final parameters, with and
without the regularizer."""
import numpy as np

from _common import base_parser
from starcl.harness.config import RunConfig
from starcl.harness.train import build_stream, rng_streams, train
from starcl.metrics import landscape_probe, write_grid_csv
from starcl.netcore import Batch


def main():
    p = base_parser(__doc__)
    p.add_argument("--grid", type=int, default=11)
    p.add_argument("--span", type=float, default=0.5)
    args = p.parse_args()
    for label, cfg in (("ER", RunConfig()), ("ER_STAR", RunConfig().with_star())):
        rises = []
        for s in range(args.seeds):
            c = cfg.replace(seed=s)
            rec = train(c)
            seen = Batch.concat(build_stream(c).testsets)
            grid = landscape_probe(rec.checkpoints[-1][1], seen, args.grid, args.span,
                                   rng_streams(s)["probe"])
            centre = grid[args.grid // 2, args.grid // 2]
            rises.append(grid.mean() - centre)
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                write_grid_csv(grid, args.span, args.out / f"{label}_seed{s}.csv")
        print(f"{label:8s} mean loss rise over the slice: {np.mean(rises):.4f}")


if __name__ == "__main__":
    main()
