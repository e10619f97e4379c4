"""Divergence of later checkpoints from the first task's checkpoint, with and
without the regularizer."""
import numpy as np

from _common import base_parser
from starcl.harness.config import RunConfig
from starcl.harness.train import build_stream, rng_streams, train
from starcl.metrics import surrogate_probe, write_probe_csv
from starcl.star import StarConfig


def main():
    args = base_parser(__doc__).parse_args()
    curves = {}
    for label, cfg in (("ER", RunConfig()), ("ER + STAR", RunConfig().with_star())):
        per_seed = []
        for s in range(args.seeds):
            c = cfg.replace(seed=s)
            rec = train(c)
            rows = surrogate_probe(rec.checkpoints, build_stream(c).testsets, StarConfig(),
                                   rng_streams(s)["probe"])
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                write_probe_csv(rows, args.out / f"{label.replace(' + ', '_')}_seed{s}.csv")
            per_seed.append([[r.value for r in rows if r.task == 0 and r.variant == v]
                             for v in ("plain", "worst")])
        curves[label] = np.mean(per_seed, axis=0)
    for label, (plain, worst) in curves.items():
        print(f"{label:10s} plain " + " ".join(f"{v:8.2f}" for v in plain))
        print(f"{'':10s} worst " + " ".join(f"{v:8.2f}" for v in worst))


if __name__ == "__main__":
    main()
