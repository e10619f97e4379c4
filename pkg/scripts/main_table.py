"""Average accuracy and final forgetting of rehearsal baselines with and without
the regularizer, averaged over seeds."""
import csv

from _common import base_parser, summarize
from starcl.harness.config import RunConfig
from starcl.harness.train import train
from starcl.methods import MethodConfig
from starcl.star import StarConfig

SETTINGS = {
    "ER": (MethodConfig("er"), None),
    "ER + STAR": (MethodConfig("er"), StarConfig(gamma=0.01, lam=0.1)),
    "DER++": (MethodConfig("derpp"), None),
    "DER++ + STAR": (MethodConfig("derpp"), StarConfig(gamma=0.05, lam=0.05)),
}


def main():
    args = base_parser(__doc__).parse_args()
    rows = []
    for label, (method, star) in SETTINGS.items():
        recs = [train(RunConfig(seed=s, method=method, star=star)) for s in range(args.seeds)]
        a, f = summarize(label, recs)
        rows.append((label, a, f))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "main_table.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["setting", "average_accuracy", "final_forgetting"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
