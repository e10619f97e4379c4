"""One-axis-at-a-time ablations of the regularizer on top of ER."""
from _common import base_parser, summarize
from starcl.harness.config import RunConfig
from starcl.harness.train import ABLATION_AXES, run_ablation_suite


def main():
    p = base_parser(__doc__)
    p.add_argument("--axes", default=",".join(ABLATION_AXES))
    args = p.parse_args()
    base = RunConfig().with_star()
    for axis in args.axes.split(","):
        print(f"-- {axis}")
        out = args.out / axis if args.out else None
        results = run_ablation_suite(base, [axis], range(args.seeds), output_dir=out)
        for value in ABLATION_AXES[axis]:
            summarize(f"{axis}={value}", [r for cell, r in results if cell[axis] == value])


if __name__ == "__main__":
    main()
