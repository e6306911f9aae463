"""Step and layer sweeps of the full pipeline on the toy model.

    python3 scripts/run_toy_ablation.py scripts/manifests/flux_two_edits.json --out runs/ablation
"""

import argparse
from pathlib import Path

from iid.cli import ExperimentManifest, sweep


def show(summary):
    for point in summary["points"]:
        if "error" in point:
            print(f"  {summary['field']}={point['value']:>3}  {point['error']}")
        else:
            iou = point.get("mean_iou", float("nan"))
            print(f"  {summary['field']}={point['value']:>3}  mean IoU {iou:.3f}  "
                  f"L1 vs first {point['l1_vs_first']:.4f}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, nargs="+")
    p.add_argument("--layers", type=int, nargs="+")
    args = p.parse_args()

    m = ExperimentManifest.load(args.manifest)
    steps = args.steps or sorted({max(1, m.T // 6), m.T // 2, m.S})
    layers = args.layers or list(range(m.model_config().layers))
    print("pre-defined step sweep")
    show(sweep(m, "S", steps, Path(args.out) / "steps"))
    print("capture layer sweep")
    show(sweep(m, "layer", layers, Path(args.out) / "layers"))


if __name__ == "__main__":
    main()
