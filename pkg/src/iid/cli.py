"""Command line entry point: ``iid <command> [flags]``.

Exit status is 0 on success, 1 on usage, IO or configuration errors and 2
when the pipeline degenerates (empty mask, single instruction, zero influence).
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .blender import blend_latents, influence_scores
from .disentangle import build_disentangle_mask, mask_stats
from .errors import (
    ConfigError,
    DegenerateMask,
    IIDError,
    NeedsMultipleInstructions,
    ZeroInfluence,
)
from .io import export_pgm, read_json, read_pgm, read_tensor, write_json, write_tensor
from .layout import Kind, MapSource, build_layout, extract_maps
from .maskgen import generate_masks
from .metrics import mask_score, pixel_l1, pixel_l2
from .pipeline import FAMILY_DEFAULTS, PipelineConfig, planted_source, random_source, run_iid
from .synth import HeadRoleProfile, SceneSpec, make_attention_fixture, random_scene
from .toydit import ToyDiT, ToyDiTConfig, tokenize

DEGENERATE = (DegenerateMask, NeedsMultipleInstructions, ZeroInfluence)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class ExperimentManifest:
    """A ``run`` / sweep description, usually loaded from JSON."""

    instructions: list
    kind: Kind = Kind.FLUX
    T: int | None = None
    S: int | None = None
    layer: int | None = None
    sigma: float = 1.0
    guidance: float | None = None
    map_source: MapSource | None = None
    seed: int = 0
    height: int = 32
    width: int = 32
    scene: dict | None = None
    # Optional ATNS file holding the source latent; default is planted/random.
    source_latent: str | None = None
    dumps: bool = False
    out: str | None = None
    model: dict = field(default_factory=dict)

    KEYS = (
        "instructions", "kind", "T", "S", "layer", "sigma", "guidance", "map_source", "seed",
        "height", "width", "scene", "source_latent", "dumps", "out", "model",
    )
    MODEL_KEYS = ("layers", "heads", "dim", "channels", "vocab", "seed", "tied_fraction")

    def __post_init__(self):
        self.kind = Kind(self.kind)
        if self.map_source is not None:
            self.map_source = MapSource(self.map_source)
        d = FAMILY_DEFAULTS[self.kind]
        self.T = d["T"] if self.T is None else int(self.T)
        self.S = d["S"] if self.S is None else int(self.S)
        self.guidance = d["guidance"] if self.guidance is None else float(self.guidance)
        if not self.instructions:
            raise ConfigError("manifest lists no instructions")
        unknown = set(self.model) - set(self.MODEL_KEYS)
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        if self.scene is not None:
            self.height, self.width = int(self.scene["height"]), int(self.scene["width"])

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.KEYS)
        if unknown:
            raise ConfigError(f"unknown manifest keys: {sorted(unknown)}")
        if "instructions" not in d:
            raise ConfigError("manifest needs 'instructions'")
        try:
            return cls(**d)
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(f"bad manifest: {e}") from e

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(read_json(path))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.KEYS}
        d["kind"] = self.kind.value
        d["map_source"] = None if self.map_source is None else self.map_source.value
        return d

    def model_config(self):
        return ToyDiTConfig(
            kind=self.kind, height=self.height, width=self.width, guidance=self.guidance,
            **self.model,
        )

    def pipeline_config(self):
        return PipelineConfig(
            T=self.T, S=self.S, layer=self.layer, sigma=self.sigma, source=self.map_source,
            seed=self.seed,
        )

    def scene_spec(self):
        return None if self.scene is None else SceneSpec.from_dict(self.scene)

    def token_lists(self, vocab):
        return [tokenize(i, vocab) for i in self.instructions]


def execute(manifest, out):
    """Run one manifest and write its artifacts to ``out``; returns the report dict."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    mcfg, pcfg = manifest.model_config(), manifest.pipeline_config()
    pcfg.capture_layer(mcfg)
    model = ToyDiT(mcfg)
    tokens = manifest.token_lists(mcfg.vocab)
    scene = manifest.scene_spec()
    if manifest.source_latent is not None:
        source = read_tensor(manifest.source_latent).astype(np.float64)
    elif scene is not None:
        source = planted_source(model, scene.region_masks(), tokens, manifest.seed)
    else:
        source = random_source(mcfg, manifest.seed)

    res = run_iid(model, source, tokens, pcfg)
    write_tensor(out / "latent.atns", res.latent.astype(np.float32))
    report = {"manifest": manifest.to_dict(), "instructions": len(tokens)}
    if res.masks is None:
        report["bypass"] = True
        write_json(out / "report.json", report)
        return report

    write_tensor(out / "composite.atns", res.composite_latent.astype(np.float32))
    truth = scene.region_masks() if scene is not None else None
    entries = []
    for m in res.masks:
        i = m.instruction
        export_pgm(m.mask, out / f"mask_{i}.pgm")
        write_tensor(out / f"mask_{i}.atns", m.mask.astype(np.uint8))
        write_tensor(out / f"fused_{i}.atns", m.fused_grid.astype(np.float32))
        entry = {"instruction": i, "threshold": float(m.threshold), "cells": int(m.mask.sum())}
        if truth is not None and i < len(truth):
            entry["score"] = mask_score(m.mask, truth[i]).to_dict()
        entries.append(entry)
        if manifest.dumps:
            write_tensor(out / f"attention_{i}.atns", res.branch_attention[i].astype(np.float32))
            write_tensor(out / f"maps_{i}.atns", res.stacks[i].astype(np.float32))
    report.update(
        bypass=False,
        influence=res.report.to_dict(),
        masks=entries,
        overlap_cells=int((res.overlap >= 2).sum()),
        attention_mask=mask_stats(res.attention_mask),
    )
    if truth is not None:
        report["mean_iou"] = float(np.mean([e["score"]["iou"] for e in entries if "score" in e]))
    write_json(out / "report.json", report)
    return report


def _threads():
    try:
        return max(1, int(os.environ.get("IID_THREADS", "1")))
    except ValueError:
        raise ConfigError("IID_THREADS must be an integer")


def _sweep_point(args):
    manifest, out = args
    try:
        return execute(manifest, out), None
    except DEGENERATE as e:
        return None, f"{type(e).__name__}: {e}"


def sweep(manifest, field_name, values, out):
    if not values:
        raise ConfigError("sweep needs at least one value")
    mcfg = manifest.model_config()
    points = []
    for v in values:
        m = replace(manifest, **{field_name: v})
        if field_name == "S":
            PipelineConfig(T=m.T, S=v)
        else:
            m.pipeline_config().capture_layer(mcfg)
        points.append((m, Path(out) / f"{field_name}_{v}"))

    threads = _threads()
    if threads > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(points))) as pool:
            results = list(pool.map(_sweep_point, points))
    else:
        results = [_sweep_point(p) for p in points]

    first = None
    summary = {"field": field_name, "points": []}
    for v, (m, d), (report, err) in zip(values, points, results):
        entry = {"value": v, "dir": d.name}
        if err is not None:
            entry["error"] = err
        else:
            latent = read_tensor(d / "latent.atns").astype(np.float64)
            if first is None:
                first = latent
            entry["l1_vs_first"] = pixel_l1(latent, first)
            entry["l2_vs_first"] = pixel_l2(latent, first)
            if "mean_iou" in report:
                entry["mean_iou"] = report["mean_iou"]
                entry["iou"] = [e["score"]["iou"] for e in report["masks"]]
        summary["points"].append(entry)
    write_json(Path(out) / "summary.json", summary)
    if all("error" in e for e in summary["points"]):
        raise DegenerateMask("every sweep point degenerated")
    return summary


def _load_mask(path):
    path = Path(path)
    arr = read_pgm(path) if path.suffix == ".pgm" else read_tensor(path)
    if arr.ndim != 2:
        raise ConfigError(f"{path}: a mask must be 2-D")
    return arr > (127 if path.suffix == ".pgm" else 0)


def cmd_synth(a):
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = random_scene(a.height, a.width, a.n, a.seed)
    profile = HeadRoleProfile(a.edit_fraction, a.global_fraction, a.eta, a.hot_cells)
    stacks = make_attention_fixture(scene, profile, a.heads)
    write_json(out / "scene.json", scene.to_dict())
    for i, (s, t) in enumerate(zip(stacks, scene.region_masks())):
        write_tensor(out / f"maps_{i}.atns", s.astype(np.float32))
        export_pgm(t, out / f"truth_{i}.pgm")
    return 0


def cmd_masks(a):
    if len(a.dumps) < 2:
        raise NeedsMultipleInstructions("mask generation needs at least two dumps")
    stacks = []
    for i, path in enumerate(a.dumps):
        arr = read_tensor(path).astype(np.float64)
        if a.input == "maps":
            if arr.ndim != 3:
                raise ConfigError(f"{path}: head maps must be (J, H, W)")
            stacks.append(arr)
            continue
        if a.height is None or a.width is None or not a.n_p:
            raise UsageError("--input attention needs --height, --width and --n-p")
        n_p = a.n_p[i] if len(a.n_p) > 1 else a.n_p[0]
        lay = build_layout(a.kind, [n_p], a.n_v, a.height * a.width)
        src = MapSource(a.source) if a.source else None
        src = src or (MapSource.ZP if Kind(a.kind) is Kind.FLUX else MapSource.ZZ)
        stacks.append(extract_maps(arr, lay, src, 0, a.height, a.width, not a.not_initial))
    masks, overlap = generate_masks(stacks, a.sigma)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for m in masks:
        export_pgm(m.mask, out / f"mask_{m.instruction}.pgm")
        write_tensor(out / f"mask_{m.instruction}.atns", m.mask.astype(np.uint8))
        write_tensor(out / f"fused_{m.instruction}.atns", m.fused_grid.astype(np.float32))
    report = {
        "thresholds": [float(m.threshold) for m in masks],
        "cells": [int(m.mask.sum()) for m in masks],
        "overlap_cells": int((overlap >= 2).sum()),
        "influence": influence_scores(stacks, masks).to_dict(),
    }
    write_json(out / "masks.json", report)
    return 0


def cmd_blend(a):
    if len(a.latents) != len(a.masks):
        raise UsageError("give one mask per latent")
    latents = [read_tensor(p).astype(np.float64) for p in a.latents]
    out = blend_latents(latents, [_load_mask(p) for p in a.masks])
    write_tensor(a.out, out.astype(np.float32))
    return 0


def cmd_attnmask(a):
    masks = [_load_mask(p) for p in a.masks]
    if len(a.n_p) != len(masks):
        raise UsageError("give one --n-p per mask")
    order = a.order if a.order else list(range(len(masks)))
    if sorted(order) != list(range(len(masks))):
        raise UsageError(f"--order {order} is not a permutation")
    n_z = masks[0].size
    layout = build_layout(a.kind, [a.n_p[i] for i in order], a.n_v, n_z, order)
    block = Kind(a.kind) is Kind.FLUX if a.block is None else a.block == "on"
    allowed = build_disentangle_mask(layout, masks, None, block)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "attention_mask.atns", allowed.astype(np.uint8))
    write_json(out / "attention_mask.json", mask_stats(allowed))
    return 0


def cmd_run(a):
    m = ExperimentManifest.load(a.manifest)
    if a.seed is not None:
        m = replace(m, seed=a.seed)
    out = a.out or m.out
    if out is None:
        raise UsageError("no output directory (use --out or the manifest's 'out')")
    execute(m, out)
    return 0


def cmd_eval(a):
    pred, truth = Path(a.pred), Path(a.truth)
    result = {}
    load = lambda p: read_pgm(p) if p.suffix == ".pgm" else read_tensor(p)  # noqa: E731
    x, y = load(pred), load(truth)
    if x.shape != y.shape:
        raise ConfigError(f"shapes differ: {x.shape} vs {y.shape}")
    if x.ndim == 2 and x.dtype == np.uint8 and y.dtype == np.uint8:
        result["mask"] = mask_score(_load_mask(pred), _load_mask(truth)).to_dict()
    xf, yf = x.astype(np.float64), y.astype(np.float64)
    result["l1"], result["l2"] = pixel_l1(xf, yf), pixel_l2(xf, yf)
    text = json.dumps(result, indent=2, sort_keys=True)
    if a.out:
        write_json(a.out, result)
    else:
        print(text)
    return 0


def _sweep_cmd(field_name, values_attr):
    def cmd(a):
        m = ExperimentManifest.load(a.manifest)
        if a.seed is not None:
            m = replace(m, seed=a.seed)
        out = a.out or m.out
        if out is None:
            raise UsageError("no output directory (use --out or the manifest's 'out')")
        sweep(m, field_name, getattr(a, values_attr) or [], out)
        return 0

    return cmd


def build_parser():
    p = _Parser(prog="iid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a planted scene and synthetic head maps")
    s.add_argument("--out", required=True)
    s.add_argument("--height", type=int, default=32)
    s.add_argument("--width", type=int, default=32)
    s.add_argument("--n", type=int, default=2)
    s.add_argument("--heads", type=int, default=8)
    s.add_argument("--eta", type=float, default=0.0)
    s.add_argument("--hot-cells", type=int, default=0)
    s.add_argument("--edit-fraction", type=float, default=0.75)
    s.add_argument("--global-fraction", type=float, default=0.25)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("masks", help="edit masks from head maps or raw attention dumps")
    s.add_argument("dumps", nargs="*")
    s.add_argument("--out", required=True)
    s.add_argument("--input", choices=["maps", "attention"], default="maps")
    s.add_argument("--source", choices=["zp", "zz"])
    s.add_argument("--kind", choices=["flux", "omni"], default="flux")
    s.add_argument("--n-p", type=int, nargs="+")
    s.add_argument("--n-v", type=int, default=0)
    s.add_argument("--height", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--not-initial", action="store_true",
                   help="OMNI dumps from a later step (reduced query rows)")
    s.add_argument("--sigma", type=float, default=1.0)
    s.set_defaults(func=cmd_masks)

    s = sub.add_parser("blend", help="blend branch latents with their masks")
    s.add_argument("--latents", nargs="+", required=True)
    s.add_argument("--masks", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_blend)

    s = sub.add_parser("attnmask", help="build the disentangling attention mask")
    s.add_argument("--masks", nargs="+", required=True)
    s.add_argument("--n-p", type=int, nargs="+", required=True)
    s.add_argument("--kind", choices=["flux", "omni"], default="flux")
    s.add_argument("--n-v", type=int, default=0)
    s.add_argument("--order", type=int, nargs="+")
    s.add_argument("--block", choices=["on", "off"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_attnmask)

    s = sub.add_parser("run", help="run a manifest end to end on the toy model")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="score one mask or tensor against another")
    s.add_argument("pred")
    s.add_argument("truth")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    for name, flag, field_name in (("sweep-step", "--step", "S"), ("sweep-layer", "--layer", "layer")):
        s = sub.add_parser(name, help=f"rerun a manifest over several {field_name} values")
        s.add_argument("--manifest", required=True)
        s.add_argument(flag, type=int, nargs="*", dest="values")
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.set_defaults(func=_sweep_cmd(field_name, "values"))
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except DEGENERATE as e:
        print(f"iid: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except (UsageError, IIDError, OSError, ValueError) as e:
        print(f"iid: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
