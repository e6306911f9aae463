"""Multi-instruction image editing by disentangling instruction influence.

The pipeline runs one denoising branch per instruction up to a pre-defined
step, derives an edit mask per instruction from head-wise attention maps,
blends the branch latents under those masks, and finishes denoising with a
composite prompt under an attention mask that keeps instructions out of each
other's regions.
"""

from .arrays import gaussian_filter, minmax_normalize, otsu_binarize, reshape_to_grid
from .blender import InfluenceReport, blend_latents, compose_instructions, influence_scores
from .disentangle import build_disentangle_mask, masked_softmax
from .layout import Kind, MapSource, TokenLayout, build_layout, extract_zp_maps, extract_zz_maps
from .maskgen import EditMask, fuse_mask, generate_masks, headwise_difference
from .pipeline import PipelineConfig, run_branch, run_iid
from .toydit import ToyDiT, ToyDiTConfig

__version__ = "0.1.0"

__all__ = [
    "EditMask", "InfluenceReport", "Kind", "MapSource", "PipelineConfig", "TokenLayout",
    "ToyDiT", "ToyDiTConfig", "blend_latents", "build_disentangle_mask", "build_layout",
    "compose_instructions", "extract_zp_maps", "extract_zz_maps", "fuse_mask",
    "gaussian_filter", "generate_masks", "headwise_difference", "influence_scores",
    "masked_softmax", "minmax_normalize", "otsu_binarize", "reshape_to_grid", "run_branch",
    "run_iid",
]
