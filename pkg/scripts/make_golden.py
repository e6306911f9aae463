"""Regenerate the stored noise-prediction tensor used by the toy-model tests.

Run once after an intentional model change:

    python3 scripts/make_golden.py
"""

from pathlib import Path

import numpy as np

from iid.io import write_tensor
from iid.toydit import Conditioning, DenoiseState, Prompt, ToyDiT, ToyDiTConfig, uniform_schedule

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "data" / "golden_eps.atns"
CONFIG = ToyDiTConfig(layers=2, heads=2, dim=16, height=4, width=4, channels=3, vocab=32, seed=7, guidance=3.0)


def golden_eps():
    model = ToyDiT(CONFIG)
    rng = np.random.default_rng(7)
    z = rng.standard_normal((4, 4, 3))
    cond = rng.standard_normal((4, 4, 3))
    state = DenoiseState(z, 5, uniform_schedule(10))
    c = Conditioning(cond, Prompt.single([3, 5, 9], CONFIG), Prompt.null(CONFIG))
    return model.predict_noise(state, c)


if __name__ == "__main__":
    GOLDEN.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(GOLDEN, golden_eps().astype(np.float32))
    print(f"wrote {GOLDEN}")
