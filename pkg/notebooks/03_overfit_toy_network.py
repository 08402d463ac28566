# %% [markdown]
# # Overfitting the desk-sized network on eight frames
#
# Four pristine frames from one simulated camera, four with a block-aligned
# splice from another camera. A few hundred Adam steps are enough for the
# desk-sized network to memorise both the frame labels and the block masks.
# Set STEPS lower for a quicker (and less converged) run.

# %%
import os

import numpy as np
import torch

from forgeryloc import ForgeryMask, build_variant
from forgeryloc.datagen.sources import make_signature, synthetic_video
from forgeryloc.evaluation import localization_metrics, predicted_mask
from forgeryloc.training import make_sample, run_stage, stage_config

STEPS = int(os.environ.get("STEPS", 500))
H, W = 256, 384
rects = [(0, 128, 0, 128), (128, 256, 128, 384), (0, 256, 256, 384), (0, 128, 128, 256)]
rng = np.random.default_rng(0)
frames = []
for i in range(8):
    f = synthetic_video(H, W, 1, rng, make_signature(0))[0]
    m = np.zeros((H, W))
    if i % 2:
        donor = synthetic_video(H, W, 1, rng, make_signature(2))[0]
        r0, r1, c0, c1 = rects[i // 2]
        m[r0:r1, c0:c1] = 1
        f = donor * m[..., None] + f * (1 - m[..., None])
    frames.append((f, m, i % 2))

# %%
torch.manual_seed(0)
model = build_variant("proposed")
stage = stage_config(1, optimizer="Adam", initial_lr=1e-3, decay_rate=1.0, epochs=10_000,
                     max_steps=STEPS, batch_size=4, freeze_ffe=False)
result = run_stage(model, stage, {"VCMS": [make_sample(f, ForgeryMask(m), y) for f, m, y in frames]})
print("loss", round(result.log[0]["L"], 3), "->", round(result.log[-1]["L"], 5), "after", result.steps, "steps")

# %%
for f, m, y in frames:
    pred = model.predict(f)
    line = f"label {y}  p_fake {pred['p_fake']:.3f}"
    if y:
        mask, _ = predicted_mask(pred, H, W)
        line += f"  F1 {localization_metrics(mask, ForgeryMask(m))[0]:.3f}"
    print(line)
