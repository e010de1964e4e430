"""
Overfitting one clip
====================

A few hundred AdamW steps on a single 32x32 translate clip are enough for
the toy model to trace the moving shape.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from hmhi.pipeline import HMHINet, RunConfig, clip_J, make_optimizer, predict, train_step
from hmhi.synth import generate_clip

cfg = RunConfig(side=32, length=5)
clip = generate_clip("translate", 32, 32, 5, seed=0)
model = HMHINet(cfg)
opt = make_optimizer(model)

losses = []
for step in range(300):
    losses.append(train_step(clip, model, opt))
    if step % 50 == 0:
        print(f"step {step:4d}  loss {losses[-1]:.4f}")
print("training J at 0.5:", round(clip_J(clip, model), 3))

probs = predict(clip, model)
fig, axes = plt.subplots(2, 6, figsize=(12, 4))
axes[0, 0].semilogy(losses)
axes[0, 0].set_title("loss")
axes[1, 0].axis("off")
for t in range(5):
    axes[0, t + 1].imshow(clip.gt_masks[t], cmap="gray")
    axes[1, t + 1].imshow(probs[t], cmap="gray", vmin=0, vmax=1)
    axes[0, t + 1].set_title(f"gt {t}")
    axes[1, t + 1].set_title(f"pred {t}")
fig.tight_layout()
fig.savefig("overfit.png", dpi=80)
