"""
A sliding-window memory and what a frame reads from it
======================================================

Each pyramid level keeps its own bank of past features.  A new entry goes
in every ``k`` frames and the oldest falls out once ``N`` are stored.  The
current frame attends over every stored token.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from hmhi import tensor as T
from hmhi.memory import MemoryBank, MemoryEncoder, MemoryReadout, mem_refine, memory_update
from hmhi.tensor import Rng, Tensor

rng = Rng(1)
enc = MemoryEncoder(8, rng)
feats, logits = Tensor(rng.normal((16, 8))), Tensor(rng.normal((1, 32, 32)))

# N = 3, k = 2 over ten frames
bank = MemoryBank(level=4, capacity=3, stride=2)
for t in range(10):
    memory_update(bank, feats, logits, t, enc, (4, 4))
    print(f"after frame {t}: stored frames {bank.frame_indices}")

# attention of 16 query tokens over 3 x 16 stored tokens
readout = MemoryReadout(8, rng)
with T.no_grad():
    _, scores = mem_refine(Tensor(rng.normal((16, 8))), bank, readout)
    attn = T.softmax(scores, axis=-1).data
print("rows sum to one:", np.allclose(attn.sum(axis=1), 1.0))

fig, ax = plt.subplots(figsize=(6, 2.5))
ax.imshow(attn, aspect="auto", cmap="viridis")
for b in (16, 32):
    ax.axvline(b - 0.5, color="w")
ax.set_xlabel(f"memory token (frames {bank.frame_indices})")
ax.set_ylabel("query token")
fig.tight_layout()
fig.savefig("memory_attention.png", dpi=80)
