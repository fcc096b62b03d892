"""The loss suite, piece by piece, with hand-checkable numbers.

Shows the symlog two-hot codec, the free-bit KL clip and its gradient
routing, the temporal-difference regulariser on a toy case, and the
harmonious weighting fixed point.

Run:  python3 demos/03_losses_and_gradients.py
"""

import numpy as np

from modrssm import losses, nn
from modrssm.nn import Tensor

# symlog two-hot codec -----------------------------------------------------
grid = losses.BucketGrid(255)
for v in (0.0, 1.0, -7.5, 64.0):
    w = losses.twohot_encode(np.array([v]), grid)
    nz = np.nonzero(w[0])[0]
    decoded = float(losses.decode_bucket_probs(w, grid)[0])
    print(f"value {v:8.2f} -> buckets {nz.tolist()} weights {np.round(w[0, nz], 3).tolist()}"
          f" -> decodes to {decoded:.4f}")

# free-bit KL --------------------------------------------------------------
rng = np.random.default_rng(0)
lp = Tensor(rng.standard_normal((1, 4, 8)) * 2, requires_grad=True)
lq = Tensor(rng.standard_normal((1, 4, 8)), requires_grad=True)
p = nn.softmax(lp, axis=-1)
q = nn.softmax(lq, axis=-1)
clipped, pre = losses.free_bit_kl(p, q, "first", free_bits=1.0)
clipped.backward()
print(f"\nKL = {pre:.3f} nats, clipped loss = {float(clipped.data):.3f}")
print(f"gradient on the stopped (posterior) side: "
      f"{'all zero' if lp.grad is None or not lp.grad.any() else 'NONZERO (bug)'}")
print(f"gradient on the live (prior) side max |g| = {np.abs(lq.grad).max():.4f}")

same, pre0 = losses.free_bit_kl(p, p, "first", free_bits=1.0)
print(f"identical distributions: KL {pre0:.1f}, loss clips to {float(same.data):.1f}")

# temporal-difference regulariser -------------------------------------------
tau = 0.1
recon = np.zeros((1, 2, 1, 2, 1))
recon[0, 1, 0, :, 0] = [0.3, 0.1]
target = np.zeros((1, 2, 1, 2, 1))
target[0, 1, 0, :, 0] = [0.2, 0.4]
reg = losses.diff_divergence_reg(Tensor(recon), target, tau)
print(f"\ntwo-pixel regulariser case: {float(reg.data):.4f} "
      f"(zero iff the predicted frame-to-frame change matches the observed one)")
print(f"perfect match: {float(losses.diff_divergence_reg(Tensor(target.copy()), target, tau).data):.4f}")

# harmonious weighting --------------------------------------------------------
w_star, scaled = losses.harmonious_weight(4.0)
print(f"\nharmonious closed form at E[L]=4: weight {w_star:.4f}, scaled loss {scaled:.4f} (< 1)")
harmony = losses.HarmoniousWeights(dtype=np.float64, terms=("img",))
opt = nn.Adam(harmony.params(), lr=0.01)
for step in range(2000):
    opt.zero_grad()
    harmony.objective({"img": Tensor(np.array(4.0))}).backward()
    opt.step()
print(f"gradient descent on the learnable weight reaches {harmony.weights()['img']:.4f} "
      f"after 2000 steps (fixed point {w_star:.4f})")
