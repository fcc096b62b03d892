"""Lambda-returns, return scaling and the EMA critic.

Walks the backward recursion on a hand-sized trajectory, compares the
lam = 0 collapse to one-step TD, shows the percentile-based advantage
scaling, and the geometric pull of the EMA critic.

Run:  python3 demos/04_policy_lambda_returns.py
"""

import numpy as np

from modrssm import policy
from modrssm.losses import BucketGrid

gamma, lam = 0.997, 0.95
rewards = np.array([[0.0], [1.0], [0.0], [0.0]])
values = np.array([[0.1], [0.2], [0.3], [0.2], [0.4]])
conts = np.array([[1.0], [1.0], [1.0], [0.0]])  # episode predicted to end at the last step

returns = policy.lambda_returns(rewards, values, conts, gamma, lam)
print("lambda-returns:", np.round(returns[:, 0], 4).tolist())
print("  - the final entry ignores the bootstrap value because continue = 0")
print("  - with lam = 0 the recursion collapses to one-step TD:")
print("   ", np.round(policy.lambda_returns(rewards, values, conts, gamma, 0.0)[:, 0], 4).tolist())

# percentile scaling keeps sparse-reward advantages comparable across tasks
batch = np.concatenate([np.zeros(90), np.linspace(0, 20, 10)])
scale = policy.return_scale(batch)
print(f"\nreturn batch spread (p95 - p5) = {scale:.2f}; advantage divisor = max(1, {scale:.2f})")
print(f"all-equal returns: spread {policy.return_scale(np.full(100, 0.25)):.1f} -> divisor stays 1")
print("dividing (return - value) by the spread never flips an advantage's sign.")

# EMA critic: a slow copy pulled geometrically towards the live network
rng = np.random.default_rng(0)
critic = policy.Critic(rng, 8, BucketGrid(63), units=16, layers=1, dtype=np.float64)
ema = critic.clone_ema(rng)
key = next(iter(critic.params()))
critic.params()[key].data += 1.0
start_gap = float(np.abs(critic.params()[key].data - ema.params()[key].data).mean())
for n in range(1, 51):
    policy.ema_update(critic, ema, decay=0.98)
    if n in (1, 10, 50):
        gap = float(np.abs(critic.params()[key].data - ema.params()[key].data).mean())
        print(f"after {n:3d} updates: gap/start = {gap / start_gap:.3f} (theory 0.98^{n} = {0.98**n:.3f})")
