"""Miniature end-to-end training run (about a minute on a laptop CPU).

Trains the full agent on a shrunken dot-chase for a few hundred steps,
prints the metrics stream highlights, evaluates the checkpoint, and
emits the CSV plot data. For the real desk-scale run use the CLI:

    modrssm train --config configs/smoke_dot_chase.cfg --out runs/full-seed0

Run:  python3 demos/05_train_dot_chase.py
"""

import json
from pathlib import Path

from modrssm import envs, report, trainer
from modrssm.config import RunConfig

out = Path("/tmp/demo_run")
run = RunConfig({
    "env.episode_limit": 40,
    "model.z_cat": 8, "model.z_cls": 8, "model.d_cat": 8, "model.d_cls": 8,
    "model.h_dim": 64, "model.enc_channels": (8, 16, 24),
    "model.mlp_units": 64, "model.mlp_layers": 1, "model.buckets": 63,
    "policy.units": 64, "policy.layers": 1,
    "train.total_env_steps": 600, "train.prefill_steps": 200, "train.train_ratio": 0.1,
    "train.batch_size": 4, "train.batch_length": 10, "train.imag_starts": 16,
    "train.checkpoint_every": 0,
    "seed": 0,
})
summary = trainer.train(run, out)
print("summary:", json.dumps(summary, indent=2))

records = [json.loads(l) for l in open(out / "metrics.jsonl") if "event" not in l]
first, last = records[0], records[-1]
print(f"\nreconstruction loss {first['loss/rec']:.1f} -> {last['loss/rec']:.1f} "
      f"over {last['update']} updates")
print(f"posterior-prior KL (pre-clip) {first['loss/kl_z_pre'] + first['loss/kl_d_pre']:.2f} "
      f"-> {last['loss/kl_z_pre'] + last['loss/kl_d_pre']:.2f}")

result = trainer.evaluate(out / "checkpoint_final.ckpt", episodes=10, seed=99)
baseline = envs.baseline_returns(run.env_config(), episodes=50, seed=1)
print(f"\ncheckpoint eval over 10 episodes: mean {result['mean']:.2f} "
      f"(random baseline {baseline[0]:.2f})")
print("(600 steps is far too few to beat the baseline; the smoke config does)")

paths = report.emit_report([out], "/tmp/demo_report")
print("\nplot data:", {k: str(v) for k, v in paths.items()})
