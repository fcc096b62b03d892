"""Dynamically modulated recurrent state-space world model at desk scale.

A numpy-only stack: toy pixel environments, frame-differencing masks,
a categorical-latent world model with motion modulators, the full loss
suite, an imagination-trained actor-critic, a sequence replay buffer,
and a training/evaluation CLI. Gradients come from the minimal
reverse-mode engine in ``modrssm.nn``.
"""

__version__ = "0.1.0"
