"""Run configuration: flat key = value files, variants, defaults.

Every key is declared once in ``KEYS`` with its type, default and help
text; parsing rejects unknown keys by name. ``RunConfig.apply_variant``
derives the structural flags and latent sizes for each ablation variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .diffmask import DiffConfig
from .envs import EnvConfig, n_actions
from .errors import ConfigError
from .losses import LossWeights
from .policy import PolicyConfig
from .worldmodel import LatentSpec, VariantFlags, WorldModelConfig

VARIANTS = (
    "full", "no-modulation", "no-reg", "latent-diff", "recon-diff",
    "static-split", "harmonious", "big-z-baseline", "mod-16x16",
)


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(",", " ").split())


# key -> (type parser, default, help)
KEYS: dict[str, tuple] = {
    "env.name": (str, "dot-chase", "environment: dot-chase or mini-pong"),
    "env.frame_size": (int, 32, "square frame side in pixels (>= 16)"),
    "env.episode_limit": (int, 100, "maximum steps per episode"),
    "diff.epsilon": (float, 0.001, "differencing threshold on the channel-vector L2 norm"),
    "diff.interval": (int, 1, "frame gap k used by backward differencing"),
    "diff.dilation_radius": (int, 1, "Chebyshev radius of mask dilation"),
    "diff.strategy": (str, "backward", "mask strategy: backward, moving_average, multiframe_logical"),
    "diff.window_len": (int, 4, "moving-average window length"),
    "diff.window_delta": (int, 1, "offset of the second mask in the logical AND"),
    "model.z_cat": (int, 32, "stochastic latent: number of categoricals"),
    "model.z_cls": (int, 32, "stochastic latent: classes per categorical"),
    "model.d_cat": (int, 32, "modulator latent: number of categoricals"),
    "model.d_cls": (int, 32, "modulator latent: classes per categorical"),
    "model.unimix": (float, 0.01, "uniform mixture floor for categorical outputs"),
    "model.h_dim": (int, 256, "recurrent state width"),
    "model.enc_channels": (_parse_ints, (32, 64, 128, 256), "conv widths, one per stride-2 stage"),
    "model.mlp_units": (int, 256, "hidden width of the MLP heads"),
    "model.mlp_layers": (int, 2, "hidden layers of the MLP heads"),
    "model.buckets": (int, 255, "symlog two-hot bucket count"),
    "loss.w_dyn": (float, 0.5, "dynamics KL weight"),
    "loss.w_rep": (float, 0.1, "representation KL weight"),
    "loss.reg_temperature": (float, 0.1, "softmax temperature of the temporal regulariser"),
    "loss.free_bits": (float, 1.0, "KL clipping floor in nats"),
    "policy.gamma": (float, 0.997, "discount factor"),
    "policy.lam": (float, 0.95, "lambda of the return mixture"),
    "policy.horizon": (int, 15, "imagination horizon"),
    "policy.entropy_eta": (float, 3e-4, "actor entropy bonus scale"),
    "policy.ema_decay": (float, 0.98, "critic EMA decay"),
    "policy.ema_reg": (float, 1.0, "critic EMA regulariser weight"),
    "policy.units": (int, 256, "actor/critic hidden width"),
    "policy.layers": (int, 2, "actor/critic hidden layers"),
    "opt.wm_lr": (float, 1e-4, "world-model Adam learning rate"),
    "opt.wm_eps": (float, 1e-8, "world-model Adam epsilon"),
    "opt.wm_clip": (float, 1000.0, "world-model gradient clip (global norm)"),
    "opt.ac_lr": (float, 3e-5, "actor/critic Adam learning rate"),
    "opt.ac_eps": (float, 1e-5, "actor/critic Adam epsilon"),
    "opt.ac_clip": (float, 100.0, "actor/critic gradient clip (global norm)"),
    "train.total_env_steps": (int, 20_000, "environment steps to run"),
    "train.prefill_steps": (int, 1000, "random steps before training starts"),
    "train.train_ratio": (float, 1.0, "gradient updates per environment step"),
    "train.batch_size": (int, 16, "sequences per training batch"),
    "train.batch_length": (int, 64, "steps per training sequence"),
    "train.imag_starts": (int, 256, "imagination start states per update (0 = all)"),
    "train.capacity": (int, 100_000, "replay capacity in transitions"),
    "train.checkpoint_every": (int, 2500, "steps between checkpoints"),
    "train.eval_every": (int, 0, "steps between evaluations (0 = final only)"),
    "train.eval_episodes": (int, 100, "episodes per evaluation"),
    "train.metrics_every": (int, 1, "updates between metrics records"),
    "seed": (int, 0, "master seed"),
    "variant": (str, "full", "ablation variant: " + ", ".join(VARIANTS)),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: spec[1] for k, spec in KEYS.items()}
        for key, value in self.values.items():
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value
        if merged["variant"] not in VARIANTS:
            raise ConfigError(f"unknown variant {merged['variant']!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "values", merged)
        # constructing the sub-configs validates their invariants eagerly
        self.env_config()
        self.diff_config()
        self.policy_config()
        self.loss_weights()
        self.model_config()

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, **overrides) -> "RunConfig":
        mapped = {k.replace("__", "."): v for k, v in overrides.items()}
        return RunConfig({**self.values, **mapped})

    # ------------------------------------------------------------------
    def env_config(self) -> EnvConfig:
        return EnvConfig(
            env_name=self["env.name"], frame_size=self["env.frame_size"],
            episode_limit=self["env.episode_limit"], seed=self["seed"],
        )

    def diff_config(self) -> DiffConfig:
        return DiffConfig(
            epsilon=self["diff.epsilon"], interval=self["diff.interval"],
            dilation_radius=self["diff.dilation_radius"], strategy=self["diff.strategy"],
            window_len=self["diff.window_len"], window_delta=self["diff.window_delta"],
        )

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(
            gamma=self["policy.gamma"], lam=self["policy.lam"], horizon=self["policy.horizon"],
            entropy_eta=self["policy.entropy_eta"], ema_decay=self["policy.ema_decay"],
            ema_reg=self["policy.ema_reg"],
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            w_dyn=self["loss.w_dyn"], w_rep=self["loss.w_rep"],
            reg_temperature=self["loss.reg_temperature"], free_bits=self["loss.free_bits"],
            harmonious=self["variant"] == "harmonious",
        )

    @property
    def variant(self) -> str:
        return self["variant"]

    @property
    def include_reg(self) -> bool:
        return self.variant not in ("no-reg", "big-z-baseline")

    def variant_flags(self) -> VariantFlags:
        v = self.variant
        return VariantFlags(
            no_modulation=v == "no-modulation",
            latent_difference=v == "latent-diff",
            dual_dynamic_decoder=v == "recon-diff",
            static_split_decoder=v == "static-split",
        )

    def model_config(self) -> WorldModelConfig:
        v = self.variant
        z_cat, z_cls = self["model.z_cat"], self["model.z_cls"]
        d_cat, d_cls = self["model.d_cat"], self["model.d_cls"]
        if v == "big-z-baseline":
            z_cat, z_cls = 48, 48
        if v == "mod-16x16":
            d_cat, d_cls = 16, 16
        return WorldModelConfig(
            frame_size=self["env.frame_size"], channels=3,
            n_actions=n_actions(self.env_config()),
            z_spec=LatentSpec(z_cat, z_cls, self["model.unimix"]),
            d_spec=LatentSpec(d_cat, d_cls, self["model.unimix"]),
            h_dim=self["model.h_dim"], enc_channels=tuple(self["model.enc_channels"]),
            mlp_units=self["model.mlp_units"], mlp_layers=self["model.mlp_layers"],
            n_buckets=self["model.buckets"],
            modulator_enabled=v not in ("latent-diff", "big-z-baseline"),
            flags=self.variant_flags(),
            dtype="float32",
        )

    def flat(self) -> dict:
        out = {}
        for key, value in self.values.items():
            out[key] = list(value) if isinstance(value, tuple) else value
        return out


def parse_config_text(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        parser = KEYS[key][0]
        try:
            values[key] = parser(value)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from None
    return RunConfig(values)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


def default_config_text() -> str:
    lines = ["# modrssm run configuration (key = value; '#' starts a comment)"]
    for key, (parser, default, help_text) in KEYS.items():
        shown = " ".join(str(v) for v in default) if isinstance(default, tuple) else default
        lines.append(f"{key} = {shown}  # {help_text}")
    return "\n".join(lines) + "\n"
