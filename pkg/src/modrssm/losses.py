"""World-model training objectives.

Total objective: prediction (frame reconstruction + symlog two-hot reward
cross-entropy + continue BCE) plus weighted free-bit KL terms tying the
posteriors and priors of both latents together, plus an unweighted
temporal regulariser that matches the softmax distribution of predicted
inter-frame differences to that of the observed ones. An optional
harmonised mode replaces the fixed weights with learnable per-term
weights trained alongside the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, InputError
from .nn import Tensor


@dataclass(frozen=True)
class LossWeights:
    w_dyn: float = 0.5
    w_rep: float = 0.1
    reg_temperature: float = 0.1
    free_bits: float = 1.0
    harmonious: bool = False

    def __post_init__(self):
        if min(self.w_dyn, self.w_rep, self.reg_temperature, self.free_bits) <= 0:
            raise ConfigError("loss weights, temperature and free bits must be positive")


# ---------------------------------------------------------------------------
# symlog two-hot value coding
# ---------------------------------------------------------------------------
def symlog(x):
    return np.sign(x) * np.log1p(np.abs(x))


def symexp(x):
    return np.sign(x) * np.expm1(np.abs(x))


@dataclass(frozen=True)
class BucketGrid:
    """Uniform buckets in symlog space, symmetric about zero."""

    n_buckets: int = 255
    low: float = -20.0
    high: float = 20.0

    def __post_init__(self):
        if self.n_buckets < 2 or self.high <= self.low:
            raise ConfigError("bucket grid needs >= 2 strictly increasing buckets")
        if abs(self.high + self.low) > 1e-9:
            raise ConfigError("bucket grid must be symmetric about 0")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(self.low, self.high, self.n_buckets)


def twohot_encode(values: np.ndarray, grid: BucketGrid) -> np.ndarray:
    """Soft targets: weight split between the two buckets bracketing
    symlog(value), clamped to the edge buckets outside the range."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise InputError("twohot_encode requires finite values")
    y = np.clip(symlog(values), grid.low, grid.high)
    step = (grid.high - grid.low) / (grid.n_buckets - 1)
    pos = (y - grid.low) / step
    k = np.minimum(np.floor(pos).astype(np.int64), grid.n_buckets - 2)
    frac = pos - k
    out = np.zeros(values.shape + (grid.n_buckets,), dtype=np.float64)
    flat = out.reshape(-1, grid.n_buckets)
    kf = k.reshape(-1)
    ff = frac.reshape(-1)
    rows = np.arange(flat.shape[0])
    flat[rows, kf] = 1.0 - ff
    flat[rows, kf + 1] += ff
    return out


def decode_bucket_probs(probs, grid: BucketGrid):
    """Expected bucket position mapped through symexp. Accepts plain
    arrays or graph tensors (used by the critic value decode)."""
    centers = grid.centers
    if isinstance(probs, Tensor):
        expected = nn.matmul(probs.reshape(-1, grid.n_buckets), Tensor(centers[:, None].astype(probs.dtype)))
        expected = expected.reshape(*probs.shape[:-1])
        sign = Tensor(np.sign(expected.data))
        return sign * (nn.exp(expected * sign) - 1.0)
    expected = np.asarray(probs) @ centers
    return symexp(expected)


# ---------------------------------------------------------------------------
# component losses
# ---------------------------------------------------------------------------
def gaussian_frame_nll(recon: Tensor, target: np.ndarray) -> Tensor:
    """Unit-variance Gaussian negative log-likelihood up to constants:
    half the squared error summed per frame, averaged over batch/time."""
    diff = recon - Tensor(np.asarray(target, dtype=recon.dtype))
    per_frame = nn.tsum(diff * diff, axis=tuple(range(2, diff.ndim)))
    return nn.tmean(per_frame) * 0.5


def twohot_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy against precomputed two-hot target rows."""
    logp = nn.log_softmax(logits, axis=-1)
    t = Tensor(np.asarray(targets, dtype=logits.dtype))
    return -nn.tmean(nn.tsum(logp * t, axis=-1))


def binary_cross_entropy_logits(logit: Tensor, target: np.ndarray) -> Tensor:
    """Numerically stable BCE from raw logits."""
    t = Tensor(np.asarray(target, dtype=logit.dtype))
    absx = logit * Tensor(np.sign(logit.data))
    per = nn.clamp_min(logit, 0.0) - logit * t + nn.log(1.0 + nn.exp(-absx))
    return nn.tmean(per)


def categorical_kl(p: Tensor, q: Tensor) -> Tensor:
    """KL(p || q) summed over classes and categories; keeps leading dims."""
    per_class = p * (nn.log(p) - nn.log(q))
    return nn.tsum(per_class, axis=(-2, -1))


def free_bit_kl(p: Tensor, q: Tensor, stop_side: str, free_bits: float = 1.0) -> tuple[Tensor, float]:
    """Batch-mean KL(p || q) with the gradient blocked on one side and the
    mean clipped from below at ``free_bits``. Returns (clipped loss,
    pre-clip mean) so training curves can track the raw divergence."""
    if stop_side not in ("first", "second"):
        raise InputError(f"stop_side must be 'first' or 'second', got {stop_side!r}")
    a = nn.stop_gradient(p) if stop_side == "first" else p
    b = nn.stop_gradient(q) if stop_side == "second" else q
    mean_kl = nn.tmean(categorical_kl(a, b))
    return nn.clamp_min(mean_kl, free_bits), float(mean_kl.data)


def diff_divergence_reg(recon: Tensor, targets: np.ndarray, temperature: float) -> Tensor:
    """KL between softmaxed inter-frame differences of the reconstruction
    and of the observations, averaged over batch and steps t >= 2."""
    if recon.shape[1] < 2:
        raise InputError("differential divergence needs sequences of length >= 2")
    b, l = recon.shape[:2]
    flat = recon.reshape(b, l, -1)
    delta_hat = (flat[:, 1:] - flat[:, :-1]) * (1.0 / temperature)
    t = np.asarray(targets, dtype=recon.dtype).reshape(b, l, -1)
    delta_obs = (t[:, 1:] - t[:, :-1]) / temperature
    logp = nn.log_softmax(delta_hat, axis=-1)
    p = nn.exp(logp)
    logq = Tensor(_log_softmax_np(delta_obs))
    return nn.tmean(nn.tsum(p * (logp - logq), axis=-1))


def _log_softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def total_loss(parts: dict, weights: LossWeights):
    """Combines component losses: prediction terms enter unweighted, the
    KL terms carry their coefficients, and the temporal regulariser is
    added outside the bracket with coefficient exactly 1."""
    total = parts["rec"] + parts["rew"] + parts["con"]
    if "dif" in parts:
        total = total + parts["dif"]
    total = total + weights.w_dyn * parts["dyn"] + weights.w_rep * parts["rep"]
    if "reg" in parts:
        total = total + parts["reg"]
    return total


# ---------------------------------------------------------------------------
# harmonious weighting
# ---------------------------------------------------------------------------
def harmonious_weight(expected_loss: float) -> tuple[float, float]:
    """Closed-form fixed point of the harmonised objective for a constant
    loss: the optimal weight and the resulting scaled loss (< 1)."""
    if expected_loss < 0:
        raise InputError(f"expected_loss must be >= 0, got {expected_loss}")
    if expected_loss == 0:
        return 0.0, 0.0
    w_star = 0.5 * (expected_loss + np.sqrt(expected_loss**2 + 4.0 * expected_loss))
    return float(w_star), float(expected_loss / w_star)


HARMONY_TERMS = ("img", "rew", "con", "d", "reg")


class HarmoniousWeights:
    """Learnable per-term loss weights, parameterised as exp(latent) so
    they stay positive; trained with sum(L_i / w_i + ln(1 + w_i))."""

    def __init__(self, dtype=np.float32, terms: tuple[str, ...] = HARMONY_TERMS):
        self.log_w = {name: Tensor(np.zeros((), dtype=dtype), requires_grad=True) for name in terms}

    def params(self) -> dict[str, Tensor]:
        return {f"harmony/{k}": v for k, v in self.log_w.items()}

    def weights(self) -> dict[str, float]:
        return {k: float(np.exp(v.data)) for k, v in self.log_w.items()}

    def objective(self, terms: dict[str, Tensor]) -> Tensor:
        total = None
        for name, loss in terms.items():
            w = nn.exp(self.log_w[name])
            item = loss / w + nn.log(1.0 + w)
            total = item if total is None else total + item
        return total


# ---------------------------------------------------------------------------
# full breakdown
# ---------------------------------------------------------------------------
@dataclass
class LossBreakdown:
    rec: float
    rew: float
    con: float
    dyn: float
    rep: float
    reg: float
    total: float
    dif: float | None = None
    kl_z_pre: float | None = None
    kl_d_pre: float | None = None

    def as_dict(self) -> dict[str, float]:
        out = {k: getattr(self, k) for k in ("rec", "rew", "con", "dyn", "rep", "reg", "total")}
        if self.dif is not None:
            out["dif"] = self.dif
        if self.kl_z_pre is not None:
            out["kl_z_pre"] = self.kl_z_pre
        if self.kl_d_pre is not None:
            out["kl_d_pre"] = self.kl_d_pre
        return out


def world_model_loss_terms(rollout, batch: dict[str, np.ndarray], grid: BucketGrid,
                           weights: LossWeights, include_reg: bool = True,
                           harmony: HarmoniousWeights | None = None) -> dict[str, Tensor]:
    """All loss terms as graph tensors, plus the combined 'total'."""
    rec = gaussian_frame_nll(rollout.recon, batch["obs"])
    rew = twohot_cross_entropy(rollout.reward_logits, twohot_encode(batch["reward"], grid))
    con = binary_cross_entropy_logits(rollout.cont_logit, batch["cont"])

    dyn_z, kl_z_pre = free_bit_kl(rollout.post_z, rollout.prior_z, "first", weights.free_bits)
    rep_z, _ = free_bit_kl(rollout.post_z, rollout.prior_z, "second", weights.free_bits)
    dyn, rep = dyn_z, rep_z
    kl_d_pre = None
    if rollout.prior_d is not None:
        dyn_d, kl_d_pre = free_bit_kl(rollout.post_d, rollout.prior_d, "first", weights.free_bits)
        rep_d, _ = free_bit_kl(rollout.post_d, rollout.prior_d, "second", weights.free_bits)
        dyn = dyn + dyn_d
        rep = rep + rep_d

    terms: dict[str, Tensor] = {"rec": rec, "rew": rew, "con": con, "dyn": dyn, "rep": rep}
    if rollout.diff_recon is not None:
        terms["dif"] = gaussian_frame_nll(rollout.diff_recon, batch["diff_obs"])
    if include_reg:
        terms["reg"] = diff_divergence_reg(rollout.recon, batch["obs"], weights.reg_temperature)

    if harmony is not None:
        alpha = weights.w_dyn / (weights.w_dyn + weights.w_rep)
        harmonised = {"img": rec, "rew": rew, "con": con, "d": alpha * dyn + (1.0 - alpha) * rep}
        if include_reg:
            harmonised["reg"] = terms["reg"]
        if "dif" in terms:  # differential reconstruction counts as image modelling
            harmonised["img"] = harmonised["img"] + terms["dif"]
        terms["total"] = harmony.objective(harmonised)
    else:
        terms["total"] = total_loss(terms, weights)

    terms["_kl_z_pre"] = kl_z_pre
    terms["_kl_d_pre"] = kl_d_pre
    return terms


def breakdown_from_terms(terms: dict[str, Tensor]) -> LossBreakdown:
    def val(key):
        t = terms.get(key)
        return float(t.data) if t is not None else 0.0

    return LossBreakdown(
        rec=val("rec"), rew=val("rew"), con=val("con"), dyn=val("dyn"), rep=val("rep"),
        reg=val("reg"), total=val("total"),
        dif=float(terms["dif"].data) if "dif" in terms else None,
        kl_z_pre=terms.get("_kl_z_pre"), kl_d_pre=terms.get("_kl_d_pre"),
    )
