"""Training objectives over unit embeddings and fixed class centers.

Five heads share one softmax/cross-entropy tail and one adaptive scale:

* ``adaproj``: distance from the embedding to the sphere projection of its
  projection onto a class-specific subspace; every unit vector inside the
  subspace is an optimum.
* ``adacos``: scaled cosine to a single fixed center per class.
* ``subcluster_adacos``: smoothed maximum of scaled cosines over M
  sub-cluster centers per class.
* ``compactness``: squared distance to the class center (no softmax).
* ``compactness_cce``: compactness plus a discriminative cross-entropy over
  adacos-style logits.

All heads consume raw (not yet normalized) embeddings and differentiate
through the sphere projection, so their gradients can be chained directly
into the network backward pass.  Centers are frozen after construction.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatchError,
    EmptyBatchError,
    InvalidDimsError,
    ZeroVectorError,
)
from .geometry import EPS_NORM, glorot_uniform, orthonormalize

LOSS_HEAD_NAMES = ("compactness", "compactness_cce", "adacos", "subcluster_adacos", "adaproj")


@dataclass(frozen=True)
class AdaptiveScaleState:
    """Scalar scale of the AdaCos family plus the class count it was built for."""

    s_hat: float
    n_classes: int
    frozen: bool = False

    def __post_init__(self):
        if not (self.s_hat > 0.0 and math.isfinite(self.s_hat)):
            raise ConfigError(f"scale must be positive and finite, got {self.s_hat}")

    @classmethod
    def initial(cls, n_classes: int, frozen: bool = False) -> "AdaptiveScaleState":
        """sqrt(2) * ln(N-1), floored at 1.0 so tiny class counts stay positive."""
        if n_classes < 1:
            raise ConfigError("need at least one class")
        s0 = math.sqrt(2.0) * math.log(max(n_classes - 1, 1))
        return cls(s_hat=max(s0, 1.0), n_classes=n_classes, frozen=frozen)


def update_adaptive_scale(state: AdaptiveScaleState, batch_angles_true, batch_logit_sums) -> AdaptiveScaleState:
    """Per-batch scale update: s' = ln(B_avg) / cos(min(pi/4, theta_med)).

    B_avg is the batch mean of sum_{k != true} exp(s * cos theta_k) and
    theta_med the batch median angle to the true class.  If the formula
    yields a non-positive or non-finite value (possible for tiny class
    counts) the previous scale is kept, preserving s_hat > 0.
    """
    if state.frozen:
        return state
    angles = np.asarray(batch_angles_true, dtype=np.float64)
    sums = np.asarray(batch_logit_sums, dtype=np.float64)
    if angles.size == 0 or sums.size == 0:
        raise EmptyBatchError("scale update needs nonempty batch statistics")
    b_avg = float(np.mean(sums))
    theta_med = float(np.median(angles))
    denom = math.cos(min(math.pi / 4.0, theta_med))
    if b_avg <= 0.0:
        return state
    new_s = math.log(b_avg) / denom
    if not (math.isfinite(new_s) and new_s > 0.0):
        return state
    return dataclasses.replace(state, s_hat=new_s)


@dataclass(frozen=True)
class CenterBank:
    """Frozen class centers: one unit center, M sub-cluster centers, or a
    J-row subspace basis per class.

    ``centers`` has shape (N, D) for kind "single", (N, M, D) for
    "subcluster" and (N, J, D) for "subspace".  Rows are unit-norm; for the
    default subspace variant each class's rows are pairwise orthonormal.
    """

    kind: str
    centers: np.ndarray = field(repr=False)
    orthonormal_rows: bool = True

    def __post_init__(self):
        if self.kind not in ("single", "subcluster", "subspace"):
            raise ConfigError(f"unknown center bank kind: {self.kind}")
        arr = np.asarray(self.centers, dtype=np.float64)
        expected_ndim = 2 if self.kind == "single" else 3
        if arr.ndim != expected_ndim:
            raise InvalidDimsError(f"kind {self.kind} expects {expected_ndim}-D centers, got shape {arr.shape}")
        norms = np.linalg.norm(arr, axis=-1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise InvalidDimsError("all center rows must be unit-norm")
        if self.kind == "subspace" and arr.shape[1] >= arr.shape[2]:
            raise InvalidDimsError(f"subspace dim {arr.shape[1]} must be < embedding dim {arr.shape[2]}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "centers", arr)

    @property
    def n_classes(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[-1]

    def content_hash(self) -> str:
        return hashlib.sha256(self.centers.tobytes()).hexdigest()


def build_center_bank(
    kind: str,
    n_classes: int,
    dim: int,
    *,
    subspace_dim: int = 32,
    subclusters: int = 32,
    seed: int = 0,
    orthonormalize_rows: bool = True,
) -> CenterBank:
    """Glorot-uniform center initialization, frozen after construction.

    Subspace banks are orthonormalized per class by default so the span
    projection is exact; ``orthonormalize_rows=False`` keeps the raw
    sphere-projected draws (approximately orthonormal in high dimension).
    """
    rng = np.random.default_rng(seed)
    if kind == "single":
        raw = glorot_uniform((n_classes, dim), rng)
        centers = raw / np.linalg.norm(raw, axis=-1, keepdims=True)
        return CenterBank(kind="single", centers=centers)
    if kind == "subcluster":
        raw = glorot_uniform((n_classes * subclusters, dim), rng)
        raw /= np.linalg.norm(raw, axis=-1, keepdims=True)
        return CenterBank(kind="subcluster", centers=raw.reshape(n_classes, subclusters, dim))
    if kind == "subspace":
        if subspace_dim >= dim:
            raise InvalidDimsError(f"subspace dim {subspace_dim} must be < embedding dim {dim}")
        raw = glorot_uniform((n_classes * subspace_dim, dim), rng).reshape(n_classes, subspace_dim, dim)
        if orthonormalize_rows:
            bases = np.stack([orthonormalize(raw[k]).rows for k in range(n_classes)])
        else:
            bases = raw / np.linalg.norm(raw, axis=-1, keepdims=True)
        return CenterBank(kind="subspace", centers=bases, orthonormal_rows=orthonormalize_rows)
    raise ConfigError(f"unknown center bank kind: {kind}")


@dataclass(frozen=True)
class LossOutput:
    value: float
    gradient: np.ndarray


def validate_target(target, n_classes: int) -> np.ndarray:
    t = np.asarray(target, dtype=np.float64)
    if t.shape != (n_classes,):
        raise DimensionMismatchError(f"target shape {t.shape} != ({n_classes},)")
    if np.any(t < 0.0) or abs(float(t.sum()) - 1.0) > 1e-9:
        raise ConfigError("target weights must be nonnegative and sum to 1")
    return t


def one_hot(n_classes: int, class_index: int) -> np.ndarray:
    t = np.zeros(n_classes)
    t[class_index] = 1.0
    return t


def _normalize_batch(X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if not np.all(np.isfinite(X)):
        raise ZeroVectorError("embedding batch contains non-finite entries")
    r = np.linalg.norm(X, axis=1)
    if np.any(r <= EPS_NORM):
        raise ZeroVectorError("cannot sphere-project a (near-)zero embedding")
    return X, r, X / r[:, None]


def _chain_through_normalization(grad_unit: np.ndarray, xhat: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. the unit embedding back to the raw embedding."""
    radial = np.sum(grad_unit * xhat, axis=1, keepdims=True)
    return (grad_unit - radial * xhat) / r[:, None]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cce(logits, target) -> LossOutput:
    """Cross entropy of softmax(logits) against a target distribution.

    Computed with max subtraction; the gradient w.r.t. the logits is
    softmax(logits) - target.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ZeroVectorError("logits must be finite")
    t = validate_target(target, logits.shape[0])
    z = logits - logits.max()
    log_probs = z - math.log(float(np.sum(np.exp(z))))
    value = -float(np.dot(t, log_probs))
    return LossOutput(value=value, gradient=np.exp(log_probs) - t)


def _cce_batch(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    values = -np.sum(targets * log_probs, axis=1)
    return values, np.exp(log_probs) - targets


@dataclass
class ScaleStats:
    """Per-sample statistics feeding the adaptive scale update."""

    angles_true: np.ndarray
    exp_sums: np.ndarray


def _scale_stats(cosines: np.ndarray, targets: np.ndarray, s_hat: float) -> ScaleStats:
    true_idx = np.argmax(targets, axis=1)
    rows = np.arange(cosines.shape[0])
    cos_true = np.clip(cosines[rows, true_idx], -1.0, 1.0)
    exp_all = np.exp(s_hat * np.clip(cosines, -1.0, 1.0))
    exp_sums = exp_all.sum(axis=1) - exp_all[rows, true_idx]
    return ScaleStats(angles_true=np.arccos(cos_true), exp_sums=exp_sums)


class AdaCosHead:
    """Softmax/CCE over scaled cosines to one fixed unit center per class."""

    name = "adacos"
    uses_scale = True

    def __init__(self, bank: CenterBank, scale: AdaptiveScaleState):
        if bank.kind != "single":
            raise ConfigError("adacos needs a single-center bank")
        self.bank = bank
        self.scale = scale

    def logits(self, x) -> np.ndarray:
        _, _, xhat = _normalize_batch(x)
        return self.scale.s_hat * (xhat @ self.bank.centers.T)[0]

    def batch_loss(self, X, targets) -> tuple[np.ndarray, np.ndarray, ScaleStats]:
        X, r, xhat = _normalize_batch(X)
        s = self.scale.s_hat
        cos = xhat @ self.bank.centers.T
        values, delta = _cce_batch(s * cos, targets)
        grad_unit = s * (delta @ self.bank.centers)
        return values, _chain_through_normalization(grad_unit, xhat, r), _scale_stats(cos, targets, s)

    def loss(self, x, target) -> LossOutput:
        t = validate_target(target, self.bank.n_classes)
        values, grads, _ = self.batch_loss(np.atleast_2d(x), t[None, :])
        return LossOutput(value=float(values[0]), gradient=grads[0])

    def update_scale(self, stats: ScaleStats) -> None:
        self.scale = update_adaptive_scale(self.scale, stats.angles_true, stats.exp_sums)


class SubclusterAdaCosHead:
    """AdaCos with M centers per class, aggregated by a smoothed maximum
    (log-sum-exp minus log M); reduces exactly to AdaCos at M=1."""

    name = "subcluster_adacos"
    uses_scale = True

    def __init__(self, bank: CenterBank, scale: AdaptiveScaleState):
        if bank.kind != "subcluster":
            raise ConfigError("subcluster_adacos needs a sub-cluster bank")
        self.bank = bank
        self.scale = scale

    def _logits_batch(self, xhat: np.ndarray):
        s = self.scale.s_hat
        cos = np.einsum("nmd,bd->bnm", self.bank.centers, xhat)
        z = s * cos
        zmax = z.max(axis=2, keepdims=True)
        expz = np.exp(z - zmax)
        sumz = expz.sum(axis=2)
        logits = zmax[:, :, 0] + np.log(sumz) - math.log(self.bank.centers.shape[1])
        weights = expz / sumz[:, :, None]
        return cos, logits, weights

    def logits(self, x) -> np.ndarray:
        _, _, xhat = _normalize_batch(x)
        return self._logits_batch(xhat)[1][0]

    def batch_loss(self, X, targets) -> tuple[np.ndarray, np.ndarray, ScaleStats]:
        X, r, xhat = _normalize_batch(X)
        s = self.scale.s_hat
        cos, logits, weights = self._logits_batch(xhat)
        values, delta = _cce_batch(logits, targets)
        grad_unit = s * np.einsum("bnm,nmd->bd", delta[:, :, None] * weights, self.bank.centers)
        class_cos = cos.max(axis=2)  # angle to the nearest sub-cluster
        return values, _chain_through_normalization(grad_unit, xhat, r), _scale_stats(class_cos, targets, s)

    def loss(self, x, target) -> LossOutput:
        t = validate_target(target, self.bank.n_classes)
        values, grads, _ = self.batch_loss(np.atleast_2d(x), t[None, :])
        return LossOutput(value=float(values[0]), gradient=grads[0])

    def update_scale(self, stats: ScaleStats) -> None:
        self.scale = update_adaptive_scale(self.scale, stats.angles_true, stats.exp_sums)


class AdaProjHead:
    """Softmax/CCE over (negated) scaled squared distances between the unit
    embedding and the sphere projection of its class-subspace projection."""

    name = "adaproj"
    uses_scale = True

    def __init__(self, bank: CenterBank, scale: AdaptiveScaleState, negate_logits: bool = True):
        if bank.kind != "subspace":
            raise ConfigError("adaproj needs a subspace bank")
        self.bank = bank
        self.scale = scale
        self.negate_logits = negate_logits

    def _cosines_batch(self, xhat: np.ndarray):
        bases = self.bank.centers
        q = np.einsum("njd,bd->bnj", bases, xhat)
        proj = np.einsum("njd,bnj->bnd", bases, q)
        num = np.sum(q * q, axis=2)  # <xhat, p>
        pnorm = np.linalg.norm(proj, axis=2)
        live = pnorm > EPS_NORM
        cos = np.zeros_like(num)
        np.divide(num, pnorm, out=cos, where=live)
        np.clip(cos, 0.0, 1.0, out=cos)
        return cos, proj, num, pnorm, live

    def _grad_cos_unit(self, proj, num, pnorm, live):
        """d cos_k / d xhat, one D-vector per (sample, class); zero where the
        projection vanished (the distance sits at its maximal plateau)."""
        bases = self.bank.centers
        mp = np.einsum("njd,bnj->bnd", bases, np.einsum("njd,bnd->bnj", bases, proj))
        safe_pnorm = np.where(live, pnorm, 1.0)
        coeff1 = np.where(live, 2.0 / safe_pnorm, 0.0)
        coeff2 = np.where(live, num / safe_pnorm**3, 0.0)
        return coeff1[:, :, None] * proj - coeff2[:, :, None] * mp

    def distances(self, x) -> np.ndarray:
        """Squared chord distances 2(1 - cos), one per class, in [0, 2]."""
        _, _, xhat = _normalize_batch(x)
        cos = self._cosines_batch(xhat)[0]
        return 2.0 * (1.0 - cos[0])

    def logits(self, x) -> np.ndarray:
        """Distance-valued logits s * 2(1 - cos); the softmax consumes their
        negation unless ``negate_logits`` is disabled."""
        return self.scale.s_hat * self.distances(x)

    def batch_loss(self, X, targets) -> tuple[np.ndarray, np.ndarray, ScaleStats]:
        X, r, xhat = _normalize_batch(X)
        s = self.scale.s_hat
        cos, proj, num, pnorm, live = self._cosines_batch(xhat)
        sign = -1.0 if self.negate_logits else 1.0
        signed_logits = sign * s * 2.0 * (1.0 - cos)
        values, delta = _cce_batch(signed_logits, targets)
        grad_cos = self._grad_cos_unit(proj, num, pnorm, live)
        grad_unit = -2.0 * sign * s * np.einsum("bn,bnd->bd", delta, grad_cos)
        return values, _chain_through_normalization(grad_unit, xhat, r), _scale_stats(cos, targets, s)

    def loss(self, x, target) -> LossOutput:
        t = validate_target(target, self.bank.n_classes)
        values, grads, _ = self.batch_loss(np.atleast_2d(x), t[None, :])
        return LossOutput(value=float(values[0]), gradient=grads[0])

    def update_scale(self, stats: ScaleStats) -> None:
        self.scale = update_adaptive_scale(self.scale, stats.angles_true, stats.exp_sums)


class CompactnessHead:
    """Squared distance between the unit embedding and its class center,
    averaged over the target distribution.  No softmax and no scale."""

    name = "compactness"
    uses_scale = False

    def __init__(self, bank: CenterBank, scale: AdaptiveScaleState | None = None):
        if bank.kind != "single":
            raise ConfigError("compactness needs a single-center bank")
        self.bank = bank
        self.scale = scale

    def batch_loss(self, X, targets) -> tuple[np.ndarray, np.ndarray, None]:
        X, r, xhat = _normalize_batch(X)
        cos = xhat @ self.bank.centers.T
        values = 2.0 - 2.0 * np.sum(targets * cos, axis=1)
        grad_unit = -2.0 * (targets @ self.bank.centers)
        return values, _chain_through_normalization(grad_unit, xhat, r), None

    def loss(self, x, target) -> LossOutput:
        t = validate_target(target, self.bank.n_classes)
        values, grads, _ = self.batch_loss(np.atleast_2d(x), t[None, :])
        return LossOutput(value=float(values[0]), gradient=grads[0])

    def update_scale(self, stats) -> None:
        pass


class CompactnessCceHead:
    """Compactness plus a discriminative cross-entropy over adacos-style
    logits, combined with a configurable weight on the CCE term."""

    name = "compactness_cce"
    uses_scale = True

    def __init__(self, bank: CenterBank, scale: AdaptiveScaleState, cce_weight: float = 1.0):
        if bank.kind != "single":
            raise ConfigError("compactness_cce needs a single-center bank")
        if cce_weight < 0.0:
            raise ConfigError("cce_weight must be nonnegative")
        self.bank = bank
        self.scale = scale
        self.cce_weight = cce_weight

    def batch_loss(self, X, targets) -> tuple[np.ndarray, np.ndarray, ScaleStats]:
        X, r, xhat = _normalize_batch(X)
        s = self.scale.s_hat
        cos = xhat @ self.bank.centers.T
        compact_values = 2.0 - 2.0 * np.sum(targets * cos, axis=1)
        cce_values, delta = _cce_batch(s * cos, targets)
        grad_unit = -2.0 * (targets @ self.bank.centers) + self.cce_weight * s * (delta @ self.bank.centers)
        values = compact_values + self.cce_weight * cce_values
        return values, _chain_through_normalization(grad_unit, xhat, r), _scale_stats(cos, targets, s)

    def loss(self, x, target) -> LossOutput:
        t = validate_target(target, self.bank.n_classes)
        values, grads, _ = self.batch_loss(np.atleast_2d(x), t[None, :])
        return LossOutput(value=float(values[0]), gradient=grads[0])

    def update_scale(self, stats: ScaleStats) -> None:
        self.scale = update_adaptive_scale(self.scale, stats.angles_true, stats.exp_sums)


def bank_kind_for(loss_head: str) -> str:
    if loss_head in ("compactness", "compactness_cce", "adacos"):
        return "single"
    if loss_head == "subcluster_adacos":
        return "subcluster"
    if loss_head == "adaproj":
        return "subspace"
    raise ConfigError(f"unknown loss head: {loss_head}")


def make_loss_head(
    name: str,
    bank: CenterBank,
    scale: AdaptiveScaleState,
    *,
    negate_adaproj_logits: bool = True,
    cce_weight: float = 1.0,
):
    if name == "adacos":
        return AdaCosHead(bank, scale)
    if name == "subcluster_adacos":
        return SubclusterAdaCosHead(bank, scale)
    if name == "adaproj":
        return AdaProjHead(bank, scale, negate_logits=negate_adaproj_logits)
    if name == "compactness":
        return CompactnessHead(bank, scale)
    if name == "compactness_cce":
        return CompactnessCceHead(bank, scale, cce_weight=cce_weight)
    raise ConfigError(f"unknown loss head: {name}")


def adaproj_logits(x, bank: CenterBank, scale: AdaptiveScaleState) -> np.ndarray:
    """Distance-valued logits s * ||P_S(x) - P_S(P_span(x))||^2 per class."""
    return AdaProjHead(bank, scale).logits(x)


def adacos_logits(x, bank: CenterBank, scale: AdaptiveScaleState) -> np.ndarray:
    """Scaled cosines s * <P_S(x), c_k> per class."""
    return AdaCosHead(bank, scale).logits(x)


def subcluster_adacos_logits(x, bank: CenterBank, scale: AdaptiveScaleState) -> np.ndarray:
    """Smoothed-maximum logits log((1/M) sum_m exp(s * cos_km)) per class."""
    return SubclusterAdaCosHead(bank, scale).logits(x)


def compactness_loss(x, class_center) -> LossOutput:
    """||P_S(x) - c||^2 with its gradient through the sphere projection."""
    center = np.asarray(class_center, dtype=np.float64)
    if center.ndim != 1:
        raise DimensionMismatchError("class center must be a vector")
    if abs(float(np.linalg.norm(center)) - 1.0) > 1e-6:
        raise ConfigError("class center must be unit-norm")
    X, r, xhat = _normalize_batch(x)
    cos = float(xhat[0] @ center)
    grad_unit = (-2.0 * center)[None, :]
    grad = _chain_through_normalization(grad_unit, xhat, r)[0]
    return LossOutput(value=2.0 - 2.0 * cos, gradient=grad)
