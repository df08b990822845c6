"""
Restricted Boltzmann machine core.

Model containers, exact inference on enumerable models, Gibbs sampling with
pluggable unit samplers, fixed-point quantization, and the sliding-window
patch mask used to sparsify the visible-hidden weights.

State enumeration order (used by every probability table in the toolkit):
bit ``i`` of a joint index is visible unit ``i`` and bit ``n_visible + j`` is
hidden unit ``j``, so visible bits are the low-order bits.
"""

from dataclasses import dataclass
from typing import Optional, Protocol, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp, rel_entr

from errors import (
    DimensionMismatchError,
    EnumerationCapError,
    InvalidParameterError,
    SupportMismatchError,
)
from logging_config import get_logger
from logging_decorators import log_performance

logger = get_logger(__name__)

ENUMERATION_CAP = 24

VISIBLE_TO_HIDDEN = "v->h"
HIDDEN_TO_VISIBLE = "h->v"


@dataclass
class RbmModel:
    """
    Real-valued RBM with a binary connectivity mask.

    Attributes
    ----------
    W: weight matrix, shape (n_visible, n_hidden)
    b_v: visible biases
    b_h: hidden biases
    mask: binary matrix with the shape of W; W is zero wherever mask is zero

    Example
    -------
        >>> m = RbmModel.zeros(4, 2)
        >>> m.n_visible, m.n_hidden
        (4, 2)
    """

    W: np.ndarray
    b_v: np.ndarray
    b_h: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b_v = np.asarray(self.b_v, dtype=np.float64).reshape(-1)
        self.b_h = np.asarray(self.b_h, dtype=np.float64).reshape(-1)
        if self.W.ndim != 2:
            raise DimensionMismatchError(f"W must be 2-D, got shape {self.W.shape}")
        if self.mask is None:
            self.mask = np.ones(self.W.shape, dtype=bool)
        self.mask = np.asarray(self.mask).astype(bool)
        n_v, n_h = self.W.shape
        if self.b_v.shape != (n_v,) or self.b_h.shape != (n_h,) or self.mask.shape != self.W.shape:
            raise DimensionMismatchError(
                f"inconsistent shapes: W {self.W.shape}, b_v {self.b_v.shape}, "
                f"b_h {self.b_h.shape}, mask {self.mask.shape}"
            )
        if np.any(self.W[~self.mask] != 0):
            raise InvalidParameterError("W has nonzero entries outside the mask")

    @property
    def n_visible(self) -> int:
        return self.W.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int, mask: Optional[np.ndarray] = None) -> "RbmModel":
        return cls(np.zeros((n_visible, n_hidden)), np.zeros(n_visible), np.zeros(n_hidden), mask)

    @classmethod
    def random(
        cls,
        n_visible: int,
        n_hidden: int,
        rng: np.random.Generator,
        w_mean: float = -0.05,
        w_std: float = 0.04,
        bv_mean: float = -0.3,
        bv_std: float = 1.0,
        bh_mean: float = 0.5,
        bh_std: float = 1.5,
        mask: Optional[np.ndarray] = None,
    ) -> "RbmModel":
        """
        Draw a model from the Gaussian family used for quantization and KL studies.

        Defaults: weights ~ N(-0.05, 0.04^2), visible biases ~ N(-0.3, 1),
        hidden biases ~ N(0.5, 1.5^2).
        """
        W = rng.normal(w_mean, w_std, size=(n_visible, n_hidden))
        b_v = rng.normal(bv_mean, bv_std, size=n_visible)
        b_h = rng.normal(bh_mean, bh_std, size=n_hidden)
        if mask is not None:
            W = np.where(np.asarray(mask, dtype=bool), W, 0.0)
        return cls(W, b_v, b_h, mask)

    def with_mask(self, mask: np.ndarray) -> "RbmModel":
        """Copy of the model with ``mask`` applied to the weights."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.W.shape:
            raise DimensionMismatchError(f"mask shape {mask.shape} != W shape {self.W.shape}")
        return RbmModel(np.where(mask, self.W, 0.0), self.b_v.copy(), self.b_h.copy(), mask)

    def free_energy(self, v: np.ndarray) -> np.ndarray:
        """F(v) = -b_v.v - sum_j log(1 + exp(b_h + vW)_j); works on a batch of rows."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.n_visible:
            raise DimensionMismatchError(f"v has {v.shape[-1]} units, model has {self.n_visible}")
        return -(v @ self.b_v) - np.logaddexp(0.0, v @ self.W + self.b_h).sum(axis=-1)


@dataclass
class QuantizedRbm:
    """
    Integer image of an RbmModel under scaling factor ``s``.

    Attributes
    ----------
    base: the real-valued model that was quantized
    s: positive integer scaling factor
    Wq, bvq, bhq: integer weights and biases, round-half-away-from-zero of value * s
    """

    base: RbmModel
    s: int
    Wq: np.ndarray
    bvq: np.ndarray
    bhq: np.ndarray

    @property
    def n_visible(self) -> int:
        return self.Wq.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.Wq.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self.base.mask

    def dequantize(self) -> RbmModel:
        """Real-valued model Wq/s, bvq/s, bhq/s with the base mask."""
        return RbmModel(self.Wq / self.s, self.bvq / self.s, self.bhq / self.s, self.base.mask.copy())


ModelLike = Union[RbmModel, QuantizedRbm]


@dataclass
class UnitState:
    """Binary visible and hidden states; either 1-D vectors or (batch, n) arrays."""

    v: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.int8)
        self.h = np.asarray(self.h, dtype=np.int8)


class UnitSampler(Protocol):
    """Maps real pre-activations to binary samples using an explicit generator."""

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        ...


class IdealSampler:
    """Reference sampler: unit is 1 with probability logistic(x)."""

    name = "ideal"

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (rng.random(x.shape) < expit(x)).astype(np.int8)


def logistic(x):
    """Logistic function 1 / (1 + exp(-x)); saturates without overflow."""
    return expit(x)


def _check_state(m: ModelLike, state: UnitState):
    if state.v.shape[-1] != m.n_visible or state.h.shape[-1] != m.n_hidden:
        raise DimensionMismatchError(
            f"state ({state.v.shape[-1]} visible, {state.h.shape[-1]} hidden) does not match "
            f"model ({m.n_visible} visible, {m.n_hidden} hidden)"
        )


def energy(m: RbmModel, state: UnitState) -> Union[float, np.ndarray]:
    """E(v, h) = -v'Wh - b_v'v - b_h'h for one state or a batch of states."""
    _check_state(m, state)
    v = state.v.astype(np.float64)
    h = state.h.astype(np.float64)
    interaction = np.einsum("...i,ij,...j->...", v, m.W, h)
    result = -interaction - v @ m.b_v - h @ m.b_h
    return float(result) if np.ndim(result) == 0 else result


def bit_table(n_bits: int) -> np.ndarray:
    """All 2**n_bits binary vectors, row k holding the bits of k (bit 0 first)."""
    idx = np.arange(2 ** n_bits, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n_bits, dtype=np.int64)) & 1).astype(np.int8)


def state_index(v: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Joint-table index of (v, h) rows in the visible-low-order enumeration."""
    v = np.atleast_2d(np.asarray(v, dtype=np.int64))
    h = np.atleast_2d(np.asarray(h, dtype=np.int64))
    n_v = v.shape[1]
    weights_v = np.left_shift(1, np.arange(n_v, dtype=np.int64))
    weights_h = np.left_shift(1, np.arange(n_v, n_v + h.shape[1], dtype=np.int64))
    return v @ weights_v + h @ weights_h


def _check_cap(n_units: int, cap: int):
    if n_units > cap:
        raise EnumerationCapError(f"{n_units} units exceed the enumeration cap of {cap}")


@log_performance(threshold_seconds=1.0)
def exact_distribution(m: ModelLike, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """
    Exact joint distribution over all 2**(n_v + n_h) states.

    Args
    ----
    m: model (a QuantizedRbm is evaluated through its dequantized form)
    cap: maximum n_v + n_h accepted

    Returns
    -------
    1-D probability table indexed by ``state_index``

    Raises
    ------
    EnumerationCapError: n_v + n_h > cap
    """
    if isinstance(m, QuantizedRbm):
        m = m.dequantize()
    _check_cap(m.n_visible + m.n_hidden, cap)
    V = bit_table(m.n_visible).astype(np.float64)
    H = bit_table(m.n_hidden).astype(np.float64)
    # rows: hidden configuration, columns: visible configuration
    neg_energy = (H @ m.W.T) @ V.T + (H @ m.b_h)[:, None] + (V @ m.b_v)[None, :]
    log_p = neg_energy.reshape(-1) - logsumexp(neg_energy)
    return np.exp(log_p)


def exact_log_partition(m: ModelLike, cap: int = ENUMERATION_CAP) -> float:
    """log Z by enumerating the smaller layer and summing the other out analytically."""
    if isinstance(m, QuantizedRbm):
        m = m.dequantize()
    if m.n_visible <= m.n_hidden:
        _check_cap(m.n_visible, cap)
        V = bit_table(m.n_visible).astype(np.float64)
        terms = V @ m.b_v + np.logaddexp(0.0, V @ m.W + m.b_h).sum(axis=1)
    else:
        _check_cap(m.n_hidden, cap)
        H = bit_table(m.n_hidden).astype(np.float64)
        terms = H @ m.b_h + np.logaddexp(0.0, H @ m.W.T + m.b_v).sum(axis=1)
    return float(logsumexp(terms))


def exact_visible_marginal(m: ModelLike, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """p(v) over the 2**n_v visible states (bit i = visible unit i)."""
    if isinstance(m, QuantizedRbm):
        m = m.dequantize()
    _check_cap(m.n_visible, cap)
    V = bit_table(m.n_visible).astype(np.float64)
    neg_free = -m.free_energy(V)
    return np.exp(neg_free - logsumexp(neg_free))


def pre_activation(m: ModelLike, state: UnitState, direction: str) -> np.ndarray:
    """
    Real pre-activation of the destination layer.

    For a QuantizedRbm the integer sum is divided by ``s``; samplers that work in
    the integer membrane domain multiply back and round.
    """
    if isinstance(m, QuantizedRbm):
        W, b_v, b_h, scale = m.Wq, m.bvq, m.bhq, float(m.s)
    else:
        W, b_v, b_h, scale = m.W, m.b_v, m.b_h, 1.0
    if direction == VISIBLE_TO_HIDDEN:
        x = state.v.astype(np.float64) @ W + b_h
    elif direction == HIDDEN_TO_VISIBLE:
        x = state.h.astype(np.float64) @ W.T + b_v
    else:
        raise InvalidParameterError(f"unknown direction {direction!r}")
    return x / scale


def gibbs_step(
    m: ModelLike,
    state: UnitState,
    sampler: UnitSampler,
    direction: str,
    rng: np.random.Generator,
    clamp: Optional[np.ndarray] = None,
) -> UnitState:
    """
    Resample one layer conditioned on the other.

    Args
    ----
    m: real or quantized model
    state: current state (vectors or batches)
    sampler: unit sampler applied to every destination pre-activation
    direction: "v->h" or "h->v"
    rng: generator consumed by the sampler
    clamp: optional boolean mask over visible units (h->v only); clamped units
        keep their current values

    Returns
    -------
    New UnitState; the source layer is passed through unchanged
    """
    _check_state(m, state)
    x = pre_activation(m, state, direction)
    if direction == VISIBLE_TO_HIDDEN:
        if clamp is not None:
            raise InvalidParameterError("clamp is only valid for the h->v direction")
        return UnitState(state.v.copy(), sampler.sample(x, rng))

    v_new = sampler.sample(x, rng)
    if clamp is not None:
        clamp = np.asarray(clamp, dtype=bool)
        if clamp.shape[-1] != m.n_visible:
            raise DimensionMismatchError(f"clamp has {clamp.shape[-1]} units, model has {m.n_visible}")
        v_new = np.where(clamp, state.v, v_new).astype(np.int8)
    return UnitState(v_new, state.h.copy())


@log_performance(threshold_seconds=5.0)
def gibbs_chain(
    m: ModelLike,
    v0: np.ndarray,
    sampler: UnitSampler,
    n_steps: int,
    rng: np.random.Generator,
    clamp: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Run ``n_steps`` full sweeps (v->h then h->v) from ``v0``.

    Returns
    -------
    (visible samples, hidden samples): arrays with a leading ``n_steps`` axis;
    hidden sample k is the one that produced visible sample k
    """
    v0 = np.asarray(v0, dtype=np.int8)
    h0 = np.zeros(v0.shape[:-1] + (m.n_hidden,), dtype=np.int8)
    state = UnitState(v0, h0)
    vs = np.empty((n_steps,) + v0.shape, dtype=np.int8)
    hs = np.empty((n_steps,) + h0.shape, dtype=np.int8)
    for k in range(n_steps):
        state = gibbs_step(m, state, sampler, VISIBLE_TO_HIDDEN, rng)
        state = gibbs_step(m, state, sampler, HIDDEN_TO_VISIBLE, rng, clamp=clamp)
        vs[k] = state.v
        hs[k] = state.h
    return vs, hs


def empirical_distribution(v_samples: np.ndarray, h_samples: np.ndarray) -> np.ndarray:
    """Normalised histogram of sampled joint states in enumeration order."""
    v_samples = np.asarray(v_samples).reshape(-1, np.shape(v_samples)[-1])
    h_samples = np.asarray(h_samples).reshape(-1, np.shape(h_samples)[-1])
    n_states = 2 ** (v_samples.shape[1] + h_samples.shape[1])
    counts = np.bincount(state_index(v_samples, h_samples), minlength=n_states)
    return counts / counts.sum()


def round_half_away(x: np.ndarray) -> np.ndarray:
    """sign(x) * floor(|x| + 0.5) as int64."""
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def quantize(m: RbmModel, s: int) -> QuantizedRbm:
    """
    Scale by ``s`` and round half away from zero.

    The dequantized model differs from ``m`` by at most 1/(2s) per entry and
    masked weights stay exactly zero.

    Raises
    ------
    InvalidParameterError: s < 1
    """
    if int(s) != s or s < 1:
        raise InvalidParameterError(f"scaling factor must be a positive integer, got {s}")
    s = int(s)
    Wq = np.where(m.mask, round_half_away(m.W * s), 0)
    return QuantizedRbm(m, s, Wq, round_half_away(m.b_v * s), round_half_away(m.b_h * s))


def patch_mask(N: int, p: int) -> np.ndarray:
    """
    Sliding-window connectivity mask.

    Column ``j = r * (N - p + 1) + c`` connects the p x p window whose top-left
    pixel is (r, c); pixels are indexed row-major.

    Returns
    -------
    bool array of shape (N*N, (N - p + 1)**2)
    """
    if N < 1 or p < 1 or p > N:
        raise InvalidParameterError(f"patch side p={p} must lie in [1, N={N}]")
    side = N - p + 1
    mask = np.zeros((N * N, side * side), dtype=bool)
    for r in range(side):
        for c in range(side):
            rows = (np.arange(r, r + p)[:, None] * N + np.arange(c, c + p)[None, :]).reshape(-1)
            mask[rows, r * side + c] = True
    return mask


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    """
    D_KL(P || Q) = sum_i P_i log(P_i / Q_i) with the 0 log 0 = 0 convention.

    Raises
    ------
    SupportMismatchError: different shapes, or Q_i = 0 where P_i > 0
    """
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise SupportMismatchError(f"tables have different supports: {P.shape} vs {Q.shape}")
    if np.any((Q <= 0) & (P > 0)):
        raise SupportMismatchError("Q is zero where P is positive")
    return float(max(rel_entr(P, Q).sum(), 0.0))
