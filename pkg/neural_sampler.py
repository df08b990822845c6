"""
Digital-neuron logistic sampler.

A unit's pre-activation, scaled by ``s`` and rounded, becomes the initial
membrane potential V_init of an integer neuron. For T_S ticks the neuron adds
a Bernoulli leak of magnitude L (capped at V_sat) and compares its potential
with a threshold drawn uniformly from [V_th, V_th + 2^M - 1]; the unit samples
1 if any comparison succeeds. The spike probability as a function of V_init is
the absorption probability of a two-stage Markov chain (leak, then threshold)
after T_S steps, and tracks the logistic function for well-chosen parameters.

This module provides the tick-level simulation, the dense chain matrices, the
fast curve computation, unit samplers built on top of them, and the MSE-driven
parameter search.
"""

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from errors import InvalidParameterError
from logging_config import get_logger
from logging_decorators import log_function_calls, log_performance
from rbm_core import round_half_away

logger = get_logger(__name__)

LEAK_MODES = ("half", "hardware")
HARDWARE_LEAK_PROBABILITY = 129 / 256


def leak_probability(mode: str) -> float:
    """0.5 for the abstract sampler, 129/256 for the 8-bit hardware comparison."""
    if mode == "half":
        return 0.5
    if mode == "hardware":
        return HARDWARE_LEAK_PROBABILITY
    raise InvalidParameterError(f"leak_prob_mode must be one of {LEAK_MODES}, got {mode!r}")


@dataclass(frozen=True)
class SamplerConfig:
    """
    Parameters of the digital neural sampler.

    Attributes
    ----------
    s: scaling factor from real pre-activation to membrane potential
    T_S: sampling-window length in ticks
    V_th: base threshold
    M: threshold randomness bits (threshold range TR = 2^M - 1)
    L: stochastic leak magnitude
    V_sat: positive saturation potential; None selects V_th + TR
    leak_prob_mode: "half" (p = 0.5) or "hardware" (p = 129/256)

    Example
    -------
        >>> cfg = SamplerConfig(s=50, T_S=8, V_th=79, M=9, L=49)
        >>> cfg.TR, cfg.v_sat
        (511, 590)
    """

    s: int
    T_S: int
    V_th: int
    M: int
    L: int
    V_sat: Optional[int] = None
    leak_prob_mode: str = "half"

    def __post_init__(self):
        if self.s < 1:
            raise InvalidParameterError(f"s must be >= 1, got {self.s}")
        if self.T_S < 1:
            raise InvalidParameterError(f"T_S must be >= 1, got {self.T_S}")
        if self.V_th < 0:
            raise InvalidParameterError(f"V_th must be >= 0, got {self.V_th}")
        if self.M < 0:
            raise InvalidParameterError(f"M must be >= 0, got {self.M}")
        if self.L < 1:
            raise InvalidParameterError(f"L must be >= 1, got {self.L}")
        if self.V_sat is not None and self.V_sat < self.V_th + self.TR:
            raise InvalidParameterError(
                f"V_sat={self.V_sat} is below V_th + TR = {self.V_th + self.TR}"
            )
        leak_probability(self.leak_prob_mode)

    @property
    def TR(self) -> int:
        return 2 ** self.M - 1

    @property
    def v_sat(self) -> int:
        return self.V_sat if self.V_sat is not None else self.V_th + self.TR

    @property
    def p_leak(self) -> float:
        return leak_probability(self.leak_prob_mode)

    @property
    def n_states(self) -> int:
        return 2 * self.v_sat + 1

    @classmethod
    def from_config(cls, section: Dict) -> "SamplerConfig":
        return cls(
            s=int(section["s"]),
            T_S=int(section["T_S"]),
            V_th=int(section["V_th"]),
            M=int(section["M"]),
            L=int(section["L"]),
            V_sat=None if section.get("V_sat") is None else int(section["V_sat"]),
            leak_prob_mode=section.get("leak_prob_mode", "half"),
        )

    def as_dict(self) -> Dict:
        return {
            "s": self.s, "T_S": self.T_S, "V_th": self.V_th, "M": self.M, "L": self.L,
            "V_sat": self.v_sat, "leak_prob_mode": self.leak_prob_mode,
        }


# Reference configurations at s = 50 with their tabulated MSE (sum of squared
# errors over the integer domain [-6s, 6s]).
REFERENCE_CONFIGS: Dict[str, Tuple[SamplerConfig, float]] = {
    "G1": (SamplerConfig(s=50, T_S=1, V_th=0, M=7, L=125), 0.4878),
    "G2": (SamplerConfig(s=50, T_S=2, V_th=0, M=8, L=100), 0.1311),
    "G3": (SamplerConfig(s=50, T_S=4, V_th=66, M=8, L=77), 0.0741),
    "G4": (SamplerConfig(s=50, T_S=8, V_th=79, M=9, L=49), 0.0412),
    "G5": (SamplerConfig(s=50, T_S=16, V_th=186, M=9, L=36), 0.0415),
}


def _check_v_init(cfg: SamplerConfig, V_init):
    if np.any(np.abs(V_init) > cfg.v_sat):
        raise InvalidParameterError(f"V_init outside [-{cfg.v_sat}, {cfg.v_sat}]")


def simulate_sampler(cfg: SamplerConfig, V_init: int, rng: np.random.Generator) -> int:
    """
    Run the tick-level sampling algorithm once.

    Per tick: add Bernoulli(p_leak) * L capped at V_sat, draw an integer
    threshold uniformly in [V_th, V_th + TR], and mark a spike on a hit.

    Returns
    -------
    1 if the neuron spiked within T_S ticks, else 0

    Raises
    ------
    InvalidParameterError: |V_init| > V_sat
    """
    _check_v_init(cfg, V_init)
    v = int(V_init)
    spiked = 0
    for _ in range(cfg.T_S):
        if rng.random() < cfg.p_leak:
            v = min(v + cfg.L, cfg.v_sat)
        threshold = int(rng.integers(cfg.V_th, cfg.V_th + cfg.TR + 1))
        if v >= threshold:
            spiked = 1
    return spiked


def simulate_sampler_batch(cfg: SamplerConfig, V_init: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorised ``simulate_sampler`` over an array of independent trials."""
    v = np.array(V_init, dtype=np.int64, copy=True)
    _check_v_init(cfg, v)
    spiked = np.zeros(v.shape, dtype=bool)
    for _ in range(cfg.T_S):
        leak = rng.random(v.shape) < cfg.p_leak
        v = np.minimum(v + leak * cfg.L, cfg.v_sat)
        thresholds = rng.integers(cfg.V_th, cfg.V_th + cfg.TR + 1, size=v.shape)
        spiked |= v >= thresholds
    return spiked.astype(np.int8)


@dataclass
class DtmcMatrices:
    """
    Dense transition matrices over membrane states [-V_sat, V_sat].

    Row/column k corresponds to potential ``k - V_sat``; the last index is the
    absorbing saturation state.
    """

    v_sat: int
    P_l: np.ndarray
    P_th: np.ndarray
    P_c: np.ndarray
    P_sample: np.ndarray

    @property
    def states(self) -> np.ndarray:
        return np.arange(-self.v_sat, self.v_sat + 1)

    def max_row_deviation(self) -> float:
        return float(max(np.abs(P.sum(axis=1) - 1.0).max() for P in (self.P_l, self.P_th, self.P_c, self.P_sample)))


def _threshold_hit_probability(cfg: SamplerConfig) -> np.ndarray:
    """Per-state probability of moving to the absorbing state in one threshold test."""
    states = np.arange(-cfg.v_sat, cfg.v_sat + 1)
    q = (states - cfg.V_th + 1) / (cfg.TR + 1)
    return np.clip(q, 0.0, 1.0)


def leak_matrix(cfg: SamplerConfig) -> np.ndarray:
    n = cfg.n_states
    p = cfg.p_leak
    rows = np.arange(n - 1)
    P = np.zeros((n, n))
    P[rows, rows] = 1.0 - p
    P[rows, np.minimum(rows + cfg.L, n - 1)] += p
    P[n - 1, n - 1] = 1.0
    return P


def threshold_matrix(cfg: SamplerConfig) -> np.ndarray:
    n = cfg.n_states
    q = _threshold_hit_probability(cfg)
    P = np.diag(1.0 - q)
    P[:, n - 1] += q
    return P


@log_performance(threshold_seconds=1.0)
def build_dtmc(cfg: SamplerConfig) -> DtmcMatrices:
    """
    Build the leak, threshold, coupled and T_S-step matrices.

    P_l moves s to min(s + L, V_sat) with probability p_leak; P_th sends s to
    V_sat with probability (s - V_th + 1) / (TR + 1) clipped to [0, 1]; P_c is
    P_l @ P_th and P_sample is P_c ** T_S.
    """
    P_l = leak_matrix(cfg)
    P_th = threshold_matrix(cfg)
    P_c = P_l @ P_th
    P_sample = np.linalg.matrix_power(P_c, cfg.T_S)
    return DtmcMatrices(cfg.v_sat, P_l, P_th, P_c, P_sample)


@dataclass
class SpikeProbabilityCurve:
    """
    Spike probability for every initial potential in [-V_sat, V_sat].

    Calling the curve with an integer array performs a clipped lookup, so
    potentials beyond the saturation bounds read the boundary values.
    """

    s: int
    v_sat: int
    probs: np.ndarray
    cfg: Optional[SamplerConfig] = field(default=None, compare=False)

    @property
    def states(self) -> np.ndarray:
        return np.arange(-self.v_sat, self.v_sat + 1)

    def __call__(self, V) -> np.ndarray:
        idx = np.clip(np.asarray(V, dtype=np.int64), -self.v_sat, self.v_sat) + self.v_sat
        return self.probs[idx]

    def rows(self) -> List[Tuple[int, float]]:
        return list(zip(self.states.tolist(), self.probs.tolist()))


def absorption_column(cfg: SamplerConfig) -> np.ndarray:
    """
    Last column of P_c ** T_S computed with the operators instead of matrices.

    Each step applies x <- P_l (P_th x); both operators are banded so a step
    costs O(states).
    """
    n = cfg.n_states
    p = cfg.p_leak
    q = _threshold_hit_probability(cfg)
    jump = np.minimum(np.arange(n) + cfg.L, n - 1)
    x = np.zeros(n)
    x[-1] = 1.0
    for _ in range(cfg.T_S):
        y = (1.0 - q) * x + q * x[-1]
        x = (1.0 - p) * y + p * y[jump]
        x[-1] = y[-1]
    return x


def spike_probability_curve(cfg: SamplerConfig) -> SpikeProbabilityCurve:
    """Spike probability as a function of V_init (terminating-state column)."""
    probs = np.clip(absorption_column(cfg), 0.0, 1.0)
    return SpikeProbabilityCurve(cfg.s, cfg.v_sat, probs, cfg)


class FastUnitSampler:
    """
    Unit sampler using the spike-probability curve as transition operator.

    The real pre-activation x is scaled by s, rounded half away from zero,
    clipped to [-V_sat, V_sat] and looked up; one uniform draw decides.
    """

    name = "neural-fast"

    def __init__(self, curve: SpikeProbabilityCurve):
        self.curve = curve

    def membrane(self, x: np.ndarray) -> np.ndarray:
        v = round_half_away(np.asarray(x, dtype=np.float64) * self.curve.s)
        return np.clip(v, -self.curve.v_sat, self.curve.v_sat)

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        p = self.curve(self.membrane(x))
        return (rng.random(p.shape) < p).astype(np.int8)


def fast_unit_sampler(curve: SpikeProbabilityCurve) -> FastUnitSampler:
    return FastUnitSampler(curve)


class TickUnitSampler:
    """Unit sampler that runs the tick-level algorithm for every unit."""

    name = "neural-tick"

    def __init__(self, cfg: SamplerConfig):
        self.cfg = cfg

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        v = round_half_away(np.asarray(x, dtype=np.float64) * self.cfg.s)
        v = np.clip(v, -self.cfg.v_sat, self.cfg.v_sat)
        return simulate_sampler_batch(self.cfg, v, rng)


def default_domain(s: int, factor: int = 6) -> Tuple[int, int]:
    return (-factor * s, factor * s)


def mse_vs_logistic(
    curve: SpikeProbabilityCurve,
    s: int,
    domain: Optional[Tuple[int, int]] = None,
    reduction: str = "mean",
) -> float:
    """
    Squared error between the curve and logistic(V / s) over integer V.

    Args
    ----
    curve: spike-probability curve
    s: scaling factor of the target logistic
    domain: inclusive integer interval; defaults to [-6s, 6s]. Points beyond
        +-V_sat read the clipped curve, as the fast sampler does.
    reduction: "mean" (default) or "sum"; the tabulated reference values are sums

    Raises
    ------
    InvalidParameterError: empty domain or unknown reduction
    """
    lo, hi = domain if domain is not None else default_domain(s)
    if hi < lo:
        raise InvalidParameterError(f"empty MSE domain [{lo}, {hi}]")
    V = np.arange(lo, hi + 1)
    err = (curve(V) - expit(V / s)) ** 2
    if reduction == "mean":
        return float(err.mean())
    if reduction == "sum":
        return float(err.sum())
    raise InvalidParameterError(f"unknown reduction {reduction!r}")


@dataclass(frozen=True)
class SearchSpace:
    """Inclusive integer ranges for the parameter grid."""

    V_th: Sequence[int]
    M: Sequence[int]
    L: Sequence[int]

    @classmethod
    def from_bounds(cls, v_th: Tuple[int, int], m: Tuple[int, int], l: Tuple[int, int], v_th_step: int = 1) -> "SearchSpace":
        return cls(
            tuple(range(v_th[0], v_th[1] + 1, v_th_step)),
            tuple(range(m[0], m[1] + 1)),
            tuple(range(l[0], l[1] + 1)),
        )

    def points(self) -> Iterable[Tuple[int, int, int]]:
        return itertools.product(self.V_th, self.M, self.L)


@log_performance(threshold_seconds=1.0)
@log_function_calls(include_params=True, include_result=True, log_level="DEBUG")
def fit_sampler(
    s: int,
    T_S: int,
    search_space: SearchSpace,
    domain: Optional[Tuple[int, int]] = None,
    reduction: str = "mean",
    leak_prob_mode: str = "half",
    min_range_factor: float = 5.0,
    threads: int = 1,
) -> Tuple[SamplerConfig, float]:
    """
    Exhaustive grid search for the sampler closest to logistic(V / s).

    Only configurations with V_th + TR >= min_range_factor * s are admissible.
    Ties on MSE go to the smaller M, then smaller V_th, then smaller L; the
    reduction is independent of evaluation order.

    Returns
    -------
    (best config, its MSE)

    Raises
    ------
    InvalidParameterError: no admissible point in the search space
    """
    candidates = [
        (v_th, m, l) for v_th, m, l in search_space.points()
        if v_th >= 0 and l >= 1 and m >= 0 and v_th + 2 ** m - 1 >= min_range_factor * s
    ]
    if not candidates:
        raise InvalidParameterError("search space has no admissible configuration")

    def evaluate(point):
        v_th, m, l = point
        cfg = SamplerConfig(s=s, T_S=T_S, V_th=v_th, M=m, L=l, leak_prob_mode=leak_prob_mode)
        return mse_vs_logistic(spike_probability_curve(cfg), s, domain, reduction), m, v_th, l

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(evaluate, candidates))
    else:
        results = [evaluate(point) for point in candidates]

    mse, m, v_th, l = min(results)
    best = SamplerConfig(s=s, T_S=T_S, V_th=v_th, M=m, L=l, leak_prob_mode=leak_prob_mode)
    logger.info(
        f"fit_sampler s={s} T_S={T_S}: best V_th={v_th} M={m} L={l} mse={mse:.6g} "
        f"({len(candidates)} admissible points)"
    )
    return best, mse


def analyze_dtmc(cfg: SamplerConfig, domain: Optional[Tuple[int, int]] = None) -> Dict:
    """Summary of the chain used by the analyze-dtmc command."""
    dtmc = build_dtmc(cfg)
    curve = spike_probability_curve(cfg)
    dense = dtmc.P_sample[:, -1]
    return {
        "config": cfg.as_dict(),
        "n_states": cfg.n_states,
        "max_row_deviation": dtmc.max_row_deviation(),
        "absorbing": bool(dtmc.P_sample[-1, -1] == 1.0),
        "curve_matches_dense": float(np.abs(dense - curve.probs).max()),
        "monotone": bool(np.all(np.diff(curve.probs) >= -1e-12)),
        "mse_mean": mse_vs_logistic(curve, cfg.s, domain, "mean"),
        "mse_sum": mse_vs_logistic(curve, cfg.s, domain, "sum"),
    }


def with_leak_mode(cfg: SamplerConfig, mode: str) -> SamplerConfig:
    return replace(cfg, leak_prob_mode=mode)
