"""
Annealed importance sampling (AIS) for RBM partition functions.

The annealing path interpolates between a base-rate model A (no weights,
visible biases b_A, hidden biases zero) and the target model B:

    log p*_k(v) = (1 - beta_k) b_A.v + beta_k b_B.v + sum_j softplus(beta_k (vW + b_h)_j)

so p*_0 is the unnormalised marginal of A (with log Z_A = sum softplus(b_A) +
n_h log 2) and p*_K is the unnormalised marginal of B. Every intermediate is
itself an RBM, so transitions are plain Gibbs sweeps. All accumulation is done
in log space.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp

from errors import DimensionMismatchError, InvalidParameterError, NumericalError
from logging_config import get_logger
from logging_decorators import log_performance
from mnist_data import Dataset
from rbm_core import ModelLike, QuantizedRbm, RbmModel
from rbm_training import data_marginal_biases
from rng_streams import spawn_streams

logger = get_logger(__name__)

# runs per independent random stream; fixed so results do not depend on thread count
RUNS_PER_STREAM = 25


@dataclass(frozen=True)
class AisConfig:
    """
    AIS settings.

    Attributes
    ----------
    n_intermediate: number of annealing steps K (schedule has K + 1 points)
    n_runs: number of independent AIS chains
    seed: base seed
    schedule: optional explicit beta sequence, strictly increasing from 0 to 1
    """

    n_intermediate: int = 1000
    n_runs: int = 100
    seed: int = 0
    schedule: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.n_intermediate < 1 or self.n_runs < 1:
            raise InvalidParameterError("n_intermediate and n_runs must be positive")
        if self.schedule is not None:
            betas = np.asarray(self.schedule, dtype=np.float64)
            if betas.ndim != 1 or len(betas) < 2 or betas[0] != 0.0 or betas[-1] != 1.0 or np.any(np.diff(betas) <= 0):
                raise InvalidParameterError("AIS schedule must increase strictly from 0 to 1")

    @classmethod
    def from_config(cls, section: Dict, seed: int = 0) -> "AisConfig":
        return cls(int(section["n_intermediate"]), int(section["n_runs"]), seed)

    def betas(self) -> np.ndarray:
        if self.schedule is not None:
            return np.asarray(self.schedule, dtype=np.float64)
        return np.linspace(0.0, 1.0, self.n_intermediate + 1)


def _real(m: ModelLike) -> RbmModel:
    return m.dequantize() if isinstance(m, QuantizedRbm) else m


def _log_unnormalised(v: np.ndarray, beta: float, m: RbmModel, base_bv: np.ndarray) -> np.ndarray:
    vis = v @ ((1.0 - beta) * base_bv + beta * m.b_v)
    return vis + np.logaddexp(0.0, beta * (v @ m.W + m.b_h)).sum(axis=1)


def _run_block(m: RbmModel, base_bv: np.ndarray, betas: np.ndarray, n_runs: int, rng: np.random.Generator) -> np.ndarray:
    v = (rng.random((n_runs, m.n_visible)) < expit(base_bv)).astype(np.float64)
    log_w = np.zeros(n_runs)
    for k in range(1, len(betas)):
        log_w += _log_unnormalised(v, betas[k], m, base_bv) - _log_unnormalised(v, betas[k - 1], m, base_bv)
        beta = betas[k]
        h = (rng.random((n_runs, m.n_hidden)) < expit(beta * (v @ m.W + m.b_h))).astype(np.float64)
        v_bias = (1.0 - beta) * base_bv + beta * m.b_v
        v = (rng.random(v.shape) < expit(beta * (h @ m.W.T) + v_bias)).astype(np.float64)
    return log_w


def base_log_partition(base_bv: np.ndarray, n_hidden: int) -> float:
    return float(np.logaddexp(0.0, base_bv).sum() + n_hidden * np.log(2.0))


@log_performance(threshold_seconds=1.0)
def ais_log_partition(
    m: ModelLike,
    cfg: AisConfig,
    base_biases: Optional[np.ndarray] = None,
    threads: int = 1,
) -> Tuple[float, float]:
    """
    Estimate log Z of ``m``.

    Args
    ----
    m: real or quantized model (quantized models are dequantized)
    cfg: schedule, run count and seed
    base_biases: visible biases of the base model; defaults to the model's own b_v
    threads: worker threads over the fixed run blocks

    Returns
    -------
    (log Z estimate, standard error of the estimate)

    Raises
    ------
    NumericalError: the importance weights are not finite
    """
    m = _real(m)
    base_bv = m.b_v.copy() if base_biases is None else np.asarray(base_biases, dtype=np.float64)
    if base_bv.shape != (m.n_visible,):
        raise DimensionMismatchError(f"base biases have shape {base_bv.shape}, expected ({m.n_visible},)")
    betas = cfg.betas()

    n_blocks = -(-cfg.n_runs // RUNS_PER_STREAM)
    sizes = [min(RUNS_PER_STREAM, cfg.n_runs - b * RUNS_PER_STREAM) for b in range(n_blocks)]
    streams = spawn_streams(cfg.seed, "ais", n_blocks)

    def block(i):
        return _run_block(m, base_bv, betas, sizes[i], streams[i])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(block, range(n_blocks)))
    else:
        parts = [block(i) for i in range(n_blocks)]
    log_w = np.concatenate(parts)

    if not np.all(np.isfinite(log_w)):
        raise NumericalError("AIS importance weights overflowed")

    log_mean_w = logsumexp(log_w) - np.log(len(log_w))
    log_z = base_log_partition(base_bv, m.n_hidden) + float(log_mean_w)
    # delta-method standard error of log(mean w)
    w = np.exp(log_w - log_w.max())
    stderr = float(w.std(ddof=1) / w.mean() / np.sqrt(len(w))) if len(w) > 1 else 0.0
    logger.info(
        f"AIS: log Z = {log_z:.4f} +/- {stderr:.4f} ({cfg.n_runs} runs, {len(betas) - 1} steps)"
    )
    return log_z, stderr


def ais_log_prob(
    m: ModelLike,
    data: Union[Dataset, np.ndarray],
    cfg: AisConfig,
    threads: int = 1,
    base_biases: Optional[np.ndarray] = None,
    train_data: Optional[Union[Dataset, np.ndarray]] = None,
) -> Tuple[float, float]:
    """
    Mean per-image log-probability of ``data`` under ``m``.

    log p(v) = -F(v) - log Z with log Z from AIS. The base model's visible
    biases are, in order of preference: ``base_biases``, the marginals of
    ``train_data``, the marginals of ``data`` itself.

    Returns
    -------
    (mean log-probability, standard error over AIS runs)
    """
    real = _real(m)
    X = _flat(data, real.n_visible)
    if base_biases is None:
        if train_data is None:
            logger.warning("AIS base rates taken from the evaluated images; pass training data to avoid this")
        base_biases = data_marginal_biases(X if train_data is None else _flat(train_data, real.n_visible))
    log_z, stderr = ais_log_partition(real, cfg, base_biases, threads)
    mean_logp = float(np.mean(-real.free_energy(X)) - log_z)
    return mean_logp, stderr


def _flat(data: Union[Dataset, np.ndarray], n_visible: int) -> np.ndarray:
    X = data.flat if isinstance(data, Dataset) else np.asarray(data).reshape(len(data), -1)
    if X.shape[1] != n_visible:
        raise DimensionMismatchError(f"data has {X.shape[1]} pixels, model has {n_visible} visible units")
    return X.astype(np.float64)
