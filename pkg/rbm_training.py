"""
Offline persistent contrastive divergence (PCD) training of masked RBMs.

The positive phase uses hidden probabilities given each minibatch; the
negative phase advances a set of persistent fantasy chains by one Gibbs sweep
per update. The connectivity mask is re-applied after every weight update, so
weights outside the mask are exactly zero throughout training.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np
from scipy.special import expit, logit

from errors import DimensionMismatchError, DivergentTrainingError, InvalidParameterError
from logging_config import get_logger
from logging_decorators import log_performance
from mnist_data import Dataset
from rbm_core import RbmModel
from rng_streams import make_rng

logger = get_logger(__name__)

# pseudo-count keeping data-marginal bias initialisation finite
MARGINAL_EPS = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    """
    PCD hyperparameters.

    Defaults: learning rate 0.01, 30 epochs, minibatch 100, 20 persistent chains.
    """

    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 100
    n_persistent_chains: int = 20
    seed: int = 0
    weight_init_std: float = 0.01

    def __post_init__(self):
        for name in ("learning_rate", "epochs", "batch_size", "n_persistent_chains"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.weight_init_std < 0:
            raise InvalidParameterError(f"weight_init_std must be >= 0, got {self.weight_init_std}")

    @classmethod
    def from_config(cls, section: Dict, seed: int = 0) -> "TrainConfig":
        return cls(
            learning_rate=float(section["learning_rate"]),
            epochs=int(section["epochs"]),
            batch_size=int(section["batch_size"]),
            n_persistent_chains=int(section["n_persistent_chains"]),
            seed=seed,
            weight_init_std=float(section.get("weight_init_std", 0.01)),
        )


@dataclass
class TrainingHistory:
    """Per-epoch mean squared reconstruction error (mean-field, one sweep)."""

    reconstruction_error: List[float] = field(default_factory=list)

    def rows(self):
        return [(epoch + 1, err) for epoch, err in enumerate(self.reconstruction_error)]


def _as_matrix(data: Union[Dataset, np.ndarray]) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.flat.astype(np.float64)
    data = np.asarray(data, dtype=np.float64)
    return data.reshape(len(data), -1)


def data_marginal_biases(X: np.ndarray, eps: float = MARGINAL_EPS) -> np.ndarray:
    """logit of the per-pixel data mean, clipped to [eps, 1 - eps]."""
    return logit(np.clip(X.mean(axis=0), eps, 1.0 - eps))


@log_performance(threshold_seconds=1.0)
def train_pcd(
    data: Union[Dataset, np.ndarray],
    mask: np.ndarray,
    cfg: TrainConfig,
    history: Optional[TrainingHistory] = None,
) -> RbmModel:
    """
    Train a masked RBM with persistent contrastive divergence.

    Args
    ----
    data: Dataset or (n, n_visible) binary matrix
    mask: (n_visible, n_hidden) connectivity mask; also fixes the hidden count
    cfg: hyperparameters and seed
    history: optional TrainingHistory that receives per-epoch errors

    Returns
    -------
    RbmModel with W zero outside ``mask``

    Raises
    ------
    DimensionMismatchError: mask rows differ from the data dimensionality
    DivergentTrainingError: an update produced non-finite parameters
    """
    X = _as_matrix(data)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.shape[0] != X.shape[1]:
        raise DimensionMismatchError(
            f"mask shape {mask.shape} does not match data dimensionality {X.shape[1]}"
        )
    n, n_v = X.shape
    n_h = mask.shape[1]
    rng = make_rng(cfg.seed, "pcd")

    W = rng.normal(0.0, cfg.weight_init_std, size=(n_v, n_h)) * mask
    b_v = data_marginal_biases(X)
    b_h = np.zeros(n_h)
    chains = (rng.random((cfg.n_persistent_chains, n_v)) < expit(b_v)).astype(np.float64)
    lr = cfg.learning_rate

    logger.info(
        f"PCD: {n} images, {n_v}+{n_h} units, {int(mask.sum())} connections, "
        f"lr={lr} epochs={cfg.epochs} batch={cfg.batch_size} chains={cfg.n_persistent_chains}"
    )

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            v = X[order[start:start + cfg.batch_size]]
            ph = expit(v @ W + b_h)

            h_chain = (rng.random((len(chains), n_h)) < expit(chains @ W + b_h)).astype(np.float64)
            chains = (rng.random(chains.shape) < expit(h_chain @ W.T + b_v)).astype(np.float64)
            ph_chain = expit(chains @ W + b_h)

            W = (W + lr * (v.T @ ph / len(v) - chains.T @ ph_chain / len(chains))) * mask
            b_v = b_v + lr * (v.mean(axis=0) - chains.mean(axis=0))
            b_h = b_h + lr * (ph.mean(axis=0) - ph_chain.mean(axis=0))

            if not (np.isfinite(W).all() and np.isfinite(b_v).all() and np.isfinite(b_h).all()):
                raise DivergentTrainingError(
                    f"non-finite parameters in epoch {epoch + 1}; reduce the learning rate (lr={lr})"
                )

        recon = expit(expit(X @ W + b_h) @ W.T + b_v)
        err = float(np.mean((X - recon) ** 2))
        if history is not None:
            history.reconstruction_error.append(err)
        logger.debug(f"PCD epoch {epoch + 1}/{cfg.epochs}: reconstruction error {err:.5f}")

    logger.info(f"PCD finished after {cfg.epochs} epochs")
    return RbmModel(W, b_v, b_h, mask)
