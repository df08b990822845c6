"""
Gibbs sampling on a compiled substrate network.

``PlacedSampler`` runs the tick simulator under the control schedule and reads
one hidden sample per even half-period and one visible sample per odd
half-period from the sampler-neuron spikes inside each sampling window.
``neural_chain_stationary`` gives the exact visible-state stationary
distribution of the abstract neural-sampler Gibbs chain for small models; it
is the reference a placed network is checked against.
"""

from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from compiler import HIDDEN, LAYERS, VISIBLE, PlacedNetwork
from errors import DimensionMismatchError, InvalidParameterError
from logging_config import get_logger
from logging_decorators import log_performance
from neural_sampler import SpikeProbabilityCurve
from rbm_core import ENUMERATION_CAP, QuantizedRbm, bit_table
from substrate_sim import SimState, TickTrace, run, step_tick

logger = get_logger(__name__)


class PlacedSampler:
    """
    Runs a PlacedNetwork as a Gibbs sampler.

    Attributes
    ----------
    placed: compiled network (clamping is applied per call with ``with_clamp``)
    name: backend name used by the reconstruct command
    """

    name = "placed-substrate"

    def __init__(self, placed: PlacedNetwork):
        self.placed = placed
        self._variants: Dict[frozenset, PlacedNetwork] = {}

    def _variant(self, clamped: np.ndarray) -> PlacedNetwork:
        key = frozenset(int(i) for i in clamped)
        if key not in self._variants:
            self._variants[key] = self.placed.with_clamp(key)
        return self._variants[key]

    def _decoders(self, placed: PlacedNetwork) -> Dict[str, Dict[int, np.ndarray]]:
        """layer -> {core: neuron -> unit index or -1}."""
        decoders: Dict[str, Dict[int, np.ndarray]] = {layer: {} for layer in LAYERS}
        for layer in LAYERS:
            for unit in placed.directory[layer]:
                core, neuron = unit.sampler
                table = decoders[layer].get(core)
                if table is None:
                    table = np.full(placed.network.cores[core].n_neurons, -1, dtype=np.int64)
                    decoders[layer][core] = table
                table[neuron] = unit.unit
        return decoders

    def _prepare(self, v0: np.ndarray, clamp: Optional[np.ndarray]) -> Tuple[PlacedNetwork, np.ndarray, Optional[np.ndarray]]:
        v0 = np.asarray(v0, dtype=np.int8).reshape(-1)
        if v0.shape != (self.placed.n_visible,):
            raise DimensionMismatchError(f"v0 has {v0.size} units, network has {self.placed.n_visible} visible units")
        if clamp is not None:
            clamp = np.asarray(clamp, dtype=bool).reshape(-1)
            if clamp.shape != v0.shape:
                raise DimensionMismatchError(f"clamp has {clamp.size} units, expected {v0.size}")
            placed = self._variant(np.flatnonzero(clamp))
        else:
            placed = self._variant(np.zeros(0, dtype=np.int64))
        return placed, v0, clamp

    def schedule_for(self, v0: np.ndarray, clamp: Optional[np.ndarray] = None) -> Callable[[int], List[str]]:
        """Per-tick external events: control program plus unit inputs."""
        schedule = self.placed.schedule
        v0 = np.asarray(v0, dtype=np.int8).reshape(-1)

        def events(tick: int) -> List[str]:
            return schedule.events(tick) + schedule.input_events(tick, v0, clamp)

        return events

    def n_ticks(self, n_periods: int) -> int:
        return self.placed.schedule.START + n_periods * self.placed.schedule.image_period

    @log_performance(threshold_seconds=2.0)
    def sample_chain(
        self,
        v0: np.ndarray,
        n_periods: int,
        clamp: Optional[np.ndarray] = None,
        seed: int = 0,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Run ``n_periods`` full sweeps from visible state ``v0``.

        Args
        ----
        v0: initial visible state
        n_periods: number of image periods (one hidden and one visible sample each)
        clamp: optional boolean mask of visible units held at their ``v0`` values
        seed: base seed of the substrate random streams

        Returns
        -------
        (visible samples (n_periods, n_visible), hidden samples (n_periods, n_hidden)),
        ordered as gibbs_chain returns them
        """
        if n_periods < 1:
            raise InvalidParameterError(f"n_periods must be >= 1, got {n_periods}")
        placed, v0, clamp = self._prepare(v0, clamp)
        schedule = placed.schedule
        decoders = self._decoders(placed)
        P = schedule.layer_period
        T_A, T_S = schedule.T_A, schedule.T_S
        sizes = {VISIBLE: placed.n_visible, HIDDEN: placed.n_hidden}

        vs = np.zeros((n_periods, sizes[VISIBLE]), dtype=np.int8)
        hs = np.zeros((n_periods, sizes[HIDDEN]), dtype=np.int8)
        events = self.schedule_for(v0, clamp)
        state = SimState.initial(placed.network, seed)
        buffer = np.zeros(0, dtype=np.int8)

        for tick in range(self.n_ticks(n_periods)):
            state, fired = step_tick(placed.network, state, events(tick))
            if tick < schedule.START:
                continue
            half, offset = divmod(tick - schedule.START, P)
            layer = schedule.sampled_layer(half)
            if offset == T_A + 1:
                buffer = np.zeros(sizes[layer], dtype=np.int8)
            if T_A + 1 <= offset <= T_A + T_S:
                for core, table in decoders[layer].items():
                    units = table[fired[core]]
                    buffer[units[units >= 0]] = 1
            if offset == P - 1:
                period = half // 2
                if layer == HIDDEN:
                    hs[period] = buffer
                else:
                    vs[period] = np.where(clamp, v0, buffer) if clamp is not None else buffer

        logger.debug(f"Placed chain: {n_periods} periods, {state.tick} ticks")
        return vs, hs

    def sample(self, v0: np.ndarray, n_periods: int, clamp: Optional[np.ndarray] = None, seed: int = 0) -> np.ndarray:
        """Visible samples only."""
        return self.sample_chain(v0, n_periods, clamp, seed)[0]

    def trace(self, v0: np.ndarray, n_periods: int, clamp: Optional[np.ndarray] = None, seed: int = 0) -> TickTrace:
        """Full spike trace of a run (for timing checks and the simulate command)."""
        placed, v0, clamp = self._prepare(v0, clamp)
        return run(placed.network, self.schedule_for(v0, clamp), self.n_ticks(n_periods), seed=seed)


def _conditional(curve: SpikeProbabilityCurve, V: np.ndarray, states: np.ndarray) -> np.ndarray:
    """P(states | membrane potentials): rows of V against rows of binary ``states``."""
    p = curve(V)
    return np.prod(np.where(states[None, :, :] == 1, p[:, None, :], 1.0 - p[:, None, :]), axis=2)


def neural_chain_transition(m: QuantizedRbm, curve: SpikeProbabilityCurve) -> np.ndarray:
    """
    Visible-to-visible transition matrix of the abstract neural Gibbs chain.

    T[a, b] = sum_h P(h | v_a) P(v_b | h) with unit probabilities read from the
    spike-probability curve at the integer pre-activations.
    """
    if m.n_visible > ENUMERATION_CAP // 2 or m.n_hidden > ENUMERATION_CAP // 2:
        raise InvalidParameterError("transition matrix is limited to 12 units per layer")
    V = bit_table(m.n_visible).astype(np.int64)
    H = bit_table(m.n_hidden).astype(np.int64)
    p_h = _conditional(curve, V @ m.Wq + m.bhq, H)
    p_v = _conditional(curve, H @ m.Wq.T + m.bvq, V)
    return p_h @ p_v


def neural_chain_stationary(m: QuantizedRbm, curve: SpikeProbabilityCurve) -> np.ndarray:
    """Stationary visible distribution of the abstract chain (enumeration order)."""
    T = neural_chain_transition(m, curve)
    n = len(T)
    A = T.T - np.eye(n)
    A[-1] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()
