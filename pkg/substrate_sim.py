"""
Tick-accurate simulator of a digital neurosynaptic substrate.

A core joins up to 256 axons to up to 256 neurons through a binary crossbar.
Each axon carries one of four types and each neuron holds a four-entry signed
weight table indexed by that type. Per tick and per neuron, in order:

1. synaptic integration over the axons active this tick
2. leak: deterministic ``+lambda`` or stochastic ``sign(lambda) * F`` with
   ``F = |lambda| >= rho`` (hardware) or ``|lambda| > rho`` (half), rho uniform 8-bit
3. threshold test against ``alpha + eta``, eta uniform in [0, 2^M - 1]
4. spike and reset (to R, linear decrement by alpha, or no reset)

Saturations clip after each update. A spike emitted at tick t reaches its
destination axon at tick t + 1. Random words come from counter-based Philox
blocks keyed by (seed, core) and indexed by tick: words [0, 256) feed the leak
comparisons and words [256, 512) the threshold draws.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from artifacts import atomic_write_text, write_csv
from errors import InvalidParameterError, MissingPrerequisiteError, ModelFormatError, RoutingError
from logging_config import get_logger
from logging_decorators import log_exceptions, log_function_calls, log_performance
from rng_streams import CounterStream

logger = get_logger(__name__)

CORE_AXONS = 256
CORE_NEURONS = 256
N_AXON_TYPES = 4
WEIGHT_MIN = -256
WEIGHT_MAX = 255
RNG_WORDS = 512
ETA_OFFSET = 256

NETWORK_FORMAT = "neuro_rbm.network"
NETWORK_VERSION = 1

_FAR = np.int64(1) << 40


class ResetMode(str, Enum):
    TO_R = "to_R"
    LINEAR_DECREMENT = "linear_decrement"
    NON_RESET = "non_reset"


class LeakMode(str, Enum):
    """Stochastic-leak comparison: ``hardware`` fires on |lambda| >= rho, ``half`` on |lambda| > rho."""

    HARDWARE = "hardware"
    HALF = "half"


@dataclass(frozen=True)
class NeuronParams:
    """
    Parameter block of one neuron.

    Attributes
    ----------
    weights: signed 9-bit weights indexed by axon type
    leak: signed 9-bit leak lambda
    stochastic_leak: leak mode flag c (False deterministic, True stochastic)
    alpha: threshold base
    M: threshold randomness bits
    R: reset potential
    reset_mode: to_R, linear_decrement or non_reset
    neg_saturation / pos_saturation: optional potential floor / ceiling
    initial_potential: membrane potential at power-on
    """

    weights: Tuple[int, int, int, int] = (0, 0, 0, 0)
    leak: int = 0
    stochastic_leak: bool = False
    alpha: int = 1
    M: int = 0
    R: int = 0
    reset_mode: ResetMode = ResetMode.TO_R
    neg_saturation: Optional[int] = None
    pos_saturation: Optional[int] = None
    initial_potential: int = 0

    def to_dict(self) -> Dict:
        return {
            "weights": [int(w) for w in self.weights],
            "leak": int(self.leak),
            "stochastic_leak": bool(self.stochastic_leak),
            "alpha": int(self.alpha),
            "M": int(self.M),
            "R": int(self.R),
            "reset_mode": ResetMode(self.reset_mode).value,
            "neg_saturation": self.neg_saturation,
            "pos_saturation": self.pos_saturation,
            "initial_potential": int(self.initial_potential),
        }

    @classmethod
    def from_dict(cls, doc: Dict) -> "NeuronParams":
        try:
            weights = tuple(int(w) for w in doc["weights"])
            if len(weights) != N_AXON_TYPES:
                raise ModelFormatError(f"neuron weight table must have {N_AXON_TYPES} entries")
            return cls(
                weights=weights,
                leak=int(doc.get("leak", 0)),
                stochastic_leak=bool(doc.get("stochastic_leak", False)),
                alpha=int(doc.get("alpha", 1)),
                M=int(doc.get("M", 0)),
                R=int(doc.get("R", 0)),
                reset_mode=ResetMode(doc.get("reset_mode", "to_R")),
                neg_saturation=doc.get("neg_saturation"),
                pos_saturation=doc.get("pos_saturation"),
                initial_potential=int(doc.get("initial_potential", 0)),
            )
        except (KeyError, ValueError, TypeError) as e:
            if isinstance(e, ModelFormatError):
                raise
            raise ModelFormatError(f"malformed neuron block: {e}") from e


@dataclass(frozen=True)
class Route:
    """Spike destination of one neuron: (source core, neuron) -> (destination core, axon)."""

    source_core: int
    source_neuron: int
    dest_core: int
    dest_axon: int


@dataclass
class Core:
    """
    One neurosynaptic core.

    Attributes
    ----------
    name: label used in reports (e.g. "L1-visible-3")
    axon_types: type G_i in 0..3 of every axon
    crossbar: boolean (n_axons, n_neurons) connectivity
    neurons: parameter block per neuron
    routes: outbound routes of this core's neurons
    intended: optional signed (n_axons, n_neurons) weights the core is meant to
        realise; the validator compares it against the type tables
    """

    name: str
    axon_types: np.ndarray
    crossbar: np.ndarray
    neurons: List[NeuronParams]
    routes: List[Route] = field(default_factory=list)
    intended: Optional[np.ndarray] = None

    def __post_init__(self):
        self.axon_types = np.asarray(self.axon_types, dtype=np.int64).reshape(-1)
        self.crossbar = np.asarray(self.crossbar, dtype=bool).reshape(len(self.axon_types), len(self.neurons))
        if self.intended is not None:
            self.intended = np.asarray(self.intended, dtype=np.int64)

    @property
    def n_axons(self) -> int:
        return len(self.axon_types)

    @property
    def n_neurons(self) -> int:
        return len(self.neurons)

    def weight_tables(self) -> np.ndarray:
        """(n_neurons, 4) weight tables."""
        if not self.neurons:
            return np.zeros((0, N_AXON_TYPES), dtype=np.int64)
        return np.array([n.weights for n in self.neurons], dtype=np.int64)

    def effective_weights(self) -> np.ndarray:
        """Realised signed weights s_j^{G_i} on connected synapses, zero elsewhere."""
        tables = self.weight_tables()
        if self.n_axons == 0 or self.n_neurons == 0:
            return np.zeros((self.n_axons, self.n_neurons), dtype=np.int64)
        types = np.clip(self.axon_types, 0, N_AXON_TYPES - 1)
        return np.where(self.crossbar, tables[:, types].T, 0)


@dataclass
class _CoreKernel:
    """Array form of a core for the tick loop."""

    eff: np.ndarray
    axon_offset: int
    n_axons: int
    leak: np.ndarray
    stochastic: np.ndarray
    alpha: np.ndarray
    eta_mask: np.ndarray
    R: np.ndarray
    to_r: np.ndarray
    linear: np.ndarray
    floor: np.ndarray
    ceiling: np.ndarray
    route_global: np.ndarray
    needs_rng: bool


@dataclass
class Network:
    """
    Cores plus named external-input axons.

    Attributes
    ----------
    cores: cores in index order
    external_inputs: name -> (core, axon) for externally driven axons
    leak_mode: stochastic-leak comparison used by every core
    """

    cores: List[Core] = field(default_factory=list)
    external_inputs: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    leak_mode: LeakMode = LeakMode.HARDWARE

    @property
    def routes(self) -> List[Route]:
        return [r for core in self.cores for r in core.routes]

    @cached_property
    def axon_offsets(self) -> np.ndarray:
        sizes = [c.n_axons for c in self.cores]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64) if sizes else np.zeros(1, np.int64)

    @property
    def n_axons_total(self) -> int:
        return int(self.axon_offsets[-1])

    def global_axon(self, core: int, axon: int) -> int:
        if not (0 <= core < len(self.cores)) or not (0 <= axon < self.cores[core].n_axons):
            raise RoutingError(f"no axon {axon} on core {core}")
        return int(self.axon_offsets[core] + axon)

    def resolve(self, event: Union[str, Tuple[int, int]]) -> int:
        """Global axon index of an event given as (core, axon) or an external-input name."""
        if isinstance(event, str):
            if event not in self.external_inputs:
                raise RoutingError(f"unknown external input {event!r}")
            event = self.external_inputs[event]
        core, axon = event
        return self.global_axon(int(core), int(axon))

    @cached_property
    def kernels(self) -> List[_CoreKernel]:
        return [self._kernel(i, core) for i, core in enumerate(self.cores)]

    def _kernel(self, index: int, core: Core) -> _CoreKernel:
        n = core.n_neurons
        params = core.neurons
        route_global = np.full(n, -1, dtype=np.int64)
        for route in core.routes:
            j = route.source_neuron
            if not 0 <= j < n:
                raise RoutingError(f"core {index}: route from nonexistent neuron {j}")
            if route_global[j] >= 0:
                raise RoutingError(f"core {index}: neuron {j} has more than one route")
            route_global[j] = self.global_axon(route.dest_core, route.dest_axon)

        def arr(values, dtype=np.int64):
            return np.array(values, dtype=dtype) if n else np.zeros(0, dtype=dtype)

        stochastic = arr([p.stochastic_leak for p in params], bool)
        M = arr([p.M for p in params])
        return _CoreKernel(
            eff=core.effective_weights().astype(np.int64),
            axon_offset=int(self.axon_offsets[index]),
            n_axons=core.n_axons,
            leak=arr([p.leak for p in params]),
            stochastic=stochastic,
            alpha=arr([p.alpha for p in params]),
            eta_mask=(np.left_shift(np.uint64(1), M.astype(np.uint64)) - np.uint64(1)).astype(np.uint64),
            R=arr([p.R for p in params]),
            to_r=arr([ResetMode(p.reset_mode) is ResetMode.TO_R for p in params], bool),
            linear=arr([ResetMode(p.reset_mode) is ResetMode.LINEAR_DECREMENT for p in params], bool),
            floor=arr([-_FAR if p.neg_saturation is None else p.neg_saturation for p in params]),
            ceiling=arr([_FAR if p.pos_saturation is None else p.pos_saturation for p in params]),
            route_global=route_global,
            needs_rng=bool(stochastic.any() or (M > 0).any()),
        )


@dataclass
class SimState:
    """
    Mutable simulation state.

    Attributes
    ----------
    tick: index of the next tick to execute
    potentials: membrane potentials per core
    inbox: global axon activity for the next tick (routed spikes)
    streams: counter-based random streams per core
    """

    tick: int
    potentials: List[np.ndarray]
    inbox: np.ndarray
    streams: List[CounterStream]

    @classmethod
    def initial(cls, network: Network, seed: int) -> "SimState":
        potentials = [
            np.array([p.initial_potential for p in core.neurons], dtype=np.int64) for core in network.cores
        ]
        streams = [CounterStream(seed, f"core-{i}") for i in range(len(network.cores))]
        return cls(0, potentials, np.zeros(network.n_axons_total, dtype=bool), streams)


def debug_set_potential(state: SimState, core: int, neuron: int, value: int):
    """Overwrite a membrane potential directly. Debugging aid only."""
    logger.warning(f"debug_set_potential: core {core} neuron {neuron} forced to {value}")
    state.potentials[core][neuron] = value


def step_tick(
    network: Network,
    state: SimState,
    external_events: Iterable[Union[str, Tuple[int, int]]] = (),
) -> Tuple[SimState, List[np.ndarray]]:
    """
    Advance the substrate by one tick.

    Args
    ----
    network: the configured substrate
    state: current state; updated in place
    external_events: (core, axon) pairs or external-input names active this tick

    Returns
    -------
    (state, fired) where ``fired[c]`` holds the indices of core c's neurons
    that spiked this tick

    Raises
    ------
    RoutingError: an event addresses a nonexistent axon
    """
    active = state.inbox
    for event in external_events:
        active[network.resolve(event)] = True

    next_inbox = np.zeros_like(active)
    strict = LeakMode(network.leak_mode) is LeakMode.HALF
    fired_all: List[np.ndarray] = []

    for c, kern in enumerate(network.kernels):
        V = state.potentials[c]
        if V.size == 0:
            fired_all.append(np.zeros(0, dtype=np.int64))
            continue

        axons = np.flatnonzero(active[kern.axon_offset:kern.axon_offset + kern.n_axons])
        if axons.size:
            V = V + kern.eff[axons].sum(axis=0)
        V = np.clip(V, kern.floor, kern.ceiling)

        n = V.size
        if kern.needs_rng:
            words = state.streams[c].block(state.tick, RNG_WORDS)
            rho = (words[:n] & np.uint64(0xFF)).astype(np.int64)
            eta = (words[ETA_OFFSET:ETA_OFFSET + n] & kern.eta_mask).astype(np.int64)
        else:
            rho = None
            eta = 0

        V = V + np.where(kern.stochastic, 0, kern.leak)
        if rho is not None and kern.stochastic.any():
            magnitude = np.abs(kern.leak)
            hit = magnitude > rho if strict else magnitude >= rho
            V = V + np.where(kern.stochastic & hit, np.sign(kern.leak), 0)
        V = np.clip(V, kern.floor, kern.ceiling)

        fired = V >= kern.alpha + eta
        V = np.where(fired & kern.to_r, kern.R, V)
        V = np.where(fired & kern.linear, V - kern.alpha, V)
        V = np.clip(V, kern.floor, kern.ceiling)
        state.potentials[c] = V

        idx = np.flatnonzero(fired)
        fired_all.append(idx)
        if idx.size:
            targets = kern.route_global[idx]
            next_inbox[targets[targets >= 0]] = True

    state.inbox = next_inbox
    state.tick += 1
    return state, fired_all


Schedule = Union[None, Mapping[int, Sequence], Callable[[int], Iterable]]


def _events_for(schedule: Schedule, tick: int) -> Iterable:
    if schedule is None:
        return ()
    if callable(schedule):
        return schedule(tick) or ()
    return schedule.get(tick, ())


@dataclass
class TickTrace:
    """
    Spike events and probed potentials of a run.

    Attributes
    ----------
    n_ticks: number of ticks simulated
    spikes: int64 array (k, 3) of (tick, core, neuron), sorted
    potentials: (core, neuron) -> potentials after each tick
    """

    n_ticks: int
    spikes: np.ndarray
    potentials: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)

    def spike_count(self, core: int, neuron: int) -> int:
        sel = (self.spikes[:, 1] == core) & (self.spikes[:, 2] == neuron)
        return int(sel.sum())

    def spike_ticks(self, core: int, neuron: int) -> np.ndarray:
        sel = (self.spikes[:, 1] == core) & (self.spikes[:, 2] == neuron)
        return self.spikes[sel, 0]


@log_performance(threshold_seconds=2.0)
def run(
    network: Network,
    schedule: Schedule,
    n_ticks: int,
    probes: Sequence[Tuple[int, int]] = (),
    seed: int = 0,
    state: Optional[SimState] = None,
) -> TickTrace:
    """
    Simulate ``n_ticks`` ticks.

    Args
    ----
    network: substrate configuration
    schedule: external events per tick, as a mapping tick -> events or a callable
    n_ticks: ticks to run (>= 1)
    probes: (core, neuron) pairs whose potentials are recorded every tick
    seed: base seed of the per-core random streams
    state: optional state to continue from

    Returns
    -------
    TickTrace with every spike sorted by (tick, core, neuron)
    """
    if n_ticks < 1:
        raise InvalidParameterError(f"n_ticks must be >= 1, got {n_ticks}")
    state = state if state is not None else SimState.initial(network, seed)
    recorded = {probe: np.zeros(n_ticks, dtype=np.int64) for probe in probes}
    rows: List[np.ndarray] = []
    start = state.tick

    for k in range(n_ticks):
        tick = state.tick
        state, fired = step_tick(network, state, _events_for(schedule, tick))
        for c, idx in enumerate(fired):
            if idx.size:
                rows.append(np.column_stack([np.full(idx.size, tick), np.full(idx.size, c), idx]))
        for (c, j) in recorded:
            recorded[(c, j)][k] = state.potentials[c][j]

    spikes = np.concatenate(rows).astype(np.int64) if rows else np.zeros((0, 3), dtype=np.int64)
    if len(spikes):
        spikes = spikes[np.lexsort((spikes[:, 2], spikes[:, 1], spikes[:, 0]))]
    logger.debug(f"Simulated ticks {start}..{state.tick - 1}: {len(spikes)} spikes")
    return TickTrace(n_ticks, spikes, recorded)


def _check_range(value: int, lo: int, hi: int) -> bool:
    return lo <= value <= hi


def validate_core(core: Core, index: Optional[int] = None) -> List[str]:
    """
    Report configuration violations of one core.

    Checks axon/neuron index overflow, axon types, parameter ranges, whether
    every intended synaptic weight is expressible through the neuron's
    four-entry table and the core's axon types, and neurons with more than one
    route. Returns an empty list for a valid core.
    """
    where = f"core {index if index is not None else core.name}"
    violations: List[str] = []

    if core.n_axons > CORE_AXONS:
        violations.append(f"{where}: {core.n_axons} axons exceed {CORE_AXONS}")
    if core.n_neurons > CORE_NEURONS:
        violations.append(f"{where}: {core.n_neurons} neurons exceed {CORE_NEURONS}")
    bad_types = np.flatnonzero((core.axon_types < 0) | (core.axon_types >= N_AXON_TYPES))
    for i in bad_types:
        violations.append(f"{where}: axon {i} has type {core.axon_types[i]} outside 0..{N_AXON_TYPES - 1}")

    for j, p in enumerate(core.neurons):
        if len(p.weights) != N_AXON_TYPES:
            violations.append(f"{where} neuron {j}: weight table has {len(p.weights)} entries")
        for g, w in enumerate(p.weights):
            if not _check_range(w, WEIGHT_MIN, WEIGHT_MAX):
                violations.append(f"{where} neuron {j}: weight[{g}]={w} outside 9-bit range")
        if not _check_range(p.leak, WEIGHT_MIN, WEIGHT_MAX):
            violations.append(f"{where} neuron {j}: leak {p.leak} outside 9-bit range")
        if p.alpha < 0 or p.M < 0:
            violations.append(f"{where} neuron {j}: alpha={p.alpha} M={p.M} must be non-negative")
        if p.pos_saturation is not None and p.alpha + (2 ** max(p.M, 0) - 1) > p.pos_saturation:
            violations.append(
                f"{where} neuron {j}: alpha + 2^M - 1 = {p.alpha + 2 ** p.M - 1} exceeds "
                f"positive saturation {p.pos_saturation}"
            )
        if (
            p.neg_saturation is not None
            and p.pos_saturation is not None
            and p.neg_saturation > p.pos_saturation
        ):
            violations.append(f"{where} neuron {j}: negative saturation above positive saturation")

    if core.intended is not None:
        if core.intended.shape != core.crossbar.shape:
            violations.append(
                f"{where}: intended weights {core.intended.shape} do not match crossbar {core.crossbar.shape}"
            )
        else:
            realised = core.effective_weights()
            for j in range(core.n_neurons):
                needed = core.intended[:, j]
                distinct = np.unique(needed[needed != 0])
                if len(distinct) > N_AXON_TYPES:
                    violations.append(
                        f"{where} neuron {j}: requires {len(distinct)} distinct weights, "
                        f"at most {N_AXON_TYPES} are expressible"
                    )
                    continue
                wrong = np.flatnonzero((needed != 0) & ((~core.crossbar[:, j]) | (realised[:, j] != needed)))
                for i in wrong:
                    violations.append(
                        f"{where} neuron {j} axon {i}: needs weight {needed[i]}, realises {realised[i, j]}"
                    )
                unexpected = np.flatnonzero(core.crossbar[:, j] & (needed == 0))
                for i in unexpected:
                    violations.append(f"{where} neuron {j} axon {i}: unexpected synapse")

    seen: Dict[int, int] = {}
    for route in core.routes:
        j = route.source_neuron
        if not 0 <= j < core.n_neurons:
            violations.append(f"{where}: route from neuron index {j} outside 0..{core.n_neurons - 1}")
        if not 0 <= route.dest_axon < CORE_AXONS:
            violations.append(f"{where} neuron {j}: route to axon index {route.dest_axon} overflows")
        seen[j] = seen.get(j, 0) + 1
    for j, count in sorted(seen.items()):
        if count > 1:
            violations.append(f"{where} neuron {j}: {count} routes, at most one allowed")
    return violations


def validate_network(network: Network) -> List[str]:
    """validate_core over every core plus route-target and external-input checks."""
    violations: List[str] = []
    for i, core in enumerate(network.cores):
        violations.extend(validate_core(core, i))
        for route in core.routes:
            dest = route.dest_core
            if not 0 <= dest < len(network.cores) or not 0 <= route.dest_axon < network.cores[dest].n_axons:
                violations.append(
                    f"core {i} neuron {route.source_neuron}: route to nonexistent axon "
                    f"{route.dest_axon} on core {dest}"
                )
    for name, (c, a) in sorted(network.external_inputs.items()):
        if not 0 <= c < len(network.cores) or not 0 <= a < network.cores[c].n_axons:
            violations.append(f"external input {name!r}: nonexistent axon {a} on core {c}")
    return violations


def _row_hex(row: np.ndarray) -> str:
    return np.packbits(row.astype(np.uint8)).tobytes().hex()


def network_to_dict(network: Network) -> Dict:
    cores = []
    for core in network.cores:
        doc = {
            "name": core.name,
            "n_axons": core.n_axons,
            "n_neurons": core.n_neurons,
            "axon_types": core.axon_types.tolist(),
            "crossbar": [_row_hex(row) for row in core.crossbar],
            "neurons": [p.to_dict() for p in core.neurons],
            "routes": [[r.source_neuron, r.dest_core, r.dest_axon] for r in core.routes],
        }
        if core.intended is not None:
            i, j = np.nonzero(core.intended)
            doc["synapses"] = [[int(a), int(b), int(core.intended[a, b])] for a, b in zip(i, j)]
        cores.append(doc)
    return {
        "format": NETWORK_FORMAT,
        "version": NETWORK_VERSION,
        "leak_mode": LeakMode(network.leak_mode).value,
        "cores": cores,
        "external_inputs": {k: list(v) for k, v in sorted(network.external_inputs.items())},
    }


def network_from_dict(doc: Dict) -> Network:
    """
    Parse the structured network document.

    Raises
    ------
    ModelFormatError: wrong format tag or version, or malformed core blocks
    """
    if doc.get("format") != NETWORK_FORMAT:
        raise ModelFormatError(f"not a network document (format={doc.get('format')!r})")
    if doc.get("version") != NETWORK_VERSION:
        raise ModelFormatError(f"unsupported network version {doc.get('version')}")
    cores = []
    for c, cdoc in enumerate(doc.get("cores", [])):
        try:
            n_axons = int(cdoc["n_axons"])
            n_neurons = int(cdoc["n_neurons"])
            rows = cdoc["crossbar"]
            if len(rows) != n_axons:
                raise ModelFormatError(f"core {c}: {len(rows)} crossbar rows for {n_axons} axons")
            crossbar = np.zeros((n_axons, n_neurons), dtype=bool)
            for i, text in enumerate(rows):
                bits = np.unpackbits(np.frombuffer(bytes.fromhex(text), dtype=np.uint8)).astype(bool)
                if bits[n_neurons:].any():
                    raise ModelFormatError(
                        f"core {c} axon {i}: crossbar row connects neuron index >= {n_neurons}"
                    )
                if len(bits) < n_neurons:
                    raise ModelFormatError(f"core {c} axon {i}: crossbar row too short")
                crossbar[i] = bits[:n_neurons]
            neurons = [NeuronParams.from_dict(n) for n in cdoc["neurons"]]
            if len(neurons) != n_neurons:
                raise ModelFormatError(f"core {c}: {len(neurons)} neuron blocks for {n_neurons} neurons")
            routes = [Route(c, int(j), int(dc), int(da)) for j, dc, da in cdoc.get("routes", [])]
            intended = None
            if cdoc.get("synapses") is not None:
                intended = np.zeros((n_axons, n_neurons), dtype=np.int64)
                for a, b, w in cdoc["synapses"]:
                    intended[int(a), int(b)] = int(w)
        except (KeyError, ValueError, TypeError, IndexError) as e:
            if isinstance(e, ModelFormatError):
                raise
            raise ModelFormatError(f"core {c}: malformed block ({e})") from e
        cores.append(Core(cdoc.get("name", f"core-{c}"), cdoc["axon_types"], crossbar, neurons, routes, intended))
    external = {k: (int(v[0]), int(v[1])) for k, v in doc.get("external_inputs", {}).items()}
    return Network(cores, external, LeakMode(doc.get("leak_mode", "hardware")))


@log_function_calls(include_params=True, include_result=False)
def save_network(network: Network, path: Union[str, Path]) -> Path:
    """Write the network file (versioned JSON) atomically."""
    path = Path(path)
    atomic_write_text(path, json.dumps(network_to_dict(network), indent=1))
    logger.info(f"Saved network with {len(network.cores)} cores to {path}")
    return path


@log_exceptions("Network load failed")
def load_network(path: Union[str, Path]) -> Network:
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(f"network file not found: {path} (run the 'map' command first)")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"network file {path} is not valid JSON: {e}") from e
    return network_from_dict(doc)


def write_trace_csv(trace: TickTrace, path: Union[str, Path]) -> Path:
    """Trace file: one row per spike, header ``tick,core,neuron``."""
    return write_csv(path, ["tick", "core", "neuron"], trace.spikes.tolist())
