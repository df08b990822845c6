"""
Resource packing for the substrate compiler.

Stage-2 (quantization) neurons are linear-decrement neurons that replay a
stored weight as a spike train of at most T_A spikes, so a neuron may carry
several weight chunks as long as their total stays within T_A. This module
decides:

* how the signed weights into one destination unit are split into chunks and
  grouped onto stage-2 neurons (no optimisation, strategy 1.1, strategy 1.2);
* how destination groups share stage-2 cores and their axons (strategy 2);
* how stage-1 and stage-3 groups are packed into cores (strategy 3, first-fit
  decreasing).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import CompileError, InvalidParameterError
from logging_config import get_logger
from logging_decorators import log_performance

logger = get_logger(__name__)

MAX_DISTINCT_CHUNKS = 4
BIAS = "BIAS"

Chunk = Tuple[Hashable, int]


@dataclass
class StageTwoNeuron:
    """
    One quantization neuron.

    Attributes
    ----------
    sign: +1 or -1; applied by the stage-3 synapse the neuron drives
    chunks: (source, magnitude) pairs; magnitudes sum to at most T_A
    """

    sign: int
    chunks: List[Chunk] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(v for _, v in self.chunks)

    @property
    def values(self) -> List[int]:
        return sorted({v for _, v in self.chunks})

    @property
    def sources(self) -> List[Hashable]:
        return [s for s, _ in self.chunks]


def _entries(weights: Sequence[int], sources: Optional[Sequence[Hashable]]) -> List[Chunk]:
    if sources is None:
        sources = range(len(weights))
    if len(sources) != len(weights):
        raise InvalidParameterError(f"{len(sources)} sources for {len(weights)} weights")
    return [(s, int(w)) for s, w in zip(sources, weights) if int(w) != 0]


def _check_ta(T_A: int):
    if T_A < 1:
        raise InvalidParameterError(f"T_A must be >= 1, got {T_A}")


def pack_weights_none(weights: Sequence[int], T_A: int, sources: Optional[Sequence[Hashable]] = None) -> List[StageTwoNeuron]:
    """Baseline: every chunk of every weight gets its own neuron, sum ceil(|w| / T_A) neurons."""
    _check_ta(T_A)
    neurons = []
    for source, w in _entries(weights, sources):
        sign = 1 if w > 0 else -1
        q, r = divmod(abs(w), T_A)
        neurons.extend(StageTwoNeuron(sign, [(source, T_A)]) for _ in range(q))
        if r:
            neurons.append(StageTwoNeuron(sign, [(source, r)]))
    return neurons


def _accepts(neuron: StageTwoNeuron, value: int, T_A: int) -> bool:
    values = neuron.values
    return (
        neuron.total + value <= T_A
        and value >= max(values)
        and (value in values or len(values) < MAX_DISTINCT_CHUNKS)
    )


def _pack_entries(entries: Iterable[Chunk], T_A: int) -> List[StageTwoNeuron]:
    neurons: List[StageTwoNeuron] = []
    current: Dict[int, StageTwoNeuron] = {}
    for source, w in entries:
        sign = 1 if w > 0 else -1
        q, r = divmod(abs(w), T_A)
        # full chunks first, remainder last
        neurons.extend(StageTwoNeuron(sign, [(source, T_A)]) for _ in range(q))
        if not r:
            continue
        open_neuron = current.get(sign)
        if open_neuron is not None and _accepts(open_neuron, r, T_A):
            open_neuron.chunks.append((source, r))
        else:
            fresh = StageTwoNeuron(sign, [(source, r)])
            neurons.append(fresh)
            current[sign] = fresh
    return neurons


def pack_weights_s11(weights: Sequence[int], T_A: int, sources: Optional[Sequence[Hashable]] = None) -> List[StageTwoNeuron]:
    """
    Strategy 1.1: connect a neuron to as many sources as its T_A budget allows.

    Weights are taken in the given order and split into T_A-sized chunks plus
    a remainder. Full chunks occupy dedicated neurons. A remainder joins the
    open neuron of its sign when it fits in the budget, is no smaller than the
    chunks already there and keeps the neuron within four distinct chunk
    values; otherwise it opens a new neuron.

    Example
    -------
        >>> len(pack_weights_s11([1, 2, 3, 4, 5, 6], 4))
        6
        >>> len(pack_weights_s11([6, 5, 4, 3, 2, 1], 4))
        7
    """
    _check_ta(T_A)
    return _pack_entries(_entries(weights, sources), T_A)


def central_order(entries: Sequence[Chunk], central_weight: int) -> List[Chunk]:
    """Entries sorted by distance of the signed weight from ``central_weight``; ties to the smaller weight."""
    return sorted(entries, key=lambda e: (abs(e[1] - central_weight), e[1]))


def pack_weights_s12(
    weights: Sequence[int], T_A: int, central_weight: int, sources: Optional[Sequence[Hashable]] = None
) -> List[StageTwoNeuron]:
    """Strategy 1.2: strategy 1.1 applied after ordering weights by closeness to ``central_weight``."""
    _check_ta(T_A)
    return _pack_entries(central_order(_entries(weights, sources), central_weight), T_A)


def count_neurons(weight_lists: Sequence[Sequence[int]], T_A: int, strategy: str, central_weight: Optional[int] = None) -> int:
    packer = {
        "none": lambda w: pack_weights_none(w, T_A),
        "s1_1": lambda w: pack_weights_s11(w, T_A),
        "s1_2": lambda w: pack_weights_s12(w, T_A, central_weight),
    }.get(strategy)
    if packer is None:
        raise InvalidParameterError(f"unknown packing strategy {strategy!r}")
    return sum(len(packer(w)) for w in weight_lists)


@log_performance(threshold_seconds=2.0)
def sweep_central_weight(
    weight_lists: Sequence[Sequence[int]],
    T_A: int,
    candidates: Optional[Sequence[int]] = None,
    threads: int = 1,
) -> Tuple[int, Dict[int, int]]:
    """
    Total strategy-1.2 neuron count for every candidate central weight.

    Args
    ----
    weight_lists: signed weights per destination unit (bias included)
    T_A: accumulation budget
    candidates: central weights to try; defaults to 1 .. 2 * T_A

    Returns
    -------
    (best central weight, {central weight: neuron count}); equal counts go to
    the smaller central weight
    """
    _check_ta(T_A)
    candidates = list(range(1, 2 * T_A + 1)) if candidates is None else list(candidates)
    if not candidates:
        raise InvalidParameterError("no central-weight candidates")

    def count(c):
        return count_neurons(weight_lists, T_A, "s1_2", c)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            totals = list(pool.map(count, candidates))
    else:
        totals = [count(c) for c in candidates]
    counts = dict(zip(candidates, totals))
    best = min(candidates, key=lambda c: (counts[c], c))
    logger.debug(f"central-weight sweep: best c={best} with {counts[best]} neurons")
    return best, counts


def conservation_violations(weights: Sequence[int], neurons: Sequence[StageTwoNeuron], T_A: int,
                            sources: Optional[Sequence[Hashable]] = None) -> List[str]:
    """Check per-source chunk sums against |w|, sign separation and the T_A budget."""
    problems = []
    expected = {s: w for s, w in _entries(weights, sources)}
    realised: Dict[Hashable, int] = {}
    for k, neuron in enumerate(neurons):
        if neuron.total > T_A:
            problems.append(f"neuron {k} carries {neuron.total} > T_A={T_A}")
        if len(neuron.values) > MAX_DISTINCT_CHUNKS:
            problems.append(f"neuron {k} carries {len(neuron.values)} distinct chunk values")
        for source, value in neuron.chunks:
            realised[source] = realised.get(source, 0) + neuron.sign * value
    for source in set(expected) | set(realised):
        if expected.get(source, 0) != realised.get(source, 0):
            problems.append(f"source {source}: weight {expected.get(source, 0)} realised as {realised.get(source, 0)}")
    return problems


# --- strategy 2: stage-2 core placement ---------------------------------------

@dataclass
class UnitGroup:
    """Stage-2 neurons that feed one destination unit."""

    dest: int
    neurons: List[StageTwoNeuron]

    @property
    def sources(self) -> set:
        return {s for n in self.neurons for s in n.sources}


@dataclass
class PlacedStageTwo:
    """A stage-2 neuron inside a core: its weight table and the axons of its chunks."""

    dest: int
    neuron: StageTwoNeuron
    table: List[Optional[int]]
    axons: List[int]


@dataclass
class StageTwoCore:
    """
    Layout of one stage-2 core.

    Attributes
    ----------
    axons: axon keys (source, type); the type is the weight-table slot
    neurons: placed neurons in index order
    """

    axons: List[Tuple[Hashable, ...]] = field(default_factory=list)
    neurons: List[PlacedStageTwo] = field(default_factory=list)
    axon_index: Dict[Tuple[Hashable, ...], int] = field(default_factory=dict)

    def axon_type(self, k: int) -> int:
        return int(self.axons[k][1])

    @property
    def sources(self) -> set:
        return {key[0] for key in self.axons}


def _plan_neuron(core: StageTwoCore, neuron: StageTwoNeuron, share: bool, pending: Dict, serial: List[int]):
    """Choose slot and axon key per chunk; returns (table, keys) or None when not representable."""
    table: List[Optional[int]] = [None] * MAX_DISTINCT_CHUNKS
    keys = []
    for source, value in neuron.chunks:
        slot = None
        if share:
            for g in range(MAX_DISTINCT_CHUNKS):
                key = (source, g)
                if key in core.axon_index or key in pending:
                    if table[g] == value or (table[g] is None and value not in table):
                        if key not in keys:
                            slot = g
                            break
        if slot is None:
            if value in table:
                slot = table.index(value)
            elif None in table:
                slot = table.index(None)
            else:
                return None
        table[slot] = value
        if share:
            key = (source, slot)
            if key in keys:
                raise CompileError(f"neuron uses source {source!r} twice on slot {slot}")
        else:
            serial[0] += 1
            key = (source, slot, serial[0])
        keys.append(key)
    return table, keys


def _try_place(core: StageTwoCore, neurons: Sequence[Tuple[int, StageTwoNeuron]], share: bool,
               max_axons: int, max_neurons: int, serial: List[int]) -> bool:
    if len(core.neurons) + len(neurons) > max_neurons:
        return False
    pending: Dict[Tuple, None] = {}
    plans = []
    for dest, neuron in neurons:
        plan = _plan_neuron(core, neuron, share, pending, serial)
        if plan is None:
            raise CompileError(f"stage-2 neuron for unit {dest} needs more than {MAX_DISTINCT_CHUNKS} weight values")
        for key in plan[1]:
            if key not in core.axon_index:
                pending[key] = None
        plans.append(plan)
    if len(core.axons) + len(pending) > max_axons:
        return False
    for key in pending:
        core.axon_index[key] = len(core.axons)
        core.axons.append(key)
    for (dest, neuron), (table, keys) in zip(neurons, plans):
        core.neurons.append(PlacedStageTwo(dest, neuron, table, [core.axon_index[k] for k in keys]))
    return True


def _place_split(cores: List[StageTwoCore], group: UnitGroup, share: bool, max_axons: int,
                 max_neurons: int, serial: List[int]) -> StageTwoCore:
    """Place a group neuron by neuron, opening cores as needed; returns the last core used."""
    core = cores[-1]
    for neuron in group.neurons:
        if not _try_place(core, [(group.dest, neuron)], share, max_axons, max_neurons, serial):
            core = StageTwoCore()
            cores.append(core)
            if not _try_place(core, [(group.dest, neuron)], share, max_axons, max_neurons, serial):
                raise CompileError(f"a single stage-2 neuron of unit {group.dest} exceeds core capacity")
    return core


@log_performance(threshold_seconds=2.0)
def pack_units_s2(
    groups: Sequence[UnitGroup],
    share: bool = True,
    max_axons: int = 256,
    max_neurons: int = 256,
    n_sources: Optional[int] = None,
    max_candidates: int = 32,
) -> List[StageTwoCore]:
    """
    Place destination groups into stage-2 cores.

    With ``share`` (strategy 2) the next group added to an open core is the
    one with the most source units already present there; its chunks reuse
    existing (source, type) axons wherever the neuron's weight table allows.
    Without it, groups are placed in order, next-fit, each chunk on its own
    axon. A group larger than an empty core is split across cores.
    """
    groups = [g for g in groups if g.neurons]
    serial = [0]
    cores: List[StageTwoCore] = []
    if not groups:
        return cores

    source_ids: Dict[Hashable, int] = {}
    for g in groups:
        for s in sorted(g.sources, key=str):
            source_ids.setdefault(s, len(source_ids))
    incidence = np.zeros((len(groups), max(len(source_ids), 1)), dtype=np.int64)
    for k, g in enumerate(groups):
        incidence[k, [source_ids[s] for s in g.sources]] = 1

    alive = np.ones(len(groups), dtype=bool)
    next_in_order = 0
    while alive.any():
        while not alive[next_in_order]:
            next_in_order += 1
        seed = next_in_order
        alive[seed] = False
        cores.append(StageTwoCore())
        core = _place_split(cores, groups[seed], share, max_axons, max_neurons, serial)

        while alive.any() and len(core.neurons) < max_neurons:
            if share:
                present = np.zeros(incidence.shape[1], dtype=np.int64)
                idx = [source_ids[s] for s in core.sources]
                present[idx] = 1
                scores = np.where(alive, incidence @ present, -1)
                order = np.argsort(-scores, kind="stable")[:max_candidates]
                order = [k for k in order if alive[k]]
            else:
                order = [int(np.flatnonzero(alive)[0])]
            placed = False
            for k in order:
                members = [(groups[k].dest, n) for n in groups[k].neurons]
                if _try_place(core, members, share, max_axons, max_neurons, serial):
                    alive[k] = False
                    placed = True
                    break
            if not placed:
                break

    logger.debug(
        f"stage-2 placement: {sum(len(g.neurons) for g in groups)} neurons in {len(cores)} cores "
        f"(sharing {'on' if share else 'off'})"
    )
    return cores


# --- strategy 3: core packing -------------------------------------------------

def pack_cores_naive(sizes: Sequence[int]) -> List[List[int]]:
    """One group per core."""
    return [[k] for k in range(len(sizes))]


def pack_cores_s3(
    sizes: Sequence[int],
    capacity: int = 256,
    secondary: Optional[Sequence[int]] = None,
    secondary_capacity: Optional[int] = None,
) -> List[List[int]]:
    """
    First-fit decreasing by resource footprint.

    Groups are taken largest first (ties by index) and put into the first core
    with room for both the primary and the optional secondary resource; a new
    core opens only when none fits.

    Returns
    -------
    List of cores, each a list of group indices

    Raises
    ------
    CompileError: a group alone exceeds the capacity
    """
    secondary = [0] * len(sizes) if secondary is None else list(secondary)
    sec_cap = secondary_capacity if secondary_capacity is not None else max(secondary + [0])
    bins: List[List[int]] = []
    used: List[Tuple[int, int]] = []
    for k in sorted(range(len(sizes)), key=lambda i: (-sizes[i], i)):
        if sizes[k] > capacity or secondary[k] > sec_cap:
            raise CompileError(f"group {k} needs {sizes[k]} of {capacity} core resources")
        for b, (p, s) in enumerate(used):
            if p + sizes[k] <= capacity and s + secondary[k] <= sec_cap:
                bins[b].append(k)
                used[b] = (p + sizes[k], s + secondary[k])
                break
        else:
            bins.append([k])
            used.append((sizes[k], secondary[k]))
    return bins
