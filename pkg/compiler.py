"""
Compiler from a quantized RBM to the neurosynaptic substrate.

Every layer gets a three-stage pipeline:

* stage 1 (splitter/refractory): per source unit, one neuron per stage-2 axon
  it feeds. Neurons are set to the negative saturation C_- before the unit's
  sampling window and kicked with |C_-| - 1 at the start of the next
  accumulation window, so one or more window spikes plus the forced spike
  leave exactly one frame-aligned output spike.
* stage 2 (quantization): linear-decrement neurons that replay the magnitude
  of their weight chunks as a spike train of at most T_A spikes.
* stage 3 (accumulate and sample): per unit a sampler neuron S_u with the
  fitted stochastic threshold and a leak neuron L_u that delivers the
  Bernoulli leak of magnitude L while it is enabled.

The control schedule drives everything with external events; one image
period lasts 2 * (T_A + T_S + 2) ticks.
"""

import json
from dataclasses import dataclass, field, replace
from math import ceil
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from artifacts import atomic_write_text, write_csv
from errors import CompileError, DimensionMismatchError, InvalidParameterError, MissingPrerequisiteError, ModelFormatError
from logging_config import get_logger
from logging_decorators import log_function_calls, log_performance
from neural_sampler import SamplerConfig
from packing import (
    BIAS,
    StageTwoCore,
    UnitGroup,
    conservation_violations,
    pack_cores_naive,
    pack_cores_s3,
    pack_units_s2,
    pack_weights_none,
    pack_weights_s11,
    pack_weights_s12,
    sweep_central_weight,
)
from rbm_core import QuantizedRbm
from substrate_sim import (
    CORE_AXONS,
    CORE_NEURONS,
    WEIGHT_MAX,
    WEIGHT_MIN,
    Core,
    LeakMode,
    Network,
    NeuronParams,
    ResetMode,
    Route,
    load_network,
    save_network,
    validate_network,
)

logger = get_logger(__name__)

VISIBLE = "visible"
HIDDEN = "hidden"
LAYERS = (VISIBLE, HIDDEN)
STRATEGIES = ("none", "s1_1", "s1_2")
STAGES = ("stage1", "stage2", "stage3")

CHIP_CORES = 4096
STAGE1_CONTROL_AXONS = 2
LIFT_WEIGHT = WEIGHT_MAX
LEAK_NEURON_LAMBDA = {"half": -128, "hardware": -126}

Address = Tuple[int, int]


def other_layer(layer: str) -> str:
    return HIDDEN if layer == VISIBLE else VISIBLE


@dataclass(frozen=True)
class CompileConfig:
    """
    Compiler settings.

    Attributes
    ----------
    T_A: accumulation window in ticks; also the per-neuron stage-2 budget
    sampler: fitted sampler parameters for the stage-3 neurons
    C_minus: stage-1 negative saturation, -256 <= C_minus <= -max(T_S, 2)
    strategy: stage-2 packing, "none", "s1_1" or "s1_2"
    central_weight: s1_2 central weight; None sweeps 1 .. 2 * T_A
    s2: share stage-2 cores and axons between units with common sources
    s3: first-fit-decreasing packing of stage-1 and stage-3 groups
    chip_cores: core count used for the utilisation percentage
    """

    T_A: int
    sampler: SamplerConfig
    C_minus: int = -32
    strategy: str = "s1_2"
    central_weight: Optional[int] = None
    s2: bool = True
    s3: bool = True
    chip_cores: int = CHIP_CORES

    def __post_init__(self):
        if not 1 <= self.T_A <= WEIGHT_MAX:
            raise InvalidParameterError(f"T_A must lie in [1, {WEIGHT_MAX}], got {self.T_A}")
        limit = -max(self.sampler.T_S, 2)
        if not WEIGHT_MIN <= self.C_minus <= limit:
            raise InvalidParameterError(
                f"C_minus must lie in [{WEIGHT_MIN}, {limit}] for T_S={self.sampler.T_S}, got {self.C_minus}"
            )
        if self.strategy not in STRATEGIES:
            raise InvalidParameterError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.central_weight is not None and self.central_weight < 1:
            raise InvalidParameterError(f"central_weight must be >= 1, got {self.central_weight}")
        if self.sampler.L > WEIGHT_MAX:
            raise InvalidParameterError(f"leak weight L={self.sampler.L} exceeds {WEIGHT_MAX}")
        if self.chip_cores < 1:
            raise InvalidParameterError("chip_cores must be positive")

    @classmethod
    def from_config(cls, section: Dict, sampler: SamplerConfig) -> "CompileConfig":
        cw = section.get("central_weight")
        return cls(
            T_A=int(section["T_A"]),
            sampler=sampler,
            C_minus=int(section.get("C_minus", -32)),
            strategy=section.get("strategy", "s1_2"),
            central_weight=None if cw is None else int(cw),
            s2=bool(section.get("s2", True)),
            s3=bool(section.get("s3", True)),
            chip_cores=int(section.get("chip_cores", CHIP_CORES)),
        )

    @property
    def layer_period(self) -> int:
        return self.T_A + self.sampler.T_S + 2

    def as_dict(self) -> Dict:
        return {
            "T_A": self.T_A, "C_minus": self.C_minus, "strategy": self.strategy,
            "central_weight": self.central_weight, "s2": self.s2, "s3": self.s3,
            "chip_cores": self.chip_cores, "sampler": self.sampler.as_dict(),
        }


def schedule_period(cfg: CompileConfig) -> int:
    """
    Ticks per visible sample: 2 * (T_A + T_S + 2).

    Example
    -------
        T_A=8, T_S=10 gives 20 ticks per layer and 40 per image.
    """
    return 2 * cfg.layer_period


# --- control schedule ---------------------------------------------------------

@dataclass
class ControlSchedule:
    """
    Periodic external-event program.

    Ticks 0 and 1 form the prologue (stage-1 set of the visible layer and the
    initial visible state); half-period h starts at tick 2 + h * P with
    P = T_A + T_S + 2. Even half-periods sample the hidden layer and odd ones
    the visible layer. Offsets within a half-period, with Y the sampled layer
    and X the other one:

        0                 X stage-1 kick
        1                 Y bias events
        T_A .. T_A+T_S-1  Y leak enable
        T_A + 1           Y lift, Y stage-1 set
        P - 1             Y forced kick (lift and kick axons)

    S_u spikes at offsets T_A+1 .. T_A+T_S are the samples of layer Y.

    Attributes
    ----------
    groups: "<layer>.<group>" -> external-input names
    """

    T_A: int
    T_S: int
    groups: Dict[str, List[str]] = field(default_factory=dict)
    n_visible: int = 0

    START = 2

    @property
    def layer_period(self) -> int:
        return self.T_A + self.T_S + 2

    @property
    def image_period(self) -> int:
        return 2 * self.layer_period

    def sampled_layer(self, half: int) -> str:
        return HIDDEN if half % 2 == 0 else VISIBLE

    def half_start(self, half: int) -> int:
        return self.START + half * self.layer_period

    def window(self, half: int) -> Tuple[int, int]:
        """Inclusive first and last tick of the sampling window of ``half``."""
        c0 = self.half_start(half)
        return c0 + self.T_A + 1, c0 + self.T_A + self.T_S

    def program(self) -> List[Tuple[int, str, str]]:
        """(offset, role, group) entries of one half-period; role is "X" or "Y"."""
        P = self.layer_period
        entries = [(0, "X", "s1_kick"), (1, "Y", "bias")]
        entries += [(o, "Y", "enable") for o in range(self.T_A, self.T_A + self.T_S)]
        entries += [(self.T_A + 1, "Y", "lift"), (self.T_A + 1, "Y", "s1_set")]
        entries += [(P - 1, "Y", "lift"), (P - 1, "Y", "kick")]
        return sorted(entries)

    def _offset_table(self) -> Dict[int, List[Tuple[str, str]]]:
        table: Dict[int, List[Tuple[str, str]]] = {}
        for offset, role, group in self.program():
            table.setdefault(offset, []).append((role, group))
        return table

    def events(self, tick: int) -> List[str]:
        """Control events of ``tick`` (no unit inputs)."""
        if tick < self.START:
            return list(self.groups.get(f"{VISIBLE}.s1_set", [])) if tick == 0 else []
        half, offset = divmod(tick - self.START, self.layer_period)
        y = self.sampled_layer(half)
        names: List[str] = []
        for role, group in self._offsets.get(offset, ()):
            layer = y if role == "Y" else other_layer(y)
            names.extend(self.groups.get(f"{layer}.{group}", []))
        return names

    def input_events(self, tick: int, v0: np.ndarray, clamp: Optional[np.ndarray] = None) -> List[str]:
        """
        Unit-input events for the initial state and clamped visible units.

        Tick 1 (window-equivalent) carries every unit whose initial value is
        1 and tick 2 (forced-equivalent) every visible unit. In later
        half-periods that read the visible layer, clamped units repeat the
        pattern at c0 - 1 and c0.
        """
        v0 = np.asarray(v0).reshape(-1)
        if tick == 1:
            return [f"unit:{VISIBLE}:{i}" for i in np.flatnonzero(v0)]
        if tick == 2:
            return [f"unit:{VISIBLE}:{i}" for i in range(len(v0))]
        if clamp is None or tick < self.START:
            return []
        clamp = np.asarray(clamp, dtype=bool).reshape(-1)
        half, offset = divmod(tick + 1 - self.START, self.layer_period)
        if half % 2 == 0 and offset == 0:
            return [f"unit:{VISIBLE}:{i}" for i in np.flatnonzero(clamp & (v0 != 0))]
        half, offset = divmod(tick - self.START, self.layer_period)
        if half % 2 == 0 and offset == 0:
            return [f"unit:{VISIBLE}:{i}" for i in np.flatnonzero(clamp)]
        return []

    def __post_init__(self):
        self._offsets = self._offset_table()

    def to_dict(self) -> Dict:
        return {
            "T_A": self.T_A,
            "T_S": self.T_S,
            "layer_period": self.layer_period,
            "image_period": self.image_period,
            "start": self.START,
            "prologue": {"0": [f"{VISIBLE}.s1_set"], "1": ["unit inputs with v0=1"], "2": ["all unit inputs"]},
            "program": [
                {"offset": o, "layer": "sampled" if role == "Y" else "source", "group": g}
                for o, role, g in self.program()
            ],
            "groups": {k: list(v) for k, v in sorted(self.groups.items())},
        }


# --- placement description ----------------------------------------------------

@dataclass
class UnitPlacement:
    """
    Where one RBM unit lives on the substrate.

    Attributes
    ----------
    stage1: splitter neurons fed by this unit's samples
    input_axon: stage-1 data axon receiving the unit's sample spikes
    stage2: quantization neurons whose outputs converge on this unit
    sampler / leak: stage-3 S_u and L_u
    data_axons: stage-3 axons receiving the stage-2 outputs, aligned with ``stage2``
    """

    layer: str
    unit: int
    stage1: List[Address] = field(default_factory=list)
    input_axon: Optional[Address] = None
    stage2: List[Address] = field(default_factory=list)
    sampler: Optional[Address] = None
    leak: Optional[Address] = None
    data_axons: List[Address] = field(default_factory=list)

    def to_dict(self) -> Dict:
        def pairs(xs):
            return [list(x) for x in xs]

        return {
            "layer": self.layer, "unit": self.unit,
            "stage1": pairs(self.stage1), "input_axon": list(self.input_axon),
            "stage2": pairs(self.stage2), "sampler": list(self.sampler), "leak": list(self.leak),
            "data_axons": pairs(self.data_axons),
        }


@dataclass
class StageUsage:
    cores: int = 0
    neurons: int = 0
    axons: int = 0


@dataclass
class ResourceReport:
    """Cores, neurons and axons per stage plus chip utilisation."""

    stages: Dict[str, StageUsage]
    chip_cores: int = CHIP_CORES

    @property
    def total_cores(self) -> int:
        return sum(u.cores for u in self.stages.values())

    @property
    def utilisation(self) -> float:
        """Percentage of the chip's cores in use."""
        return 100.0 * self.total_cores / self.chip_cores

    def rows(self) -> List[Tuple[str, int, int, int]]:
        rows = [(name, u.cores, u.neurons, u.axons) for name, u in self.stages.items()]
        rows.append(("total", self.total_cores, sum(u.neurons for u in self.stages.values()),
                     sum(u.axons for u in self.stages.values())))
        return rows

    def to_dict(self) -> Dict:
        return {
            "stages": {k: vars(v) for k, v in self.stages.items()},
            "total_cores": self.total_cores,
            "chip_cores": self.chip_cores,
            "utilisation_percent": round(self.utilisation, 3),
        }


@dataclass
class PlacedNetwork:
    """
    A compiled model.

    Attributes
    ----------
    network: the substrate configuration
    directory: layer -> per-unit placement
    schedule: control-event program
    cfg: compile settings used
    K: layer -> stage-3 baseline depth (S_u rests at -K between windows)
    central_weight: the s1_2 central weight actually used (None otherwise)
    clamped: visible units whose samples are supplied externally
    """

    network: Network
    directory: Dict[str, List[UnitPlacement]]
    schedule: ControlSchedule
    cfg: CompileConfig
    K: Dict[str, int]
    n_visible: int
    n_hidden: int
    central_weight: Optional[int] = None
    clamped: FrozenSet[int] = frozenset()
    stage_of_core: List[str] = field(default_factory=list)

    def with_clamp(self, clamped: Optional[Iterable[int]]) -> "PlacedNetwork":
        """
        Copy whose visible samplers of ``clamped`` units are unrouted.

        Clamped units receive their stage-1 input from external events.
        """
        clamped = frozenset(int(i) for i in (clamped if clamped is not None else ()))
        bad = [i for i in clamped if not 0 <= i < self.n_visible]
        if bad:
            raise DimensionMismatchError(f"clamped units {bad} outside 0..{self.n_visible - 1}")
        if clamped == self.clamped:
            return self
        changed: Dict[int, List[Route]] = {}
        for unit in self.directory[VISIBLE]:
            core, neuron = unit.sampler
            routes = changed.setdefault(core, list(self.network.cores[core].routes))
            routes[:] = [r for r in routes if r.source_neuron != neuron]
            if unit.unit not in clamped:
                routes.append(Route(core, neuron, *unit.input_axon))
        cores = [
            replace(c, routes=sorted(changed[i], key=lambda r: r.source_neuron)) if i in changed else c
            for i, c in enumerate(self.network.cores)
        ]
        network = Network(cores, dict(self.network.external_inputs), self.network.leak_mode)
        return replace(self, network=network, clamped=clamped)

    def cores_of(self, stage: str) -> List[int]:
        return [i for i, s in enumerate(self.stage_of_core) if s == stage]


# --- compilation --------------------------------------------------------------

def _weight_lists(m: QuantizedRbm, dest_layer: str) -> List[Tuple[List[int], List]]:
    """(weights, sources) per destination unit, bias last."""
    if dest_layer == HIDDEN:
        W, bias = m.Wq, m.bhq
    else:
        W, bias = m.Wq.T, m.bvq
    lists = []
    for u in range(W.shape[1]):
        col = W[:, u]
        srcs = [int(i) for i in np.flatnonzero(col)]
        weights = [int(col[i]) for i in srcs]
        if int(bias[u]) != 0:
            srcs.append(BIAS)
            weights.append(int(bias[u]))
        lists.append((weights, srcs))
    return lists


def _pack_unit(weights, sources, cfg: CompileConfig, central_weight: Optional[int]):
    if cfg.strategy == "none":
        return pack_weights_none(weights, cfg.T_A, sources)
    if cfg.strategy == "s1_1":
        return pack_weights_s11(weights, cfg.T_A, sources)
    return pack_weights_s12(weights, cfg.T_A, central_weight, sources)


def _stage3_depth(m: QuantizedRbm, layer: str, cfg: CompileConfig) -> Tuple[int, np.ndarray]:
    """(K, N_max per unit) for one layer."""
    sc = cfg.sampler
    W = m.Wq if layer == HIDDEN else m.Wq.T
    bias = m.bhq if layer == HIDDEN else m.bvq
    pos = np.where(W > 0, W, 0).sum(axis=0) + np.maximum(bias, 0)
    neg = np.where(W < 0, -W, 0).sum(axis=0) + np.maximum(-bias, 0)
    k_min = np.maximum.reduce([
        pos - sc.V_th + 1,
        np.full_like(pos, sc.V_th + sc.TR) + neg,
        np.full_like(pos, sc.L * sc.T_S - sc.V_th + 1),
        np.ones_like(pos),
    ]) if len(pos) else np.ones(1, dtype=np.int64)
    n = max(1, ceil(int(k_min.max()) / LIFT_WEIGHT))
    return LIFT_WEIGHT * n, neg.astype(np.int64)


@dataclass
class _Stage3Plan:
    bins: List[List[int]]
    n_lift: int
    K: int
    neg: np.ndarray
    signs: Dict[int, List[int]]


def _layout_stage3(units: int, signs: Dict[int, List[int]], K: int, neg: np.ndarray, s3: bool, layer: str) -> _Stage3Plan:
    n_lift = K // LIFT_WEIGHT
    capacity = CORE_AXONS - (2 * n_lift + 1)
    sizes = [1 + len(signs.get(u, [])) for u in range(units)]
    for u, size in enumerate(sizes):
        if size > capacity:
            raise CompileError(
                f"{layer} unit {u} needs {size} stage-3 axons, a core offers {capacity}; "
                f"use a smaller patch or a larger T_A"
            )
    if s3:
        bins = pack_cores_s3(sizes, capacity, [2] * units, CORE_NEURONS)
    else:
        bins = pack_cores_naive(sizes)
    return _Stage3Plan(bins, n_lift, K, neg, signs)


def _layout_stage1(fanout: Sequence[int], s3: bool, layer: str) -> List[List[int]]:
    sizes = [max(f, 1) for f in fanout]
    for a, size in enumerate(sizes):
        if size > CORE_NEURONS:
            raise CompileError(
                f"{layer} unit {a} fans out to {size} stage-2 axons, a core holds {CORE_NEURONS} neurons; "
                f"the patch is too large"
            )
    if s3:
        return pack_cores_s3(sizes, CORE_NEURONS, [1] * len(sizes), CORE_AXONS - STAGE1_CONTROL_AXONS)
    return pack_cores_naive(sizes)


def _stage1_params(cfg: CompileConfig) -> NeuronParams:
    return NeuronParams(
        weights=(1, WEIGHT_MIN, abs(cfg.C_minus) - 1, 0),
        alpha=1, M=0, R=0, reset_mode=ResetMode.TO_R,
        neg_saturation=cfg.C_minus, initial_potential=0,
    )


def _stage2_params(table: Sequence[Optional[int]]) -> NeuronParams:
    return NeuronParams(
        weights=tuple(0 if w is None else int(w) for w in table),
        alpha=1, M=0, R=0, reset_mode=ResetMode.LINEAR_DECREMENT, neg_saturation=0,
    )


@log_performance(threshold_seconds=2.0)
def compile_model(
    m: QuantizedRbm,
    cfg: CompileConfig,
    clamped_visible: Optional[Iterable[int]] = None,
    threads: int = 1,
) -> PlacedNetwork:
    """
    Map ``m`` onto the substrate.

    Args
    ----
    m: quantized model; its scaling factor should match ``cfg.sampler.s``
    cfg: compile settings
    clamped_visible: visible units whose sampler output is replaced by external events
    threads: workers for the central-weight sweep

    Returns
    -------
    PlacedNetwork whose cores all pass validate_core

    Raises
    ------
    CompileError: a unit's fan-in or fan-out exceeds a core
    """
    sc = cfg.sampler
    if m.s != sc.s:
        logger.warning(f"model scaling factor s={m.s} differs from sampler s={sc.s}")
    if sc.L * sc.T_S >= 2 * sc.V_th + sc.TR:
        logger.warning(
            f"L*T_S={sc.L * sc.T_S} reaches 2*V_th+TR={2 * sc.V_th + sc.TR}: pre-activations below "
            f"-V_sat keep a non-zero spike probability that the clipped curve does not model"
        )
    sizes = {VISIBLE: m.n_visible, HIDDEN: m.n_hidden}
    lists = {layer: _weight_lists(m, layer) for layer in LAYERS}

    central = None
    if cfg.strategy == "s1_2":
        central = cfg.central_weight
        if central is None:
            all_lists = [w for layer in LAYERS for w, _ in lists[layer]]
            central, _ = sweep_central_weight(all_lists, cfg.T_A, threads=threads)

    # stage 2: per destination layer
    stage2: Dict[str, List[StageTwoCore]] = {}
    signs: Dict[str, Dict[int, List[int]]] = {}
    for layer in LAYERS:
        groups = []
        for u, (weights, srcs) in enumerate(lists[layer]):
            neurons = _pack_unit(weights, srcs, cfg, central)
            groups.append(UnitGroup(u, neurons))
        stage2[layer] = pack_units_s2(groups, share=cfg.s2)
        signs[layer] = {}
        for core in stage2[layer]:
            for placed in core.neurons:
                signs[layer].setdefault(placed.dest, []).append(placed.neuron.sign)

    # stage 3 and stage 1 layouts
    stage3: Dict[str, _Stage3Plan] = {}
    for layer in LAYERS:
        K, neg = _stage3_depth(m, layer, cfg)
        stage3[layer] = _layout_stage3(sizes[layer], signs[layer], K, neg, cfg.s3, layer)

    fan_targets: Dict[str, Dict[int, List[Tuple[int, int]]]] = {layer: {} for layer in LAYERS}
    stage1: Dict[str, List[List[int]]] = {}
    for source in LAYERS:
        dest = other_layer(source)
        fanout = [0] * sizes[source]
        for core in stage2[dest]:
            for key in core.axons:
                if key[0] != BIAS:
                    fanout[key[0]] += 1
        stage1[source] = _layout_stage1(fanout, cfg.s3, source)

    # global core indices: stage 1, stage 2, stage 3, each visible then hidden
    base: Dict[Tuple[str, str], int] = {}
    stage_of_core: List[str] = []
    counts = {
        "stage1": {layer: len(stage1[layer]) for layer in LAYERS},
        "stage2": {layer: len(stage2[layer]) for layer in LAYERS},
        "stage3": {layer: len(stage3[layer].bins) for layer in LAYERS},
    }
    for stage in STAGES:
        for layer in LAYERS:
            base[(stage, layer)] = len(stage_of_core)
            stage_of_core.extend([stage] * counts[stage][layer])

    directory = {layer: [UnitPlacement(layer, u) for u in range(sizes[layer])] for layer in LAYERS}
    cores: List[Optional[Core]] = [None] * len(stage_of_core)
    external: Dict[str, Tuple[int, int]] = {}
    groups: Dict[str, List[str]] = {}
    clamped = frozenset(int(i) for i in (clamped_visible or ()))

    # stage-1 input axons first; stage-3 samplers route to them
    for layer in LAYERS:
        for b, members in enumerate(stage1[layer]):
            ci = base[("stage1", layer)] + b
            for pos, a in enumerate(members):
                directory[layer][a].input_axon = (ci, STAGE1_CONTROL_AXONS + pos)

    for layer in LAYERS:
        _build_stage3(layer, stage3[layer], base[("stage3", layer)], cfg, directory, cores, external, groups, clamped)
    for layer in LAYERS:
        _build_stage2(layer, stage2[layer], base[("stage2", layer)], directory, cores, external, groups,
                      fan_targets[other_layer(layer)])
    for layer in LAYERS:
        _build_stage1(layer, stage1[layer], base[("stage1", layer)], cfg, directory, cores, external, groups,
                      fan_targets[layer])

    network = Network(list(cores), external, LeakMode(sc.leak_prob_mode))
    schedule = ControlSchedule(cfg.T_A, sc.T_S, groups, m.n_visible)
    placed = PlacedNetwork(
        network, directory, schedule, cfg, {layer: stage3[layer].K for layer in LAYERS},
        m.n_visible, m.n_hidden, central, clamped, stage_of_core,
    )
    report = resource_report(placed)
    logger.info(
        f"Compiled {m.n_visible}+{m.n_hidden} model (strategy={cfg.strategy}"
        f"{'' if central is None else f', c={central}'}, s2={cfg.s2}, s3={cfg.s3}, T_A={cfg.T_A}): "
        f"{report.total_cores} cores ({report.utilisation:.1f}% of {cfg.chip_cores})"
    )
    return placed


def _build_stage3(layer, plan: _Stage3Plan, first: int, cfg: CompileConfig, directory, cores, external, groups, clamped):
    """
    Sampler and leak neuron pairs of one layer.

    These values keep the tick-level sampler equal to the chain analysed by
    ``spike_probability_curve``; do not change them back to a non-resetting
    sampler or a free-running leak of +128:

    - the sampler resets to R = -K, so its first spike is its only spike and
      the forced kick after the window returns it to the -K baseline
    - the leak neuron has lambda = -128 (half) or -126 (hardware) on a floor
      of 0 and is lifted by one enable event per sampling tick, so it fires
      with the leak probability on exactly those ticks
    - stage 1 answers the forced kick with C_+ = |C_-| - 1
    """
    sc = cfg.sampler
    n = plan.n_lift
    leak_lambda = LEAK_NEURON_LAMBDA[sc.leak_prob_mode]
    for b, members in enumerate(plan.bins):
        ci = first + b
        types = [0] + [3] * (2 * n)
        leak_axon: Dict[int, int] = {}
        data_axons: Dict[int, List[int]] = {}
        for u in members:
            leak_axon[u] = len(types)
            types.append(2)
            data_axons[u] = []
            for sign in plan.signs.get(u, []):
                data_axons[u].append(len(types))
                types.append(0 if sign > 0 else 1)
        n_neurons = 2 * len(members)
        intended = np.zeros((len(types), n_neurons), dtype=np.int64)
        neurons: List[NeuronParams] = []
        routes: List[Route] = []
        for k, u in enumerate(members):
            s_idx, l_idx = 2 * k, 2 * k + 1
            neurons.append(NeuronParams(
                weights=(1, -1, sc.L, LIFT_WEIGHT), alpha=sc.V_th, M=sc.M, R=-plan.K,
                reset_mode=ResetMode.TO_R, pos_saturation=sc.v_sat,
                neg_saturation=-(plan.K + int(plan.neg[u])), initial_potential=-plan.K,
            ))
            neurons.append(NeuronParams(
                weights=(1, 0, 0, 0), leak=leak_lambda, stochastic_leak=True, alpha=1, M=0, R=0,
                reset_mode=ResetMode.TO_R, neg_saturation=0,
            ))
            intended[0, l_idx] = 1
            intended[1:1 + 2 * n, s_idx] = LIFT_WEIGHT
            intended[leak_axon[u], s_idx] = sc.L
            for a in data_axons[u]:
                intended[a, s_idx] = 1 if types[a] == 0 else -1
            routes.append(Route(ci, l_idx, ci, leak_axon[u]))
            unit = directory[layer][u]
            if not (layer == VISIBLE and u in clamped):
                routes.append(Route(ci, s_idx, *unit.input_axon))
            unit.sampler = (ci, s_idx)
            unit.leak = (ci, l_idx)
            unit.data_axons = [(ci, a) for a in data_axons[u]]
        routes.sort(key=lambda r: r.source_neuron)
        cores[ci] = Core(f"{layer}-s3-{b}", np.array(types), intended != 0, neurons, routes, intended)

        name = f"enable:{layer}:{ci}"
        external[name] = (ci, 0)
        groups.setdefault(f"{layer}.enable", []).append(name)
        for k in range(n):
            lift, kick = f"lift:{layer}:{ci}:{k}", f"kick:{layer}:{ci}:{k}"
            external[lift] = (ci, 1 + k)
            external[kick] = (ci, 1 + n + k)
            groups.setdefault(f"{layer}.lift", []).append(lift)
            groups.setdefault(f"{layer}.kick", []).append(kick)


def _build_stage2(layer, layouts: List[StageTwoCore], first: int, directory, cores, external, groups, fan_targets):
    """Stage-2 cores feeding ``layer``; records the stage-1 targets of every source unit."""
    source = other_layer(layer)
    cursor: Dict[int, int] = {}
    for b, layout in enumerate(layouts):
        ci = first + b
        types = np.array([key[1] for key in layout.axons], dtype=np.int64)
        intended = np.zeros((len(types), len(layout.neurons)), dtype=np.int64)
        neurons, routes = [], []
        for j, placed in enumerate(layout.neurons):
            for (src, value), axon in zip(placed.neuron.chunks, placed.axons):
                intended[axon, j] = value
            neurons.append(_stage2_params(placed.table))
            unit = directory[layer][placed.dest]
            k = cursor.get(placed.dest, 0)
            cursor[placed.dest] = k + 1
            unit.stage2.append((ci, j))
            routes.append(Route(ci, j, *unit.data_axons[k]))
        for axon, key in enumerate(layout.axons):
            if key[0] == BIAS:
                name = f"bias:{layer}:{ci}:{axon}"
                external[name] = (ci, axon)
                groups.setdefault(f"{layer}.bias", []).append(name)
            else:
                fan_targets.setdefault(key[0], []).append((ci, axon))
        cores[ci] = Core(f"{layer}-s2-{b}", types, intended != 0, neurons, routes, intended)
    logger.debug(f"{layer} stage 2: {len(layouts)} cores, sources from the {source} layer")


def _build_stage1(layer, bins: List[List[int]], first: int, cfg: CompileConfig, directory, cores, external, groups, fan_targets):
    params = _stage1_params(cfg)
    for b, members in enumerate(bins):
        ci = first + b
        types = [1, 2] + [0] * len(members)
        sizes = [max(len(fan_targets.get(a, [])), 1) for a in members]
        n_neurons = sum(sizes)
        intended = np.zeros((len(types), n_neurons), dtype=np.int64)
        intended[0, :] = WEIGHT_MIN
        intended[1, :] = abs(cfg.C_minus) - 1
        routes = []
        j = 0
        for pos, (a, size) in enumerate(zip(members, sizes)):
            intended[STAGE1_CONTROL_AXONS + pos, j:j + size] = 1
            unit = directory[layer][a]
            for k in range(size):
                unit.stage1.append((ci, j + k))
                targets = fan_targets.get(a, [])
                if k < len(targets):
                    routes.append(Route(ci, j + k, *targets[k]))
            name = f"unit:{layer}:{a}"
            external[name] = (ci, STAGE1_CONTROL_AXONS + pos)
            j += size
        cores[ci] = Core(f"{layer}-s1-{b}", np.array(types), intended != 0, [params] * n_neurons, routes, intended)
        for axon, group in ((0, "s1_set"), (1, "s1_kick")):
            name = f"{group}:{layer}:{ci}"
            external[name] = (ci, axon)
            groups.setdefault(f"{layer}.{group}", []).append(name)


# --- reports and checks -------------------------------------------------------

def resource_report(p: PlacedNetwork) -> ResourceReport:
    """Cores, neurons and axons used by each stage."""
    stages = {stage: StageUsage() for stage in STAGES}
    for core, stage in zip(p.network.cores, p.stage_of_core):
        usage = stages[stage]
        usage.cores += 1
        usage.neurons += core.n_neurons
        usage.axons += core.n_axons
    return ResourceReport(stages, p.cfg.chip_cores)


def realised_weights(p: PlacedNetwork) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """
    Integer weights and biases the placed network actually realises.

    Walks stage-1 routes to learn which source unit drives each stage-2 axon,
    sums the effective stage-2 synaptic weights per (source, stage-2 neuron),
    and applies the sign of the stage-3 data axon each neuron routes to.

    Returns
    -------
    destination layer -> (matrix (n_source, n_dest), bias vector)
    """
    net = p.network
    sizes = {VISIBLE: p.n_visible, HIDDEN: p.n_hidden}
    route_of = {(r.source_core, r.source_neuron): r for ci in p.cores_of("stage1") for r in net.cores[ci].routes}
    axon_source: Dict[Address, int] = {}
    for layer in LAYERS:
        for unit in p.directory[layer]:
            for address in unit.stage1:
                r = route_of.get(address)
                if r is not None:
                    axon_source[(r.dest_core, r.dest_axon)] = unit.unit
    bias_axons = {tuple(v) for k, v in net.external_inputs.items() if k.startswith("bias:")}
    data_axon_unit: Dict[Address, int] = {}
    for layer in LAYERS:
        for unit in p.directory[layer]:
            for addr in unit.data_axons:
                data_axon_unit[addr] = unit.unit

    result = {}
    for layer in LAYERS:
        W = np.zeros((sizes[other_layer(layer)], sizes[layer]), dtype=np.int64)
        b = np.zeros(sizes[layer], dtype=np.int64)
        for ci in p.cores_of("stage2"):
            core = net.cores[ci]
            if not core.name.startswith(f"{layer}-"):
                continue
            eff = core.effective_weights()
            for r in core.routes:
                dest_core = net.cores[r.dest_core]
                sign = 1 if dest_core.axon_types[r.dest_axon] == 0 else -1
                u = data_axon_unit[(r.dest_core, r.dest_axon)]
                for axon in np.flatnonzero(core.crossbar[:, r.source_neuron]):
                    w = sign * int(eff[axon, r.source_neuron])
                    if (ci, axon) in bias_axons:
                        b[u] += w
                    else:
                        W[axon_source[(ci, int(axon))], u] += w
        result[layer] = (W, b)
    return result


def placement_violations(p: PlacedNetwork, m: Optional[QuantizedRbm] = None) -> List[str]:
    """
    validate_network plus the placement invariants.

    Stage-2 neurons carry at most T_A in total; each has exactly one route;
    with ``m`` given, the realised weights and biases equal Wq, bvq and bhq.
    """
    violations = validate_network(p.network)
    T_A = p.cfg.T_A
    for ci in p.cores_of("stage2"):
        core = p.network.cores[ci]
        totals = core.effective_weights().sum(axis=0)
        for j in np.flatnonzero(totals > T_A):
            violations.append(f"core {ci} neuron {j}: stage-2 total {totals[j]} exceeds T_A={T_A}")
        routed = {r.source_neuron for r in core.routes}
        for j in range(core.n_neurons):
            if j not in routed:
                violations.append(f"core {ci} neuron {j}: stage-2 neuron without a route")
    if m is not None and not violations:
        realised = realised_weights(p)
        W_h, b_h = realised[HIDDEN]
        W_v, b_v = realised[VISIBLE]
        checks = (("v->h weights", W_h, m.Wq), ("h->v weights", W_v, m.Wq.T),
                  ("hidden biases", b_h, m.bhq), ("visible biases", b_v, m.bvq))
        for what, got, want in checks:
            bad = np.argwhere(got != want)
            for idx in bad[:20]:
                violations.append(f"{what} at {tuple(int(i) for i in idx)}: realised {got[tuple(idx)]}, model {want[tuple(idx)]}")
            if len(bad) > 20:
                violations.append(f"{what}: {len(bad) - 20} further mismatches")
    return violations


def stage2_neuron_counts(m: QuantizedRbm, T_A: int, central_weight: Optional[int] = None) -> Dict[str, int]:
    """Stage-2 neuron totals of every packing strategy on ``m`` (both directions)."""
    per_unit = [lst for layer in LAYERS for lst in _weight_lists(m, layer)]
    if central_weight is None:
        central_weight, _ = sweep_central_weight([w for w, _ in per_unit], T_A)
    counts = {
        "none": sum(len(pack_weights_none(w, T_A, s)) for w, s in per_unit),
        "s1_1": sum(len(pack_weights_s11(w, T_A, s)) for w, s in per_unit),
        "s1_2": sum(len(pack_weights_s12(w, T_A, central_weight, s)) for w, s in per_unit),
    }
    for w, s in per_unit:
        problems = conservation_violations(w, pack_weights_s12(w, T_A, central_weight, s), T_A, s)
        if problems:
            raise CompileError(f"stage-2 packing lost weight: {problems[0]}")
    return counts


@log_function_calls(include_params=False, include_result=False)
def save_placement(p: PlacedNetwork, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """
    Write the map outputs into ``out_dir``.

    Files: ``network.json`` (substrate configuration), ``placement.json``
    (unit directory and compile settings), ``schedule.json``,
    ``resources.json`` and ``resources.csv``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = resource_report(p)
    placement = {
        "compile": p.cfg.as_dict(),
        "central_weight": p.central_weight,
        "K": p.K,
        "n_visible": p.n_visible,
        "n_hidden": p.n_hidden,
        "clamped": sorted(p.clamped),
        "stage_of_core": p.stage_of_core,
        "units": {layer: [u.to_dict() for u in p.directory[layer]] for layer in LAYERS},
    }
    paths = {
        "network": save_network(p.network, out_dir / "network.json"),
        "placement": atomic_write_text(out_dir / "placement.json", json.dumps(placement, indent=1)),
        "schedule": atomic_write_text(out_dir / "schedule.json", json.dumps(p.schedule.to_dict(), indent=1)),
        "resources": atomic_write_text(out_dir / "resources.json", json.dumps(report.to_dict(), indent=2)),
        "resources_csv": write_csv(out_dir / "resources.csv", ["stage", "cores", "neurons", "axons"], report.rows()),
    }
    logger.info(f"Wrote placement outputs to {out_dir}")
    return paths


def load_placement(out_dir: Union[str, Path]) -> PlacedNetwork:
    """Inverse of save_placement."""
    out_dir = Path(out_dir)
    path = out_dir / "placement.json"
    if not path.exists():
        raise MissingPrerequisiteError(f"placement file not found: {path} (run the 'map' command first)")
    network = load_network(out_dir / "network.json")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        c = doc["compile"]
        sd = dict(c["sampler"])
        sampler = SamplerConfig(sd["s"], sd["T_S"], sd["V_th"], sd["M"], sd["L"], sd["V_sat"], sd["leak_prob_mode"])
        cfg = CompileConfig(c["T_A"], sampler, c["C_minus"], c["strategy"], c["central_weight"],
                            c["s2"], c["s3"], c["chip_cores"])
        directory = {}
        for layer in LAYERS:
            units = []
            for d in doc["units"][layer]:
                units.append(UnitPlacement(
                    d["layer"], d["unit"], [tuple(x) for x in d["stage1"]], tuple(d["input_axon"]),
                    [tuple(x) for x in d["stage2"]], tuple(d["sampler"]), tuple(d["leak"]),
                    [tuple(x) for x in d["data_axons"]],
                ))
            directory[layer] = units
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"malformed placement file {path}: {e}") from e
    groups: Dict[str, List[str]] = {}
    for name in sorted(network.external_inputs, key=lambda n: (n.split(":")[0], n)):
        kind, layer = name.split(":")[:2]
        group = {"s1_set": "s1_set", "s1_kick": "s1_kick", "bias": "bias", "enable": "enable",
                 "lift": "lift", "kick": "kick"}.get(kind)
        if group is not None:
            groups.setdefault(f"{layer}.{group}", []).append(name)
    for key in groups:
        groups[key].sort(key=lambda n: [int(x) if x.isdigit() else x for x in n.split(":")])
    schedule = ControlSchedule(cfg.T_A, sampler.T_S, groups, doc["n_visible"])
    return PlacedNetwork(
        network, directory, schedule, cfg, dict(doc["K"]), doc["n_visible"], doc["n_hidden"],
        doc.get("central_weight"), frozenset(doc.get("clamped", [])), list(doc["stage_of_core"]),
    )
