"""
Tests for the tick-accurate substrate simulator: integration, leak, threshold,
reset, routing delay, random streams, validation and the network file.
"""

import json

import numpy as np
import pytest

from artifacts import read_csv
from compiler import CompileConfig, compile_model
from errors import InvalidParameterError, MissingPrerequisiteError, ModelFormatError, RoutingError
from neural_sampler import spike_probability_curve
from placed_sampler import PlacedSampler
from rbm_core import RbmModel, quantize
from substrate_sim import (
    Core,
    LeakMode,
    Network,
    NeuronParams,
    ResetMode,
    Route,
    SimState,
    debug_set_potential,
    load_network,
    network_from_dict,
    network_to_dict,
    run,
    save_network,
    step_tick,
    validate_core,
    validate_network,
    write_trace_csv,
)


def single_neuron(**params) -> Network:
    """One core, one axon of type 0, one neuron."""
    neuron = NeuronParams(**params)
    return Network([Core("single", [0], [[True]], [neuron])], {"in": (0, 0)})


def relay_network() -> Network:
    """
    Neuron 0 integrates axon 0 (weight 3, alpha 5) and routes to axon 1,
    which drives neuron 1 (weight 1, alpha 1).
    """
    neurons = [
        NeuronParams(weights=(3, 0, 0, 0), alpha=5),
        NeuronParams(weights=(0, 1, 0, 0), alpha=1),
    ]
    core = Core("relay", [0, 1], [[True, False], [False, True]], neurons, [Route(0, 0, 0, 1)])
    return Network([core], {"in": (0, 0)})


class TestTickSemantics:
    """Test the per-tick update order."""

    def test_integration_and_threshold(self):
        """Test that two inputs of weight 3 cross a threshold of 5 on the second tick."""
        trace = run(relay_network(), {0: ["in"], 1: ["in"]}, 4, probes=[(0, 0)])
        assert trace.spike_ticks(0, 0).tolist() == [1]
        assert trace.potentials[(0, 0)].tolist() == [3, 0, 0, 0]

    def test_routed_spike_arrives_next_tick(self):
        """Test the one-tick delay between a spike and its destination axon."""
        trace = run(relay_network(), {0: ["in"], 1: ["in"]}, 4)
        assert trace.spike_ticks(0, 1).tolist() == [2]
        assert trace.spikes.tolist() == [[1, 0, 0], [2, 0, 1]]

    def test_event_as_core_axon_pair(self):
        """Test that events may address axons directly."""
        trace = run(relay_network(), {0: [(0, 0)], 1: [(0, 0)]}, 3)
        assert trace.spike_count(0, 0) == 1

    def test_deterministic_leak_and_floor(self):
        """Test a negative leak clipped at the negative saturation."""
        net = single_neuron(leak=-1, alpha=100, neg_saturation=-3)
        trace = run(net, None, 5, probes=[(0, 0)])
        assert trace.potentials[(0, 0)].tolist() == [-1, -2, -3, -3, -3]

    def test_ceiling(self):
        """Test that potentials stop at the positive saturation."""
        net = single_neuron(leak=4, alpha=100, pos_saturation=10)
        trace = run(net, None, 4, probes=[(0, 0)])
        assert trace.potentials[(0, 0)].tolist() == [4, 8, 10, 10]

    def test_linear_decrement_reset(self):
        """Test that linear reset subtracts alpha and keeps the remainder."""
        net = single_neuron(leak=3, alpha=5, reset_mode=ResetMode.LINEAR_DECREMENT)
        trace = run(net, None, 5, probes=[(0, 0)])
        assert trace.spike_ticks(0, 0).tolist() == [1, 3, 4]
        assert trace.potentials[(0, 0)].tolist() == [3, 1, 4, 2, 0]

    def test_reset_to_r(self):
        """Test that a spiking neuron jumps to R."""
        net = single_neuron(leak=7, alpha=5, R=-2)
        trace = run(net, None, 3, probes=[(0, 0)])
        assert trace.potentials[(0, 0)].tolist() == [-2, -2, -2]

    def test_non_reset(self):
        """Test that a non-reset neuron above threshold fires every tick."""
        net = single_neuron(alpha=5, initial_potential=10, reset_mode=ResetMode.NON_RESET)
        trace = run(net, None, 6)
        assert trace.spike_count(0, 0) == 6

    @pytest.mark.statistical
    @pytest.mark.parametrize("mode,p", [(LeakMode.HALF, 0.5), (LeakMode.HARDWARE, 129 / 256)])
    def test_stochastic_leak_rate(self, mode, p):
        """Test the fraction of ticks a stochastic leak of 128 applies."""
        net = single_neuron(leak=128, stochastic_leak=True, alpha=10 ** 9)
        net.leak_mode = mode
        n = 4000
        trace = run(net, None, n, probes=[(0, 0)], seed=9)
        rate = trace.potentials[(0, 0)][-1] / n
        assert abs(rate - p) < 4 * np.sqrt(p * (1 - p) / n)

    @pytest.mark.statistical
    def test_threshold_randomness(self):
        """Test that a potential of 0 beats alpha + eta only when eta is 0."""
        net = single_neuron(alpha=0, M=3, reset_mode=ResetMode.NON_RESET)
        n = 8000
        rate = run(net, None, n, seed=2).spike_count(0, 0) / n
        assert abs(rate - 1 / 8) < 4 * np.sqrt((1 / 8) * (7 / 8) / n)

    def test_integration_is_additive(self):
        """Test that spikes on several axons in one tick add their type weights."""
        neuron = NeuronParams(weights=(3, -2, 5, 0), alpha=10 ** 6)
        core = Core("adder", [0, 1, 2, 0], np.ones((4, 1), dtype=bool), [neuron])
        net = Network([core])

        def delta(axons):
            return run(net, {0: [(0, a) for a in axons]}, 1, probes=[(0, 0)]).potentials[(0, 0)][0]

        singles = [delta([a]) for a in range(4)]
        assert singles == [3, -2, 5, 3]
        assert delta([0, 1, 2, 3]) == sum(singles)
        assert delta([1, 2]) == singles[1] + singles[2]

    def test_self_exciting_loop(self):
        """Test that a neuron routed onto its own axon spikes exactly once per tick after one kick."""
        neuron = NeuronParams(weights=(1, 0, 0, 0), alpha=1)
        core = Core("loop", [0], [[True]], [neuron], [Route(0, 0, 0, 0)])
        trace = run(Network([core], {"kick": (0, 0)}), {0: ["kick"]}, 50)
        assert trace.spike_ticks(0, 0).tolist() == list(range(50))

    def test_invalid_tick_count(self):
        """Test that a run of zero ticks is refused."""
        with pytest.raises(InvalidParameterError):
            run(relay_network(), None, 0)

    def test_unknown_input_name(self):
        """Test that an unknown external input raises a routing error."""
        with pytest.raises(RoutingError):
            run(relay_network(), {0: ["nope"]}, 1)

    def test_callable_schedule(self):
        """Test a schedule given as a function of the tick."""
        trace = run(relay_network(), lambda t: ["in"] if t < 2 else [], 3)
        assert trace.spike_ticks(0, 0).tolist() == [1]

    def test_debug_set_potential(self):
        """Test that a forced potential is picked up by the next tick."""
        net = single_neuron(alpha=5)
        state = SimState.initial(net, seed=0)
        debug_set_potential(state, 0, 0, 7)
        _, fired = step_tick(net, state)
        assert fired[0].tolist() == [0]


class TestRandomStreams:
    """Test reproducibility of the per-core random streams."""

    def _noisy(self) -> Network:
        return single_neuron(alpha=0, M=4, reset_mode=ResetMode.NON_RESET)

    def test_same_seed_same_trace(self):
        """Test that a fixed seed reproduces the spike trace."""
        a = run(self._noisy(), None, 300, seed=5)
        b = run(self._noisy(), None, 300, seed=5)
        assert np.array_equal(a.spikes, b.spikes)

    def test_different_seed_different_trace(self):
        """Test that another seed gives another trace."""
        a = run(self._noisy(), None, 300, seed=5)
        b = run(self._noisy(), None, 300, seed=6)
        assert not np.array_equal(a.spikes, b.spikes)

    def test_continuation_matches_single_run(self):
        """Test that draws are indexed by tick, so a split run equals one long run."""
        net = self._noisy()
        state = SimState.initial(net, seed=5)
        run(net, None, 150, state=state)
        second = run(net, None, 150, state=state)
        full = run(self._noisy(), None, 300, seed=5)
        assert np.array_equal(second.spikes, full.spikes[full.spikes[:, 0] >= 150])


class TestValidation:
    """Test configuration validation."""

    def test_valid_network(self):
        """Test that a well-formed network has no violations."""
        assert validate_network(relay_network()) == []

    def test_axon_overflow(self):
        """Test that more than 256 axons is a violation."""
        core = Core("big", np.zeros(257, int), np.zeros((257, 1), bool), [NeuronParams()])
        assert any("axons exceed" in v for v in validate_core(core, 0))

    def test_weight_out_of_range(self):
        """Test that weights beyond the 9-bit range are reported."""
        core = Core("w", [0], [[True]], [NeuronParams(weights=(300, 0, 0, 0))])
        assert any("9-bit" in v for v in validate_core(core, 0))

    def test_threshold_range_above_saturation(self):
        """Test that alpha + 2^M - 1 above the ceiling is reported."""
        core = Core("t", [0], [[True]], [NeuronParams(alpha=10, M=4, pos_saturation=20)])
        assert any("positive saturation" in v for v in validate_core(core, 0))

    def test_too_many_distinct_weights(self):
        """Test that a neuron needing five distinct weights is reported."""
        intended = np.array([[1], [2], [3], [4], [5]])
        core = Core("d", [0, 1, 2, 3, 3], np.ones((5, 1), bool), [NeuronParams(weights=(1, 2, 3, 4))],
                    intended=intended)
        assert any("distinct weights" in v for v in validate_core(core, 0))

    def test_realised_weights_match_intended(self):
        """Test that a correctly typed core realises its intended weights."""
        intended = np.array([[2, 0], [-1, 3]])
        neurons = [NeuronParams(weights=(2, -1, 0, 0)), NeuronParams(weights=(0, 3, 0, 0))]
        core = Core("ok", [0, 1], intended != 0, neurons, intended=intended)
        assert validate_core(core, 0) == []

    def test_wrong_realised_weight(self):
        """Test that a table entry disagreeing with the intended weight is reported."""
        intended = np.array([[2], [-1]])
        core = Core("bad", [0, 1], [[True], [True]], [NeuronParams(weights=(2, 1, 0, 0))], intended=intended)
        assert any("needs weight -1" in v for v in validate_core(core, 0))

    def test_multiple_routes(self):
        """Test that a neuron with two routes is reported."""
        core = Core("r", [0, 0], np.ones((2, 1), bool), [NeuronParams()],
                    [Route(0, 0, 0, 0), Route(0, 0, 0, 1)])
        assert any("at most one" in v for v in validate_core(core, 0))

    def test_route_to_missing_core(self):
        """Test that a route to a nonexistent core is reported, and refused at run time."""
        core = Core("r", [0], [[True]], [NeuronParams()], [Route(0, 0, 3, 0)])
        net = Network([core])
        assert any("nonexistent axon" in v for v in validate_network(net))
        with pytest.raises(RoutingError):
            run(net, None, 1)

    def test_bad_external_input(self):
        """Test that an external input on a missing axon is reported."""
        net = relay_network()
        net.external_inputs["ghost"] = (0, 9)
        assert any("ghost" in v for v in validate_network(net))


class TestNetworkFile:
    """Test the network file format."""

    def test_save_load_round_trip(self, tmp_path, small_placed_network):
        """Test that a compiled network survives the file format unchanged."""
        network = small_placed_network.network
        path = save_network(network, tmp_path / "net.json")
        restored = load_network(path)
        assert network_to_dict(restored) == network_to_dict(network)

    def test_missing_file(self, tmp_path):
        """Test that an absent network file is a missing prerequisite."""
        with pytest.raises(MissingPrerequisiteError):
            load_network(tmp_path / "absent.json")

    def test_wrong_format_tag(self):
        """Test that a document of another kind is refused."""
        with pytest.raises(ModelFormatError):
            network_from_dict({"format": "something-else", "version": 1})

    def test_crossbar_bit_beyond_neurons(self):
        """Test that a crossbar row connecting a nonexistent neuron is refused."""
        doc = network_to_dict(relay_network())
        doc["cores"][0]["crossbar"][0] = "ff"
        with pytest.raises(ModelFormatError):
            network_from_dict(doc)

    def test_invalid_json(self, tmp_path):
        """Test that a corrupt file is a format error."""
        path = tmp_path / "net.json"
        path.write_text("{not json")
        with pytest.raises(ModelFormatError):
            load_network(path)

    def test_document_is_plain_json(self):
        """Test that the document serialises without custom encoders."""
        doc = network_to_dict(relay_network())
        assert json.loads(json.dumps(doc)) == doc

    def test_trace_csv(self, tmp_path):
        """Test the trace file header and rows."""
        trace = run(relay_network(), {0: ["in"], 1: ["in"]}, 4)
        rows = read_csv(write_trace_csv(trace, tmp_path / "trace.csv"))
        assert rows == [{"tick": "1", "core": "0", "neuron": "0"}, {"tick": "2", "core": "0", "neuron": "1"}]


class TestSamplerBlock:
    """Test compiled stage-3 sampler blocks against the spike-probability curve."""

    @pytest.mark.slow
    @pytest.mark.statistical
    def test_block_rate_matches_curve(self, g4_config):
        """Test visible and hidden spike rates of a weightless 1+1 model within 3-sigma binomial bands."""
        m = quantize(RbmModel(np.zeros((1, 1)), [0.4], [-0.3]), g4_config.s)
        placed = compile_model(m, CompileConfig(T_A=8, sampler=g4_config))
        n = 3000
        vs, hs = PlacedSampler(placed).sample_chain(np.zeros(1), n, seed=17)
        curve = spike_probability_curve(g4_config)
        for samples, pre_activation in ((vs, 20), (hs, -15)):
            p = float(curve(pre_activation))
            assert abs(samples.mean() - p) < 3 * np.sqrt(p * (1 - p) / n) + 1 / n
