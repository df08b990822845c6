"""
Tests for the substrate compiler: settings, timing, placement invariants,
resource reports and the placement directory.
"""

import numpy as np
import pytest

from compiler import (
    HIDDEN,
    STRATEGIES,
    VISIBLE,
    CompileConfig,
    compile_model,
    load_placement,
    placement_violations,
    realised_weights,
    resource_report,
    save_placement,
    schedule_period,
    stage2_neuron_counts,
)
from errors import CompileError, DimensionMismatchError, InvalidParameterError, MissingPrerequisiteError
from neural_sampler import SamplerConfig
from placed_sampler import PlacedSampler
from rbm_core import RbmModel, patch_mask, quantize
from substrate_sim import network_to_dict


def sampler_with(T_S: int) -> SamplerConfig:
    return SamplerConfig(s=50, T_S=T_S, V_th=79, M=9, L=49)


class TestCompileConfig:
    """Test compiler settings and the timing formula."""

    @pytest.mark.parametrize("T_A,T_S,layer,image", [(8, 10, 20, 40), (32, 16, 50, 100), (1, 1, 4, 8)])
    def test_schedule_period(self, T_A, T_S, layer, image):
        """Test ticks per layer and per visible sample."""
        cfg = CompileConfig(T_A=T_A, sampler=sampler_with(T_S))
        assert cfg.layer_period == layer
        assert schedule_period(cfg) == image

    def test_c_minus_must_cover_window(self, g4_config):
        """Test that |C_minus| below T_S is refused."""
        with pytest.raises(InvalidParameterError):
            CompileConfig(T_A=8, sampler=g4_config, C_minus=-4)

    def test_unknown_strategy(self, g4_config):
        """Test that an unknown packing strategy is refused."""
        with pytest.raises(InvalidParameterError):
            CompileConfig(T_A=8, sampler=g4_config, strategy="greedy")

    def test_from_config(self, g4_config):
        """Test building settings from a config section."""
        cfg = CompileConfig.from_config({"T_A": 16, "strategy": "s1_1", "s2": False}, g4_config)
        assert (cfg.T_A, cfg.strategy, cfg.s2, cfg.s3, cfg.C_minus) == (16, "s1_1", False, True, -32)


class TestCompile:
    """Test compilation of small models."""

    def test_placement_is_valid(self, small_placed_network, small_quantized_model):
        """Test that the compiled network passes validation and realises the model exactly."""
        assert placement_violations(small_placed_network, small_quantized_model) == []

    @pytest.mark.parametrize("strategy", STRATEGIES)
    @pytest.mark.parametrize("s2,s3", [(True, True), (False, False), (True, False)])
    def test_every_strategy_realises_weights(self, small_quantized_model, g4_config, strategy, s2, s3):
        """Test weight conservation under every combination of packing strategies."""
        cfg = CompileConfig(T_A=8, sampler=g4_config, strategy=strategy, s2=s2, s3=s3)
        placed = compile_model(small_quantized_model, cfg)
        assert placement_violations(placed, small_quantized_model) == []

    def test_realised_weights(self, small_placed_network, small_quantized_model):
        """Test the realised matrices in both directions."""
        realised = realised_weights(small_placed_network)
        W_h, b_h = realised[HIDDEN]
        W_v, b_v = realised[VISIBLE]
        assert np.array_equal(W_h, small_quantized_model.Wq)
        assert np.array_equal(W_v, small_quantized_model.Wq.T)
        assert np.array_equal(b_h, small_quantized_model.bhq)
        assert np.array_equal(b_v, small_quantized_model.bvq)

    def test_zero_model(self, small_compile_config):
        """Test that a model without weights or biases compiles to a valid network."""
        m = quantize(RbmModel.zeros(3, 2), 50)
        placed = compile_model(m, small_compile_config)
        assert placement_violations(placed, m) == []
        assert placed.cores_of("stage2") == []

    def test_fan_in_too_large(self, g4_config):
        """Test that a unit needing more stage-3 axons than a core offers is refused."""
        m = quantize(RbmModel(np.full((300, 1), 0.02), np.zeros(300), np.zeros(1)), 50)
        with pytest.raises(CompileError):
            compile_model(m, CompileConfig(T_A=1, sampler=g4_config, strategy="none"))

    def test_fixed_central_weight(self, small_quantized_model, g4_config):
        """Test that a given central weight is used instead of a sweep."""
        placed = compile_model(small_quantized_model, CompileConfig(T_A=8, sampler=g4_config, central_weight=3))
        assert placed.central_weight == 3

    def test_strategy_counts_ordering(self, small_quantized_model):
        """Test that both optimised strategies never need more neurons than the baseline."""
        counts = stage2_neuron_counts(small_quantized_model, 8)
        assert counts["s1_1"] <= counts["none"]
        assert counts["s1_2"] <= counts["none"]


class TestClamping:
    """Test unrouting of clamped visible samplers."""

    def test_with_clamp_removes_sampler_route(self, small_placed_network):
        """Test that a clamped visible sampler loses its route and the others keep theirs."""
        clamped = small_placed_network.with_clamp([0])
        for unit in clamped.directory[VISIBLE]:
            core, neuron = unit.sampler
            routed = any(r.source_neuron == neuron for r in clamped.network.cores[core].routes)
            assert routed == (unit.unit != 0)
        assert clamped.clamped == frozenset({0})

    def test_with_clamp_keeps_original(self, small_placed_network):
        """Test that clamping returns a copy."""
        small_placed_network.with_clamp([1, 2])
        assert small_placed_network.clamped == frozenset()

    def test_clamp_out_of_range(self, small_placed_network):
        """Test that clamping a nonexistent unit is refused."""
        with pytest.raises(DimensionMismatchError):
            small_placed_network.with_clamp([99])


class TestTiming:
    """Test spike timing of the three stages under the control schedule."""

    @pytest.fixture
    def trace_and_stages(self, small_placed_network):
        placed = small_placed_network
        trace = PlacedSampler(placed).trace(np.array([1, 0, 1, 1]), 4, seed=3)
        stages = np.array(placed.stage_of_core)[trace.spikes[:, 1]]
        return placed, trace, stages

    def test_no_spikes_in_prologue(self, trace_and_stages):
        """Test that nothing fires before the first half-period."""
        placed, trace, _ = trace_and_stages
        assert trace.spikes[:, 0].min() >= placed.schedule.START

    def test_stage1_fires_at_frame_start(self, trace_and_stages):
        """Test that splitter neurons fire only on the first tick of a half-period."""
        placed, trace, stages = trace_and_stages
        offsets = (trace.spikes[:, 0] - placed.schedule.START) % placed.schedule.layer_period
        assert (stages == "stage1").any()
        assert set(offsets[stages == "stage1"].tolist()) == {0}

    def test_stage2_fires_within_accumulation(self, trace_and_stages):
        """Test that quantization neurons fire only at offsets 1..T_A."""
        placed, trace, stages = trace_and_stages
        offsets = (trace.spikes[:, 0] - placed.schedule.START) % placed.schedule.layer_period
        s2 = offsets[stages == "stage2"]
        assert s2.size and s2.min() >= 1 and s2.max() <= placed.cfg.T_A

    def test_samplers_fire_in_window_or_forced_tick(self, trace_and_stages):
        """Test that sampler neurons fire only inside their layer's window and on its last tick."""
        placed, trace, _ = trace_and_stages
        schedule = placed.schedule
        P, T_A = schedule.layer_period, placed.cfg.T_A
        n_halves = 8
        for layer in (VISIBLE, HIDDEN):
            for unit in placed.directory[layer]:
                ticks = trace.spike_ticks(*unit.sampler)
                half, offset = np.divmod(ticks - schedule.START, P)
                assert all(schedule.sampled_layer(int(h)) == layer for h in half)
                assert offset.min() >= T_A + 1 and offset.max() <= P - 1
                forced = {int(h) for h, o in zip(half, offset) if o == P - 1}
                assert forced == {h for h in range(n_halves) if schedule.sampled_layer(h) == layer}


class TestReportsAndFiles:
    """Test resource reports and the placement directory."""

    def test_resource_report(self, small_placed_network):
        """Test per-stage rows and the total row."""
        report = resource_report(small_placed_network)
        rows = report.rows()
        assert [r[0] for r in rows] == ["stage1", "stage2", "stage3", "total"]
        assert rows[-1][1] == report.total_cores == len(small_placed_network.network.cores)
        assert report.utilisation == pytest.approx(100.0 * report.total_cores / 4096)

    def test_save_load_round_trip(self, tmp_path, small_placed_network):
        """Test that the placement directory restores network, directory and schedule."""
        placed = small_placed_network
        paths = save_placement(placed, tmp_path)
        assert {p.name for p in paths.values()} == {
            "network.json", "placement.json", "schedule.json", "resources.json", "resources.csv",
        }
        restored = load_placement(tmp_path)
        assert network_to_dict(restored.network) == network_to_dict(placed.network)
        assert restored.directory == placed.directory
        assert restored.K == placed.K
        assert restored.cfg.as_dict() == placed.cfg.as_dict()
        for tick in range(3 * placed.schedule.image_period):
            assert sorted(restored.schedule.events(tick)) == sorted(placed.schedule.events(tick))

    def test_missing_placement(self, tmp_path):
        """Test that an empty directory is a missing prerequisite."""
        with pytest.raises(MissingPrerequisiteError):
            load_placement(tmp_path)


@pytest.fixture(scope="module")
def mnist_scale_model():
    """784+441 model on the 8x8 patch layout, weights of trained magnitude, quantized at s = 50."""
    mask = patch_mask(28, 8)
    m = RbmModel.random(784, 441, np.random.default_rng(5), w_mean=0.0, w_std=0.3,
                        bv_std=0.5, bh_mean=0.0, bh_std=0.5, mask=mask)
    return quantize(m, 50)


@pytest.mark.slow
class TestFullScaleOrdering:
    """Test the resource orderings of the packing strategies on the full MNIST layout."""

    def test_stage2_neuron_counts(self, mnist_scale_model):
        """Test that none > s1_1 > s1_2 at T_A = 32."""
        counts = stage2_neuron_counts(mnist_scale_model, 32)
        assert counts["none"] > counts["s1_1"] > counts["s1_2"]

    def test_sharing_saves_stage2_cores(self, mnist_scale_model):
        """Test that stage-2 sharing between overlapping patches needs fewer cores."""
        sampler = SamplerConfig(s=50, T_S=16, V_th=186, M=9, L=36)
        cores = {}
        for share in (False, True):
            placed = compile_model(mnist_scale_model, CompileConfig(T_A=32, sampler=sampler, s2=share))
            cores[share] = resource_report(placed).stages["stage2"].cores
        assert cores[True] < cores[False]
