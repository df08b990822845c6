#!/usr/bin/env python3
"""
Neuro-RBM command-line application

This application drives the whole toolkit:
1. Train masked RBMs on binary MNIST and estimate their log-probability (AIS)
2. Fit and analyse the digital neural sampler
3. Compile quantized models onto the crossbar substrate and validate the result
4. Simulate compiled networks and reconstruct occluded images
5. Produce the data behind every figure and table

Usage:
    python neuro_rbm_app.py --help
    python neuro_rbm_app.py train --data train-images-idx3-ubyte --patch 8 --model model.nrbm
    python neuro_rbm_app.py map --model model.nrbm --placement mapped/
    python neuro_rbm_app.py reconstruct --model model.nrbm --data t10k-images-idx3-ubyte --backend neural-fast
    python neuro_rbm_app.py figures table1 fig13
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ais import AisConfig, ais_log_partition, ais_log_prob
from artifacts import ExperimentReport, sha256_file
from compiler import STRATEGIES, CompileConfig, compile_model, load_placement, resource_report, save_placement
from config import load_config
from errors import EXIT_OK, EXIT_USAGE, InvalidParameterError, ValidationFailure, exit_code_for
from experiments import BACKENDS, FIGURES, as_quantized, cmd_figures, cmd_reconstruct, validate_artifact
from logging_config import get_logger, log_exception, set_console_level
from logging_decorators import log_exceptions, log_performance
from mnist_data import GEOMETRIES, OcclusionSpec, load_mnist, occlude, save_idx
from model_io import load_model, save_model
from neural_sampler import LEAK_MODES, SamplerConfig, SearchSpace, analyze_dtmc, fit_sampler, spike_probability_curve
from placed_sampler import PlacedSampler
from rbm_core import quantize, patch_mask
from rbm_training import TrainConfig, TrainingHistory, train_pcd
from rng_streams import spawn_streams
from substrate_sim import write_trace_csv

logger = get_logger(__name__)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with the toolkit's usage code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _override(section: Dict, **values) -> Dict:
    """Copy of a config section with every non-None flag value applied."""
    merged = dict(section)
    merged.update({k: v for k, v in values.items() if v is not None})
    return merged


def sampler_from_args(args, config: Dict) -> SamplerConfig:
    return SamplerConfig.from_config(_override(
        config["sampler"], s=args.s, T_S=args.T_S, V_th=args.V_th, M=args.M, L=args.L,
        V_sat=args.V_sat, leak_prob_mode=args.leak_mode,
    ))


def compile_from_args(args, config: Dict, sampler: SamplerConfig) -> CompileConfig:
    section = _override(
        config["compiler"], T_A=args.T_A, C_minus=args.C_minus, strategy=args.strategy,
        central_weight=args.central_weight,
    )
    if args.no_s2:
        section["s2"] = False
    if args.no_s3:
        section["s3"] = False
    return CompileConfig.from_config(section, sampler)


def _write(report: ExperimentReport, args) -> Path:
    exp_dir = report.write(args.out_dir)
    print(f"Results written to {exp_dir}")
    return exp_dir


@log_performance(threshold_seconds=30.0)
@log_exceptions("Train command failed")
def train_command(args, config: Dict):
    """Train a masked RBM with PCD and save it (real or quantized)."""
    data = load_mnist(args.data)
    if args.n_images:
        data = data.subset(min(args.n_images, len(data)))
    cfg = TrainConfig.from_config(
        _override(config["training"], learning_rate=args.learning_rate, epochs=args.epochs,
                  batch_size=args.batch_size, n_persistent_chains=args.chains),
        args.seed,
    )
    mask = patch_mask(data.side, args.patch)
    history = TrainingHistory()
    model = train_pcd(data, mask, cfg, history)
    if args.quantize:
        model = quantize(model, args.quantize)
    save_model(model, args.model, export_json=not args.no_json)

    report = ExperimentReport("train", {"seed": args.seed, "training": vars(cfg), "patch": args.patch,
                                        "n_images": len(data), "quantize": args.quantize},
                              model_sha256=sha256_file(args.model))
    series = report.new_series("reconstruction_error", ["epoch", "error"])
    for row in history.rows():
        series.add(*row)
    _write(report, args)
    print(f"Model with {mask.shape[1]} hidden units saved to {args.model}")


@log_performance(threshold_seconds=30.0)
@log_exceptions("Fit-sampler command failed")
def fit_sampler_command(args, config: Dict):
    """Grid search of V_th, M and L for the configured s and T_S."""
    sampler = config["sampler"]
    s = args.s if args.s is not None else int(sampler["s"])
    T_S = args.T_S if args.T_S is not None else int(sampler["T_S"])
    space = SearchSpace.from_bounds(tuple(args.v_th_range), tuple(args.m_range), tuple(args.l_range), args.v_th_step)
    factor = int(sampler.get("mse_domain_factor", 6))
    reduction = args.reduction or sampler.get("mse_reduction", "mean")
    best, mse = fit_sampler(s, T_S, space, (-factor * s, factor * s), reduction,
                            args.leak_mode or sampler.get("leak_prob_mode", "half"), threads=args.threads)

    report = ExperimentReport("fit-sampler", {"seed": None, "s": s, "T_S": T_S, "reduction": reduction,
                                              "v_th_range": args.v_th_range, "m_range": args.m_range,
                                              "l_range": args.l_range})
    series = report.new_series("best", ["s", "T_S", "V_th", "M", "L", "mse"])
    series.add(best.s, best.T_S, best.V_th, best.M, best.L, mse)
    curve = report.new_series("curve", ["V_init", "P_spike"])
    for row in spike_probability_curve(best).rows():
        curve.add(*row)
    summary = f"Best sampler: V_th={best.V_th} M={best.M} L={best.L} (MSE {mse:.6g}, {reduction})"
    report.extra_files["report.txt"] = (
        f"{summary}\ns={s} T_S={T_S} V_sat={best.v_sat} searched {len(list(space.points()))} points\n"
    ).encode("utf-8")
    _write(report, args)
    print(summary)


@log_exceptions("Analyze-dtmc command failed")
def analyze_dtmc_command(args, config: Dict):
    """Spike-probability curve and chain diagnostics of one sampler configuration."""
    cfg = sampler_from_args(args, config)
    summary = analyze_dtmc(cfg)
    curve = spike_probability_curve(cfg)
    report = ExperimentReport("analyze-dtmc", {"seed": None, "sampler": cfg.as_dict()})
    series = report.new_series("curve", ["V", "p_spike"])
    for row in curve.rows():
        series.add(*row)
    summary_series = report.new_series("summary", ["quantity", "value"])
    for key, value in summary.items():
        if key != "config":
            summary_series.add(key, value)
    _write(report, args)
    print(json.dumps(summary, indent=2))


@log_performance(threshold_seconds=30.0)
@log_exceptions("Map command failed")
def map_command(args, config: Dict):
    """Compile a model onto the substrate and write the placement."""
    sampler = sampler_from_args(args, config)
    cfg = compile_from_args(args, config, sampler)
    model = as_quantized(load_model(args.model), sampler.s)
    placed = compile_model(model, cfg, threads=args.threads)
    save_placement(placed, args.placement)
    report = resource_report(placed)
    for row in report.rows():
        print("{:<8} cores={:<6} neurons={:<8} axons={}".format(*row))
    print(f"Total cores: {report.total_cores} ({report.utilisation:.2f}% of {report.chip_cores})")


@log_exceptions("Validate command failed", log_level="WARNING")
def validate_command(args, config: Dict):
    """Check a compiled network; violations end with exit code 2."""
    try:
        validate_artifact(args.path, args.model)
    except ValidationFailure as e:
        for violation in e.violations:
            print(violation, file=sys.stderr)
        raise
    print(f"{args.path}: no violations")


def _initial_state(spec: Optional[str], n_visible: int, seed: int) -> np.ndarray:
    if spec is None or spec == "zeros":
        return np.zeros(n_visible, dtype=np.int8)
    if spec == "random":
        return spawn_streams(seed, "simulate-v0", 1)[0].integers(0, 2, n_visible).astype(np.int8)
    bits = np.array([int(c) for c in spec if c in "01"], dtype=np.int8)
    if bits.size != n_visible:
        raise InvalidParameterError(f"--v0 has {bits.size} bits, network has {n_visible} visible units")
    return bits


@log_performance(threshold_seconds=30.0)
@log_exceptions("Simulate command failed")
def simulate_command(args, config: Dict):
    """Run a compiled network as a Gibbs sampler; writes samples and the spike trace."""
    placed = load_placement(args.placement)
    sampler = PlacedSampler(placed)
    v0 = _initial_state(args.v0, placed.n_visible, args.seed)
    vs, hs = sampler.sample_chain(v0, args.periods, seed=args.seed)

    report = ExperimentReport("simulate", {"seed": args.seed, "periods": args.periods, "placement": str(args.placement),
                                           "v0": v0})
    visible = report.new_series("visible", ["period"] + [f"v{i}" for i in range(placed.n_visible)])
    hidden = report.new_series("hidden", ["period"] + [f"h{j}" for j in range(placed.n_hidden)])
    for k in range(args.periods):
        visible.add(k + 1, *vs[k])
        hidden.add(k + 1, *hs[k])
    exp_dir = _write(report, args)
    if args.trace:
        trace = sampler.trace(v0, args.periods, seed=args.seed)
        write_trace_csv(trace, exp_dir / "trace.csv")
        print(f"Trace with {len(trace.spikes)} spikes written to {exp_dir / 'trace.csv'}")


@log_performance(threshold_seconds=30.0)
@log_exceptions("Reconstruct command failed")
def reconstruct_command(args, config: Dict):
    """Occlude images and reconstruct them with one backend."""
    data = load_mnist(args.data)
    n_images = args.n_images or len(data)
    data = data.subset(min(n_images, len(data)))
    spec = OcclusionSpec.from_config(
        _override(config["occlusion"], fraction=args.fraction, geometry=args.geometry), args.seed
    )
    sampler = sampler_from_args(args, config)
    compile_cfg = compile_from_args(args, config, sampler) if args.backend == "placed-substrate" else None
    n_samples = args.n_samples or int(config["experiments"]["n_samples"])
    report = cmd_reconstruct(args.model, data, spec, args.backend, n_samples, args.seed, sampler, compile_cfg,
                             args.normalization, args.threads)
    _write(report, args)
    final = report.series["mean_hamming"].rows[-1]
    print(f"Mean normalised Hamming distance after {final[0]} samples: {final[1]:.4f}")


@log_performance(threshold_seconds=60.0)
@log_exceptions("Figures command failed")
def figures_command(args, config: Dict):
    """Plot-ready data for each requested figure or table."""
    reports = cmd_figures(args.which, config, args.seed, args.threads, args.model, args.data, args.test_data)
    for report in reports:
        _write(report, args)


@log_performance(threshold_seconds=60.0)
@log_exceptions("AIS command failed")
def ais_command(args, config: Dict):
    """log Z (and the mean test log-probability when data is given) by AIS."""
    model = load_model(args.model)
    cfg = AisConfig.from_config(
        _override(config["ais"], n_intermediate=args.n_intermediate, n_runs=args.n_runs), args.seed
    )
    report = ExperimentReport("ais", {"seed": args.seed, "n_intermediate": cfg.n_intermediate, "n_runs": cfg.n_runs},
                              model_sha256=sha256_file(args.model))
    series = report.new_series("ais", ["quantity", "value", "stderr"])
    if args.data:
        data = load_mnist(args.data)
        if args.n_images:
            data = data.subset(min(args.n_images, len(data)))
        train = load_mnist(args.train_data) if args.train_data else None
        logp, stderr = ais_log_prob(model, data, cfg, args.threads, train_data=train)
        series.add("mean_log_prob", logp, stderr)
        print(f"Mean log-probability over {len(data)} images: {logp:.3f} +/- {stderr:.3f}")
    else:
        log_z, stderr = ais_log_partition(model, cfg, threads=args.threads)
        series.add("log_partition", log_z, stderr)
        print(f"log Z = {log_z:.4f} +/- {stderr:.4f}")
    _write(report, args)


@log_exceptions("Occlude command failed")
def occlude_command(args, config: Dict):
    """Write occluded images and their known-pixel masks as IDX files."""
    data = load_mnist(args.data)
    if args.n_images:
        data = data.subset(min(args.n_images, len(data)))
    spec = OcclusionSpec.from_config(
        _override(config["occlusion"], fraction=args.fraction, geometry=args.geometry), args.seed
    )
    rngs = spawn_streams(args.seed, "occlusion", len(data))
    pairs = [occlude(img, spec, rng) for img, rng in zip(data.images, rngs)]
    output = Path(args.output)
    save_idx(output, np.stack([p[0] for p in pairs]).astype(np.uint8))
    mask_path = output.with_name(output.name + ".mask")
    save_idx(mask_path, np.stack([p[1] for p in pairs]).astype(np.uint8))
    print(f"{len(pairs)} occluded images written to {output} (known-pixel masks in {mask_path})")


def _add_sampler_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("sampler (defaults from the sampler config section)")
    g.add_argument("--s", type=int, help="Scaling factor")
    g.add_argument("--T-S", dest="T_S", type=int, help="Sampling window in ticks")
    g.add_argument("--V-th", dest="V_th", type=int, help="Base threshold")
    g.add_argument("--M", type=int, help="Threshold randomness bits")
    g.add_argument("--L", type=int, help="Stochastic leak magnitude")
    g.add_argument("--V-sat", dest="V_sat", type=int, help="Saturation potential (default V_th + 2^M - 1)")
    g.add_argument("--leak-mode", choices=LEAK_MODES, help="Stochastic leak comparison")


def _add_compile_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("compiler (defaults from the compiler config section)")
    g.add_argument("--T-A", dest="T_A", type=int, help="Accumulation window in ticks")
    g.add_argument("--C-minus", dest="C_minus", type=int, help="Stage-1 negative saturation")
    g.add_argument("--strategy", choices=STRATEGIES, help="Stage-2 weight packing strategy")
    g.add_argument("--central-weight", type=int, help="Central weight for strategy s1_2 (default: sweep)")
    g.add_argument("--no-s2", action="store_true", help="Disable stage-2 source sharing")
    g.add_argument("--no-s3", action="store_true", help="Disable first-fit-decreasing core packing")


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(
        description="Neuro-RBM - digital spiking Gibbs samplers for restricted Boltzmann machines",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s train --data train-images-idx3-ubyte --patch 8 --model model.nrbm
  %(prog)s fit-sampler --s 50 --T-S 8
  %(prog)s map --model model.nrbm --placement mapped/
  %(prog)s validate mapped/
  %(prog)s reconstruct --model model.nrbm --data t10k-images-idx3-ubyte --backend neural-fast --fraction 0.35
  %(prog)s figures table1 fig13 --out-dir runs
        """
    )
    parser.add_argument("--config", "-c", default="config.json",
                        help="Path to configuration file (default: config.json)")
    parser.add_argument("--seed", type=int, help="Base seed (default from config)")
    parser.add_argument("--threads", type=int, help="Worker threads (default from config)")
    parser.add_argument("--out-dir", help="Experiment output directory (default from config)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Console log level")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    train = subparsers.add_parser("train", help="Train a masked RBM with PCD")
    train.add_argument("--data", required=True, help="MNIST IDX image file")
    train.add_argument("--model", required=True, help="Output model file")
    train.add_argument("--patch", type=int, default=8, help="Patch size p (default: 8)")
    train.add_argument("--n-images", type=int, help="Use only the first n images")
    train.add_argument("--learning-rate", type=float)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--chains", type=int, help="Persistent chains")
    train.add_argument("--quantize", type=int, help="Store the model quantized with this s")
    train.add_argument("--no-json", action="store_true", help="Skip the JSON export")

    fit = subparsers.add_parser("fit-sampler", help="Grid-search sampler parameters")
    fit.add_argument("--s", type=int)
    fit.add_argument("--T-S", dest="T_S", type=int)
    fit.add_argument("--v-th-range", nargs=2, type=int, default=[0, 300], metavar=("LO", "HI"))
    fit.add_argument("--v-th-step", type=int, default=1)
    fit.add_argument("--m-range", nargs=2, type=int, default=[1, 10], metavar=("LO", "HI"))
    fit.add_argument("--l-range", nargs=2, type=int, default=[1, 255], metavar=("LO", "HI"))
    fit.add_argument("--reduction", choices=["mean", "sum"])
    fit.add_argument("--leak-mode", choices=LEAK_MODES)

    dtmc = subparsers.add_parser("analyze-dtmc", help="Spike-probability curve of a sampler configuration")
    _add_sampler_flags(dtmc)

    mapping = subparsers.add_parser("map", help="Compile a model onto the substrate")
    mapping.add_argument("--model", required=True, help="Model file (quantized with --s unless stored at that s)")
    mapping.add_argument("--placement", required=True, help="Output directory")
    _add_sampler_flags(mapping)
    _add_compile_flags(mapping)

    validate = subparsers.add_parser("validate", help="Check a network file or a map output directory")
    validate.add_argument("path", help="network.json or a map output directory")
    validate.add_argument("--model", help="Model file for the weight-conservation check")

    simulate = subparsers.add_parser("simulate", help="Run a compiled network as a Gibbs sampler")
    simulate.add_argument("--placement", required=True, help="Map output directory")
    simulate.add_argument("--periods", type=int, default=10, help="Image periods to run (default: 10)")
    simulate.add_argument("--v0", help="Initial visible state: zeros, random or a bit string")
    simulate.add_argument("--trace", action="store_true", help="Also write the spike trace")

    reconstruct = subparsers.add_parser("reconstruct", help="Reconstruct occluded images")
    reconstruct.add_argument("--model", required=True)
    reconstruct.add_argument("--data", required=True, help="MNIST IDX image file")
    reconstruct.add_argument("--backend", choices=BACKENDS, default="ideal")
    reconstruct.add_argument("--fraction", type=float, help="Occluded share of pixels")
    reconstruct.add_argument("--geometry", choices=GEOMETRIES)
    reconstruct.add_argument("--n-samples", type=int)
    reconstruct.add_argument("--n-images", type=int)
    reconstruct.add_argument("--normalization", choices=["all-over-known", "known-only", "all"],
                             default="all-over-known")
    _add_sampler_flags(reconstruct)
    _add_compile_flags(reconstruct)

    figures = subparsers.add_parser("figures", help="Data behind the figures and tables")
    figures.add_argument("which", nargs="+", choices=list(FIGURES) + ["all"])
    figures.add_argument("--model", help="Trained model (table2, fig15, fig16)")
    figures.add_argument("--data", help="MNIST IDX training images (fig7, fig15, fig16)")
    figures.add_argument("--test-data", help="MNIST IDX test images")

    ais = subparsers.add_parser("ais", help="Annealed importance sampling")
    ais.add_argument("--model", required=True)
    ais.add_argument("--data", help="Test images; without them only log Z is reported")
    ais.add_argument("--train-data", help="Training images; the base-rate model uses their pixel marginals")
    ais.add_argument("--n-images", type=int)
    ais.add_argument("--n-intermediate", type=int)
    ais.add_argument("--n-runs", type=int)

    occlude_parser = subparsers.add_parser("occlude", help="Write occluded images as IDX files")
    occlude_parser.add_argument("--data", required=True)
    occlude_parser.add_argument("--output", required=True)
    occlude_parser.add_argument("--fraction", type=float)
    occlude_parser.add_argument("--geometry", choices=GEOMETRIES)
    occlude_parser.add_argument("--n-images", type=int)

    return parser


COMMANDS = {
    "train": train_command,
    "fit-sampler": fit_sampler_command,
    "analyze-dtmc": analyze_dtmc_command,
    "map": map_command,
    "validate": validate_command,
    "simulate": simulate_command,
    "reconstruct": reconstruct_command,
    "figures": figures_command,
    "ais": ais_command,
    "occlude": occlude_command,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main application entry point.

    Returns
    -------
    Process exit code: 0 success, 1 usage error, 2 validation failure, 3 missing prerequisite
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_USAGE

    try:
        config = load_config(args.config)
        if args.log_level:
            set_console_level(args.log_level)
        experiments = config["experiments"]
        args.seed = args.seed if args.seed is not None else int(experiments["seed"])
        args.threads = args.threads if args.threads is not None else int(experiments["threads"])
        args.out_dir = args.out_dir or experiments["out_dir"]
        COMMANDS[args.command](args, config)
    except Exception as e:
        code = exit_code_for(e)
        if not isinstance(e, ValidationFailure):
            log_exception(logger, e, f"Command '{args.command}'")
        print(f"Error: {e}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
