"""
Experiment orchestration behind the CLI.

* ``cmd_reconstruct``: pattern completion of occluded images with one of four
  inference backends (ideal, neural-fast, neural-tick, placed-substrate).
* ``cmd_figures``: plot-ready CSV data for the sampler, quantization,
  packing, resource and reconstruction studies.
* ``validate_artifact``: configuration and placement checks of a compiled
  network.

Every command returns ExperimentReport objects; nothing here plots.
"""

from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ais import AisConfig, ais_log_prob
from artifacts import ExperimentReport, sha256_file
from compiler import (
    CompileConfig,
    compile_model,
    load_placement,
    placement_violations,
    resource_report,
    stage2_neuron_counts,
)
from errors import InvalidParameterError, MissingPrerequisiteError, ValidationFailure
from logging_config import get_logger
from logging_decorators import log_exceptions, log_performance
from mnist_data import Dataset, OcclusionSpec, encode_idx, hamming_metric, load_mnist, occlude
from model_io import Model, load_model
from neural_sampler import (
    REFERENCE_CONFIGS,
    FastUnitSampler,
    SamplerConfig,
    TickUnitSampler,
    mse_vs_logistic,
    simulate_sampler_batch,
    spike_probability_curve,
)
from packing import count_neurons, sweep_central_weight
from placed_sampler import PlacedSampler
from rbm_core import (
    IdealSampler,
    QuantizedRbm,
    RbmModel,
    empirical_distribution,
    exact_distribution,
    gibbs_chain,
    kl_divergence,
    logistic,
    patch_mask,
    quantize,
)
from rbm_training import TrainConfig, train_pcd
from rng_streams import make_rng, spawn_streams
from substrate_sim import load_network, validate_network

logger = get_logger(__name__)

BACKENDS = ("ideal", "neural-fast", "neural-tick", "placed-substrate")
FIGURES = ("fig4", "fig7", "fig8", "fig9-kl", "fig13", "fig15", "fig16", "table1", "table2")

PathLike = Union[str, Path]


# --- reconstruction -----------------------------------------------------------

def _real_model(model: Model) -> RbmModel:
    return model.base if isinstance(model, QuantizedRbm) else model


def as_quantized(model: Model, s: int) -> QuantizedRbm:
    if isinstance(model, QuantizedRbm) and model.s == s:
        return model
    return quantize(_real_model(model), s)


def run_backend(
    backend: str,
    model: Model,
    v0: np.ndarray,
    known: np.ndarray,
    n_samples: int,
    seed: int,
    sampler_cfg: SamplerConfig,
    compile_cfg: Optional[CompileConfig] = None,
    threads: int = 1,
) -> np.ndarray:
    """
    Clamped Gibbs chains from a batch of corrupted images.

    Args
    ----
    backend: one of BACKENDS
    model: real or quantized model
    v0: (n_images, n_visible) starting states; known pixels hold the observation
    known: (n_images, n_visible) clamp masks
    n_samples: full sweeps per image
    seed: base seed

    Returns
    -------
    int8 array (n_images, n_samples, n_visible)
    """
    if backend not in BACKENDS:
        raise InvalidParameterError(f"backend must be one of {BACKENDS}, got {backend!r}")
    if n_samples < 1:
        raise InvalidParameterError(f"n_samples must be >= 1, got {n_samples}")
    v0 = np.asarray(v0, dtype=np.int8)
    known = np.asarray(known, dtype=bool)

    if backend == "placed-substrate":
        if compile_cfg is None:
            raise InvalidParameterError("the placed-substrate backend needs a compile configuration")
        qm = as_quantized(model, compile_cfg.sampler.s)
        sampler = PlacedSampler(compile_model(qm, compile_cfg, threads=threads))
        out = np.empty((len(v0), n_samples, v0.shape[1]), dtype=np.int8)
        for k in range(len(v0)):
            out[k] = sampler.sample(v0[k], n_samples, clamp=known[k], seed=seed + k)
        return out

    rng = make_rng(seed, f"reconstruct:{backend}")
    if backend == "ideal":
        m, unit_sampler = _real_model(model), IdealSampler()
    elif backend == "neural-fast":
        m, unit_sampler = as_quantized(model, sampler_cfg.s), FastUnitSampler(spike_probability_curve(sampler_cfg))
    else:
        m, unit_sampler = as_quantized(model, sampler_cfg.s), TickUnitSampler(sampler_cfg)
    vs, _ = gibbs_chain(m, v0, unit_sampler, n_samples, rng, clamp=known)
    return np.swapaxes(vs, 0, 1)


def hamming_series(
    original: np.ndarray, samples: np.ndarray, known: np.ndarray, normalization: str = "all-over-known"
) -> np.ndarray:
    """(n_images, n_samples) normalised Hamming distance of every sample."""
    out = np.empty(samples.shape[:2])
    for k in range(len(samples)):
        out[k] = hamming_metric(np.broadcast_to(original[k], samples[k].shape), samples[k], known[k], normalization)
    return out


def _occlude_batch(images: np.ndarray, spec: OcclusionSpec, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rngs = spawn_streams(seed, "occlusion", len(images))
    corrupted = np.empty_like(images)
    known = np.empty(images.shape, dtype=bool)
    for k, img in enumerate(images):
        corrupted[k], known[k] = occlude(img, spec, rngs[k])
    return corrupted, known


@log_performance(threshold_seconds=5.0)
def reconstruct(
    model: Model,
    dataset: Dataset,
    spec: OcclusionSpec,
    backend: str,
    n_samples: int,
    seed: int,
    sampler_cfg: SamplerConfig,
    compile_cfg: Optional[CompileConfig] = None,
    normalization: str = "all-over-known",
    threads: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Occlude, reconstruct and score every image of ``dataset``.

    Returns
    -------
    (samples (n_images, n_samples, N, N), Hamming distances (n_images, n_samples))
    """
    if dataset.flat.shape[1] != _real_model(model).n_visible:
        raise InvalidParameterError(
            f"images have {dataset.flat.shape[1]} pixels, model has {_real_model(model).n_visible} visible units"
        )
    corrupted, known = _occlude_batch(dataset.images, spec, seed)
    n = len(dataset)
    flat_known = known.reshape(n, -1)
    samples = run_backend(
        backend, model, corrupted.reshape(n, -1), flat_known, n_samples, seed, sampler_cfg, compile_cfg, threads
    )
    hd = hamming_series(dataset.flat, samples, flat_known, normalization)
    return samples.reshape(n, n_samples, dataset.side, dataset.side), hd


@log_exceptions("Reconstruct command failed")
def cmd_reconstruct(
    model_path: PathLike,
    dataset: Dataset,
    spec: OcclusionSpec,
    backend: str,
    n_samples: int,
    seed: int,
    sampler_cfg: SamplerConfig,
    compile_cfg: Optional[CompileConfig] = None,
    normalization: str = "all-over-known",
    threads: int = 1,
) -> ExperimentReport:
    """Reconstruction run as a report: per-sample Hamming series plus the samples as an IDX file."""
    model = load_model(model_path)
    samples, hd = reconstruct(model, dataset, spec, backend, n_samples, seed, sampler_cfg, compile_cfg,
                              normalization, threads)
    report = ExperimentReport(
        f"reconstruct-{backend}",
        {
            "seed": seed, "backend": backend, "n_samples": n_samples, "n_images": len(dataset),
            "occlusion": {"fraction": spec.fraction, "geometry": spec.geometry},
            "normalization": normalization, "sampler": sampler_cfg.as_dict(),
            "compiler": compile_cfg.as_dict() if compile_cfg is not None else None,
        },
        model_sha256=sha256_file(model_path),
    )
    per_image = report.new_series("hamming", ["image", "sample", "hamming"])
    for k in range(hd.shape[0]):
        for t in range(hd.shape[1]):
            per_image.add(k, t + 1, hd[k, t])
    mean = report.new_series("mean_hamming", ["sample", "mean", "std"])
    for t in range(hd.shape[1]):
        mean.add(t + 1, hd[:, t].mean(), hd[:, t].std())
    report.extra_files["samples.idx"] = encode_idx(samples.astype(np.uint8))
    logger.info(f"Reconstruction ({backend}): final mean Hamming distance {hd[:, -1].mean():.4f}")
    return report


# --- figures ------------------------------------------------------------------

def figure_table1(domain_factor: int = 6) -> ExperimentReport:
    """MSE of the reference sampler configurations (sum and mean reductions)."""
    report = ExperimentReport("table1", {"domain_factor": domain_factor, "seed": None})
    series = report.new_series("table1", ["config", "T_S", "V_th", "M", "L", "mse_sum", "mse_mean", "reference"])
    for name, (cfg, reference) in REFERENCE_CONFIGS.items():
        curve = spike_probability_curve(cfg)
        domain = (-domain_factor * cfg.s, domain_factor * cfg.s)
        series.add(name, cfg.T_S, cfg.V_th, cfg.M, cfg.L,
                   mse_vs_logistic(curve, cfg.s, domain, "sum"),
                   mse_vs_logistic(curve, cfg.s, domain, "mean"), reference)
    return report


def figure_fig4(cfg: SamplerConfig, n_trials: int, step: int, seed: int) -> ExperimentReport:
    """Chain-computed spike probability against tick-level Monte-Carlo rates."""
    report = ExperimentReport("fig4", {"sampler": cfg.as_dict(), "n_trials": n_trials, "step": step, "seed": seed})
    curve = spike_probability_curve(cfg)
    rng = make_rng(seed, "fig4")
    series = report.new_series("fig4", ["V_init", "dtmc", "monte_carlo", "logistic", "band_3sigma"])
    for v in range(-cfg.v_sat, cfg.v_sat + 1, step):
        rate = float(simulate_sampler_batch(cfg, np.full(n_trials, v), rng).mean())
        p = float(curve(v))
        series.add(v, p, rate, float(logistic(v / cfg.s)), 3.0 * np.sqrt(max(p * (1 - p), 1e-12) / n_trials))
    return report


def figure_fig8(s_values: Sequence[int], n_models: int, seed: int, n_visible: int = 5, n_hidden: int = 5) -> ExperimentReport:
    """KL between exact distributions of random models and their quantized images, per s."""
    report = ExperimentReport("fig8", {"s_values": list(s_values), "n_models": n_models, "seed": seed,
                                       "n_visible": n_visible, "n_hidden": n_hidden})
    rngs = spawn_streams(seed, "fig8", n_models)
    models = [RbmModel.random(n_visible, n_hidden, rng) for rng in rngs]
    exact = [exact_distribution(m) for m in models]
    series = report.new_series("fig8", ["s", "median_kl", "mean_kl", "max_kl"])
    for s in s_values:
        kls = np.array([kl_divergence(P, exact_distribution(quantize(m, s))) for m, P in zip(models, exact)])
        series.add(s, float(np.median(kls)), float(kls.mean()), float(kls.max()))
    return report


def figure_fig9_kl(n_models: int, n_runs: int, n_samples: int, seed: int,
                   n_visible: int = 5, n_hidden: int = 5) -> ExperimentReport:
    """
    Gibbs-chain KL of every reference sampler configuration.

    Each run is a chain of ``n_samples`` sweeps; the score is
    D_KL(empirical || exact) over joint states.
    """
    report = ExperimentReport("fig9-kl", {"n_models": n_models, "n_runs": n_runs, "n_samples": n_samples,
                                          "seed": seed, "n_visible": n_visible, "n_hidden": n_hidden})
    models = [RbmModel.random(n_visible, n_hidden, rng) for rng in spawn_streams(seed, "fig9-models", n_models)]
    series = report.new_series("fig9_kl", ["config", "mse_sum", "mean_kl", "std_kl"])
    samplers: List[Tuple[str, float, Callable[[RbmModel], Tuple[object, object]]]] = [
        ("ideal", 0.0, lambda m: (m, IdealSampler())),
    ]
    for name, (cfg, _) in REFERENCE_CONFIGS.items():
        curve = spike_probability_curve(cfg)
        mse = mse_vs_logistic(curve, cfg.s, None, "sum")
        samplers.append((name, mse, lambda m, cfg=cfg, curve=curve: (quantize(m, cfg.s), FastUnitSampler(curve))))

    for name, mse, build in samplers:
        kls = []
        for i, m in enumerate(models):
            P = exact_distribution(m)
            target, unit_sampler = build(m)
            rng = make_rng(seed, f"fig9:{name}:{i}")
            v0 = np.zeros((n_runs, n_visible), dtype=np.int8)
            vs, hs = gibbs_chain(target, v0, unit_sampler, n_samples, rng)
            for r in range(n_runs):
                Q = empirical_distribution(vs[:, r], hs[:, r])
                kls.append(kl_divergence(Q, P))
        series.add(name, mse, float(np.mean(kls)), float(np.std(kls)))
        logger.info(f"fig9-kl {name}: mean KL {np.mean(kls):.5f}")
    return report


def fig13_weights(max_weight: int = 20) -> List[int]:
    """Signed weight set -max..-1, 1..max."""
    return list(range(-max_weight, 0)) + list(range(1, max_weight + 1))


def figure_fig13(T_A: int = 4, max_weight: int = 20) -> ExperimentReport:
    """Stage-2 neuron counts: no optimisation, strategy 1.1, strategy 1.2 per central weight."""
    weights = fig13_weights(max_weight)
    report = ExperimentReport("fig13", {"T_A": T_A, "weights": weights, "seed": None})
    none = count_neurons([weights], T_A, "none")
    s11 = count_neurons([weights], T_A, "s1_1")
    best, counts = sweep_central_weight([weights], T_A)
    series = report.new_series("fig13", ["central_weight", "none", "s1_1", "s1_2"])
    for c in sorted(counts):
        series.add(c, none, s11, counts[c])
    summary = report.new_series("fig13_summary", ["quantity", "value"])
    summary.add("none", none)
    summary.add("s1_1", s11)
    summary.add("best_central_weight", best)
    summary.add("s1_2_best", counts[best])
    return report


TABLE2_ROWS = (
    ("no optimisation", "none", False, False),
    ("1.1, 2, 3", "s1_1", True, True),
    ("1.2, 2, 3", "s1_2", True, True),
)


def figure_table2(model: QuantizedRbm, base_cfg: CompileConfig, threads: int = 1,
                  model_source: str = "") -> ExperimentReport:
    """Core utilisation of the full model under the three strategy sets."""
    report = ExperimentReport("table2", {"compiler": base_cfg.as_dict(), "model": model_source,
                                         "n_visible": model.n_visible, "n_hidden": model.n_hidden, "seed": None})
    series = report.new_series("table2", ["optimisation", "stage1", "stage2", "stage3", "cores", "utilisation_percent",
                                          "central_weight"])
    for label, strategy, s2, s3 in TABLE2_ROWS:
        cfg = replace(base_cfg, strategy=strategy, s2=s2, s3=s3)
        placed = compile_model(model, cfg, threads=threads)
        rr = resource_report(placed)
        series.add(label, rr.stages["stage1"].cores, rr.stages["stage2"].cores, rr.stages["stage3"].cores,
                   rr.total_cores, round(rr.utilisation, 2), placed.central_weight)
    counts = stage2_neuron_counts(model, base_cfg.T_A)
    neurons = report.new_series("table2_stage2_neurons", ["strategy", "neurons"])
    for k, v in counts.items():
        neurons.add(k, v)
    return report


def figure_fig7(train: Dataset, test: Dataset, patch_sizes: Sequence[int], train_cfg: TrainConfig,
                ais_cfg: AisConfig, threads: int = 1) -> ExperimentReport:
    """Test log-probability (AIS) of PCD-trained models per patch size."""
    report = ExperimentReport("fig7", {"patch_sizes": list(patch_sizes), "n_train": len(train), "n_test": len(test),
                                       "training": vars(train_cfg), "ais": {"n_intermediate": ais_cfg.n_intermediate,
                                       "n_runs": ais_cfg.n_runs}, "seed": train_cfg.seed})
    series = report.new_series("fig7", ["patch", "hidden_units", "connections", "log_prob", "stderr"])
    for p in patch_sizes:
        mask = patch_mask(train.side, p)
        m = train_pcd(train, mask, train_cfg)
        logp, stderr = ais_log_prob(m, test, ais_cfg, threads, train_data=train)
        series.add(p, mask.shape[1], int(mask.sum()), logp, stderr)
    return report


def figure_fig15(model: Model, data: Dataset, levels: Sequence[float], n_samples: int, seed: int,
                 sampler_cfg: SamplerConfig, geometry: str = "contiguous-block") -> ExperimentReport:
    """Final mean Hamming distance per occlusion level, ideal versus neural sampler."""
    report = ExperimentReport("fig15", {"levels": list(levels), "n_images": len(data), "n_samples": n_samples,
                                        "seed": seed, "sampler": sampler_cfg.as_dict(), "geometry": geometry})
    series = report.new_series("fig15", ["occlusion", "ideal", "neural", "difference"])
    for level in levels:
        spec = OcclusionSpec(level, geometry, seed)
        result = {}
        for backend in ("ideal", "neural-fast"):
            _, hd = reconstruct(model, data, spec, backend, n_samples, seed, sampler_cfg)
            result[backend] = float(hd[:, -1].mean())
        series.add(level, result["ideal"], result["neural-fast"], result["neural-fast"] - result["ideal"])
    return report


def figure_fig16(model: Model, data: Dataset, fraction: float, n_samples: int, seed: int,
                 sampler_cfg: SamplerConfig, geometry: str = "contiguous-block") -> ExperimentReport:
    """Mean Hamming distance after each reconstruction sample."""
    report = ExperimentReport("fig16", {"fraction": fraction, "n_images": len(data), "n_samples": n_samples,
                                        "seed": seed, "sampler": sampler_cfg.as_dict(), "geometry": geometry})
    spec = OcclusionSpec(fraction, geometry, seed)
    curves = {}
    for backend in ("ideal", "neural-fast"):
        _, hd = reconstruct(model, data, spec, backend, n_samples, seed, sampler_cfg)
        curves[backend] = hd.mean(axis=0)
    series = report.new_series("fig16", ["sample", "ideal", "neural"])
    for t in range(n_samples):
        series.add(t + 1, float(curves["ideal"][t]), float(curves["neural-fast"][t]))
    settle = report.new_series("fig16_convergence", ["backend", "samples_to_converge"])
    for backend, curve in curves.items():
        settle.add(backend, convergence_sample(curve))
    return report


def convergence_sample(curve: np.ndarray, tolerance: float = 0.02) -> int:
    """First sample index (1-based) after which the curve stays within ``tolerance`` of its tail mean."""
    curve = np.asarray(curve, dtype=np.float64)
    tail = curve[len(curve) // 2:].mean()
    outside = np.flatnonzero(np.abs(curve - tail) > tolerance)
    return int(outside[-1] + 2) if len(outside) else 1


def _require(value, what: str):
    if value is None:
        raise MissingPrerequisiteError(what)
    return value


@log_performance(threshold_seconds=5.0)
@log_exceptions("Figures command failed")
def cmd_figures(
    which: Sequence[str],
    config: Dict,
    seed: int = 0,
    threads: int = 1,
    model_path: Optional[PathLike] = None,
    data_path: Optional[PathLike] = None,
    test_path: Optional[PathLike] = None,
) -> List[ExperimentReport]:
    """
    Build the data behind each requested figure or table.

    Args
    ----
    which: names from FIGURES ("all" expands to every one)
    config: merged configuration (sections sampler, compiler, training, ais, occlusion, figures)
    model_path: trained model for table2, fig15 and fig16 (table2 falls back to a random patched model)
    data_path / test_path: IDX image files for fig7, fig15 and fig16

    Raises
    ------
    InvalidParameterError: unknown figure name
    MissingPrerequisiteError: a needed model or dataset is absent
    """
    names = list(FIGURES) if "all" in which else list(which)
    unknown = [n for n in names if n not in FIGURES]
    if unknown:
        raise InvalidParameterError(f"unknown figures {unknown}; choose from {FIGURES}")
    fig = config.get("figures", {})
    sampler_cfg = SamplerConfig.from_config(config["sampler"])
    reports = []

    def dataset(path, n, what):
        _require(path, f"{what} needs a dataset (--data, MNIST IDX images)")
        data = load_mnist(path)
        return data.subset(min(n, len(data)))

    for name in names:
        logger.info(f"Building {name}")
        if name == "table1":
            report = figure_table1(int(config["sampler"].get("mse_domain_factor", 6)))
        elif name == "fig4":
            report = figure_fig4(sampler_cfg, int(fig.get("fig4_trials", 10000)), int(fig.get("fig4_step", 5)), seed)
        elif name == "fig8":
            report = figure_fig8(fig.get("fig8_s_values", [1, 2, 5, 10, 15, 20, 30, 50, 75, 100]),
                                 int(fig.get("fig8_models", 100)), seed)
        elif name == "fig9-kl":
            report = figure_fig9_kl(int(fig.get("fig9_models", 5)), int(fig.get("fig9_runs", 5)),
                                    int(fig.get("fig9_samples", 100000)), seed)
        elif name == "fig13":
            report = figure_fig13(int(fig.get("fig13_T_A", 4)), int(fig.get("fig13_max_weight", 20)))
        elif name == "table2":
            compile_cfg = CompileConfig.from_config(
                {**config["compiler"], "T_A": int(fig.get("table2_T_A", config["compiler"]["T_A"]))}, sampler_cfg
            )
            if model_path is not None:
                model, source = as_quantized(load_model(model_path), sampler_cfg.s), str(model_path)
            else:
                rng = make_rng(seed, "table2-model")
                real = RbmModel.random(784, 441, rng, mask=patch_mask(28, 8))
                model, source = quantize(real, sampler_cfg.s), "random 784+441, p=8"
            report = figure_table2(model, compile_cfg, threads, source)
        elif name == "fig7":
            train_cfg = TrainConfig.from_config(config["training"], seed)
            train_cfg = replace(train_cfg, epochs=int(fig.get("fig7_epochs", train_cfg.epochs)))
            ais_cfg = AisConfig.from_config(config["ais"], seed)
            train = dataset(data_path, int(fig.get("fig7_train_images", 5000)), "fig7")
            test = dataset(test_path or data_path, int(fig.get("fig7_test_images", 1000)), "fig7")
            report = figure_fig7(train, test, fig.get("fig7_patch_sizes", [4, 8, 12, 16, 20, 28]), train_cfg,
                                 ais_cfg, threads)
        else:
            model = load_model(_require(model_path, f"{name} needs a trained model (--model, see 'train')"))
            data = dataset(test_path or data_path, int(fig.get("fig15_images", 200)), name)
            geometry = config["occlusion"].get("geometry", "contiguous-block")
            n_samples = int(config["experiments"].get("n_samples", 50))
            if name == "fig15":
                report = figure_fig15(model, data, fig.get("fig15_levels", [0.1, 0.25, 0.35, 0.5]), n_samples,
                                      seed, sampler_cfg, geometry)
            else:
                report = figure_fig16(model, data, float(config["occlusion"]["fraction"]), n_samples, seed,
                                      sampler_cfg, geometry)
            report.model_sha256 = sha256_file(model_path)
        reports.append(report)
    return reports


# --- validation ---------------------------------------------------------------

@log_exceptions("Validation failed", log_level="WARNING")
def validate_artifact(path: PathLike, model_path: Optional[PathLike] = None) -> List[str]:
    """
    Check a network file or a map output directory.

    A directory holding ``placement.json`` gets the placement invariants as
    well (and weight conservation when ``model_path`` is given); a bare
    network file gets validate_network.

    Raises
    ------
    MissingPrerequisiteError: nothing at ``path``
    ValidationFailure: violations were found (carried on the exception)
    """
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(f"no network at {path}")
    if path.is_dir():
        placed = load_placement(path)
        model = None
        if model_path is not None:
            model = as_quantized(load_model(model_path), placed.cfg.sampler.s)
        violations = placement_violations(placed, model)
        n_cores = len(placed.network.cores)
    else:
        network = load_network(path)
        violations = validate_network(network)
        n_cores = len(network.cores)
    if violations:
        raise ValidationFailure(f"{len(violations)} violations in {n_cores} cores", violations)
    logger.info(f"{path}: {n_cores} cores, no violations")
    return violations
