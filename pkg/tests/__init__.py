"""
Test suite for the neuro_rbm toolkit.

Test Structure:
- test_rbm_core.py: models, exact inference, Gibbs sampling, quantization, patching
- test_neural_sampler.py: tick-level sampler, chain analysis, fitting
- test_training_eval.py: MNIST IDX handling, PCD training, AIS, occlusion
- test_substrate_sim.py: crossbar cores, tick semantics, network files
- test_packing.py / test_compiler.py: weight packing, placement, timing
- test_placed_sampler.py: compiled networks as Gibbs samplers
- test_experiments.py / test_neuro_rbm_app.py: figures, reconstruction, CLI
- test_model_io.py: model files, experiment artifacts, configuration
- test_logging_system.py: log files and logging decorators
- conftest.py: Shared fixtures and test configuration
"""
