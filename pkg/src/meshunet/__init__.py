"""Graph U-Net surrogates for hyperelastic mesh simulations.

The package pairs a mesh-native neural network (per-node unshared
aggregation weights, clique-based graph pooling, U-Net topology with skip
concatenations) with a plane-strain neo-Hookean finite-element solver that
generates its training data and verifies its predictions.

Submodules are imported lazily so the command-line entry point can cap BLAS
thread pools before numpy first loads.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # mesh
    "Mesh": ".mesh",
    "MeshFormatError": ".mesh",
    "read_mesh": ".mesh",
    "write_mesh": ".mesh",
    "parse_mesh_text": ".mesh",
    "rect_quad_mesh": ".mesh",
    "l_shape_quad_mesh": ".mesh",
    "beam_tri_mesh": ".mesh",
    # graph
    "Adjacency": ".graph",
    "adjacency_from_mesh": ".graph",
    "adjacency_power": ".graph",
    "generate_pooling": ".graph",
    "optimize_pooling": ".graph",
    "pooled_adjacency": ".graph",
    "PoolLevel": ".graph",
    "PoolPlan": ".graph",
    "build_pool_plan": ".graph",
    "save_pool_plan": ".graph",
    "load_pool_plan": ".graph",
    "graph_diameter": ".graph",
    # layers
    "AggregationLayer": ".layers",
    "Partition": ".layers",
    "PoolLayer": ".layers",
    "UnpoolLayer": ".layers",
    "leaky_relu": ".layers",
    # network
    "ModelConfig": ".network",
    "GraphUNet": ".network",
    "build_model": ".network",
    "count_parameters": ".network",
    "model_forward": ".network",
    "model_backward": ".network",
    "save_model": ".network",
    "load_model": ".network",
    # training
    "Dataset": ".training",
    "split_dataset": ".training",
    "AdamState": ".training",
    "adam_step": ".training",
    "learning_rate_at": ".training",
    "mse_loss": ".training",
    "TrainConfig": ".training",
    "TrainReport": ".training",
    "TrainingError": ".training",
    "train": ".training",
    # fem
    "Material": ".fem",
    "lame_parameters": ".fem",
    "strain_energy": ".fem",
    "pk1_stress": ".fem",
    "cauchy_stress": ".fem",
    "von_mises_stress": ".fem",
    "internal_force": ".fem",
    "internal_force_and_tangent": ".fem",
    "total_strain_energy": ".fem",
    "BoundaryValueProblem": ".fem",
    "nodes_on_edge": ".fem",
    "fix_nodes": ".fem",
    "point_load": ".fem",
    "NewtonOptions": ".fem",
    "SolveResult": ".fem",
    "newton_solve": ".fem",
    "SolverError": ".fem",
    "ElementInversionError": ".fem",
    "GenerationError": ".fem",
    "generate_dataset": ".fem",
    "write_dataset": ".fem",
    "read_dataset": ".fem",
    # metrics
    "sample_error": ".metrics",
    "aggregate": ".metrics",
    "max_dof_error": ".metrics",
    "l2_error_field": ".metrics",
    "EvalReport": ".metrics",
    "evaluate": ".metrics",
    "evaluate_model": ".metrics",
    "predict_test_set": ".metrics",
    "ResidualReport": ".metrics",
    "residual_check": ".metrics",
    # config
    "RunConfig": ".config",
    "ConfigError": ".config",
    "load_run_config": ".config",
    "parse_run_config": ".config",
    # util
    "stream_seed": ".util",
    "substream": ".util",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    try:
        module = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None
    return getattr(importlib.import_module(module, __name__), name)


def __dir__():
    return __all__
