"""Command-line driver: mesh ingestion -> pooling plan -> dataset generation
-> training -> evaluation -> field export.

    meshunet mesh-info MESH
    meshunet pool-plan    --config CFG
    meshunet gen-data     --config CFG
    meshunet train        --config CFG [--resume]
    meshunet eval         --config CFG [--oracle]
    meshunet export-field --config CFG [--sample K] [--oracle]

Global flags: --seed N (overrides [run] seed), --threads N (caps BLAS/OpenMP
thread pools), --verbose. Exit codes: 0 success, 1 usage or bad config
(including malformed input files and digest mismatches), 2 numerical failure
(non-convergence, NaN), 3 I/O failure.

Determinism: identical config and seed give byte-identical output files in
double precision. All randomness flows from the single run seed through
named substreams (init, data, shuffle, split); the pooling search uses the
run seed directly as the base of its trial-seed scan, so the default seed 0
scans trial seeds 0..trials-1.

Artifacts carry the digest of the mesh they were derived from, and every
command cross-checks digests before combining artifacts; a mismatch is a
refusal, never a silent coercion.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshunet",
        description="Graph U-Net surrogates for hyperelastic mesh simulations.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the [run] seed")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    common.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh-info", parents=[common], help="print mesh and graph statistics")
    p.add_argument("mesh", help="mesh file")

    for name, extra in (
        ("pool-plan", "build and save the multi-level pooling plan"),
        ("gen-data", "generate a force/displacement dataset by solving the BVP"),
        ("train", "train a model on a generated dataset"),
        ("eval", "evaluate a trained model on the test split"),
        ("export-field", "export one test sample's fields as CSV"),
    ):
        p = sub.add_parser(name, parents=[common], help=extra)
        p.add_argument("--config", required=True, help="run configuration file")
        if name == "train":
            p.add_argument(
                "--resume",
                action="store_true",
                help="continue from the saved model and optimizer state",
            )
        if name in ("eval", "export-field"):
            p.add_argument(
                "--oracle",
                action="store_true",
                help="use the FEM solver as the predictor instead of the model",
            )
        if name == "export-field":
            p.add_argument("--sample", type=int, default=0, help="test-split sample index")
    return parser


def _check_inputs(cfg, keys):
    from .config import ConfigError

    paths = []
    for key in keys:
        path = cfg.require_file(key)
        if not os.path.exists(path):
            raise ConfigError(f"[files] {key} = {path} does not exist")
        paths.append(path)
    return paths


def _effective_seed(cfg, args) -> int:
    return args.seed if args.seed is not None else cfg.seed


def _build_bvp(mesh, cfg):
    from .config import ConfigError
    from .fem import BoundaryValueProblem, fix_nodes, nodes_on_edge

    boundary = cfg.require("boundary", "boundary")
    material = cfg.require("material", "material")

    def region(edge, nodes, label):
        if edge is not None:
            axis, side = edge.split("_")
            found = nodes_on_edge(mesh, axis, side)
            if found.size == 0:
                raise ConfigError(f"no nodes on the {label} edge {edge}")
            return found
        return list(nodes)

    fixed = region(boundary.fixed_edge, boundary.fixed_nodes, "fixed")
    loaded = region(boundary.load_edge, boundary.load_nodes, "load")
    try:
        return BoundaryValueProblem(
            mesh=mesh,
            material=material,
            fixed_dofs=fix_nodes(fixed, mesh.dim),
            load_region=tuple(int(n) for n in loaded),
        )
    except ValueError as err:
        raise ConfigError(f"[boundary]: {err}") from None


def _load_plan_checked(plan_path, mesh, adjacency):
    from .config import ConfigError
    from .graph import load_pool_plan

    plan = load_pool_plan(plan_path, adjacency)
    if plan.mesh_digest is not None and plan.mesh_digest != mesh.digest():
        raise ConfigError(
            f"pool plan {plan_path} was built for a different mesh "
            f"(plan digest {plan.mesh_digest[:12]}..., mesh {mesh.digest()[:12]}...)"
        )
    return plan


def _load_dataset_checked(dataset_path, mesh):
    from .config import ConfigError
    from .fem import read_dataset

    dataset = read_dataset(dataset_path)
    if dataset.mesh_digest is not None and dataset.mesh_digest != mesh.digest():
        raise ConfigError(
            f"dataset {dataset_path} was generated on a different mesh "
            f"(dataset digest {dataset.mesh_digest[:12]}..., mesh {mesh.digest()[:12]}...)"
        )
    return dataset


def _split_fraction(cfg) -> float:
    return cfg.data.train_fraction if cfg.data is not None else 0.95


def _split_for_eval(cfg, dataset, seed):
    from .training import split_dataset
    from .util import stream_seed

    return split_dataset(dataset, _split_fraction(cfg), stream_seed(seed, "split"))


def _model_dtype(cfg):
    import numpy as np

    return np.float32 if cfg.model_dtype == "float32" else np.float64


def cmd_mesh_info(args) -> int:
    from .graph import adjacency_from_mesh, graph_diameter
    from .mesh import read_mesh

    mesh = read_mesh(args.mesh)
    adj = adjacency_from_mesh(mesh)
    counts = adj.row_counts()
    diameter, exact = graph_diameter(adj)
    print(f"N={mesh.n_nodes} E={mesh.n_elements} dofs={mesh.n_dofs} elem={mesh.elem_type}")
    print(
        f"adjacency: nnz={adj.nnz} window_min={counts.min()} "
        f"window_mean={counts.mean():.2f} window_max={counts.max()}"
    )
    print(f"diameter={diameter} exact={'yes' if exact else 'no'}")
    return EXIT_OK


def cmd_pool_plan(args) -> int:
    from .config import load_run_config
    from .graph import adjacency_from_mesh, build_pool_plan, save_pool_plan
    from .mesh import read_mesh

    cfg = load_run_config(args.config)
    (mesh_path,) = _check_inputs(cfg, ["mesh"])
    out_path = cfg.require_file("pool_plan")
    model_cfg = cfg.require("model", "model")
    seed = _effective_seed(cfg, args)
    mesh = read_mesh(mesh_path)
    plan = build_pool_plan(
        adjacency_from_mesh(mesh),
        model_cfg.num_poolings,
        trials=cfg.pooling_trials,
        seed_base=seed,
        mesh_digest=mesh.digest(),
    )
    save_pool_plan(plan, out_path)
    counts = " -> ".join(str(c) for c in plan.node_counts)
    print(f"pool plan: {counts} (trials={cfg.pooling_trials}, seeds={plan.seeds})")
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from .config import load_run_config
    from .fem import generate_dataset, write_dataset
    from .mesh import read_mesh
    from .util import stream_seed

    cfg = load_run_config(args.config)
    (mesh_path,) = _check_inputs(cfg, ["mesh"])
    out_path = cfg.require_file("dataset")
    data = cfg.require("data", "data")
    seed = _effective_seed(cfg, args)
    mesh = read_mesh(mesh_path)
    bvp = _build_bvp(mesh, cfg)
    dataset = generate_dataset(
        bvp,
        num_samples=data.num_samples,
        force_range=data.force_range_n,
        samples_per_node=data.samples_per_node,
        seed=stream_seed(seed, "data"),
    )
    write_dataset(dataset, out_path)
    print(
        f"generated {dataset.n_samples} samples over {len(bvp.load_region)} load nodes "
        f"({dataset.redraw_count} redraws)"
    )
    print(f"wrote {out_path}")
    return EXIT_OK


def _restore_trainer(trainer, cfg_train, dtype):
    import numpy as np

    from .config import ConfigError
    from .training import AdamState

    if trainer is None:
        raise ConfigError("model file has no optimizer state; cannot --resume")
    for key in ("epochs", "batch_size", "lr_start", "lr_end"):
        if trainer.get(key) != getattr(cfg_train, key):
            raise ConfigError(
                f"cannot resume: saved schedule has {key}={trainer.get(key)}, "
                f"config says {getattr(cfg_train, key)}"
            )
    state = AdamState(
        m=np.asarray(trainer["m"], dtype=dtype),
        v=np.asarray(trainer["v"], dtype=dtype),
        t=int(trainer["t"]),
        beta1=float(trainer["beta1"]),
        beta2=float(trainer["beta2"]),
        eps=float(trainer["eps"]),
    )
    return state, int(trainer["epochs_done"])


def _trainer_meta(state, train_cfg, epochs_done: int) -> dict:
    return {
        "m": state.m,
        "v": state.v,
        "t": state.t,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "epochs_done": epochs_done,
        "epochs": train_cfg.epochs,
        "batch_size": train_cfg.batch_size,
        "lr_start": train_cfg.lr_start,
        "lr_end": train_cfg.lr_end,
    }


def cmd_train(args) -> int:
    from .config import ConfigError, load_run_config
    from .graph import adjacency_from_mesh
    from .mesh import read_mesh
    from .network import build_model, count_parameters, load_model, save_model
    from .training import AdamState, train, write_train_report
    from .util import stream_seed

    cfg = load_run_config(args.config)
    mesh_path, plan_path, dataset_path = _check_inputs(cfg, ["mesh", "pool_plan", "dataset"])
    model_path = cfg.require_file("model")
    report_path = cfg.require_file("train_report")
    model_cfg = cfg.require("model", "model")
    train_cfg = cfg.require("train", "train")
    seed = _effective_seed(cfg, args)
    dtype = _model_dtype(cfg)

    mesh = read_mesh(mesh_path)
    adjacency = adjacency_from_mesh(mesh)
    plan = _load_plan_checked(plan_path, mesh, adjacency)
    dataset = _split_for_eval(cfg, _load_dataset_checked(dataset_path, mesh), seed)

    start_epoch = 0
    state = None
    if args.resume:
        if not os.path.exists(model_path):
            raise ConfigError(f"--resume: model file {model_path} does not exist")
        model, trainer = load_model(model_path, plan, dtype=dtype)
        if model.config != model_cfg:
            raise ConfigError("cannot resume: [model] section differs from the saved model")
        state, start_epoch = _restore_trainer(trainer, train_cfg, dtype)
        if start_epoch >= train_cfg.epochs:
            raise ConfigError(
                f"nothing to resume: saved model already ran {start_epoch} "
                f"of {train_cfg.epochs} epochs"
            )
        logger.info("resuming at epoch %d of %d", start_epoch + 1, train_cfg.epochs)
    else:
        model = build_model(
            model_cfg,
            adjacency,
            seed=stream_seed(seed, "init"),
            pool_plan=plan,
            mesh_digest=mesh.digest(),
            dtype=dtype,
        )
    logger.info("model has %d parameters", count_parameters(model))

    if state is None:
        state = AdamState.zeros(model.theta.size, dtype=dtype)

    def checkpoint(epoch, loss, lr):
        save_model(model, model_path, trainer=_trainer_meta(state, train_cfg, epoch + 1))
        logger.debug("epoch %d: loss %.6e lr %.3e (checkpoint saved)", epoch + 1, loss, lr)

    run_cfg = dataclasses.replace(train_cfg, seed=seed)
    report, state = train(
        model, dataset, run_cfg, state=state, start_epoch=start_epoch, callback=checkpoint
    )
    write_train_report(report, report_path)
    print(
        f"trained {train_cfg.epochs - start_epoch} epochs "
        f"({report.total_steps} total steps scheduled); final loss {report.final_loss:.6e}"
    )
    print(f"wrote {model_path} and {report_path}")
    return EXIT_OK


def _oracle_predictions(bvp, forces):
    import numpy as np

    from .fem import newton_solve

    preds = np.zeros_like(forces)
    for i in range(forces.shape[0]):
        preds[i] = newton_solve(bvp, forces[i]).u
    return preds


def _load_model_checked(cfg, mesh, adjacency):
    from .config import ConfigError
    from .network import load_model

    plan = _load_plan_checked(cfg.require_file("pool_plan"), mesh, adjacency)
    model, trainer = load_model(cfg.require_file("model"), plan, dtype=_model_dtype(cfg))
    if model.mesh_digest is not None and model.mesh_digest != mesh.digest():
        raise ConfigError("model was trained on a different mesh")
    return model, trainer


def cmd_eval(args) -> int:
    import numpy as np

    from .config import load_run_config
    from .graph import adjacency_from_mesh
    from .mesh import read_mesh
    from .metrics import evaluate, format_eval_report, predict_test_set, residual_check, write_eval_report

    cfg = load_run_config(args.config)
    mesh_path, _, dataset_path, _ = _check_inputs(cfg, ["mesh", "pool_plan", "dataset", "model"])
    seed = _effective_seed(cfg, args)
    mesh = read_mesh(mesh_path)
    adjacency = adjacency_from_mesh(mesh)
    dataset = _split_for_eval(cfg, _load_dataset_checked(dataset_path, mesh), seed)
    if dataset.test_count == 0:
        raise ValueError("dataset has no test split; not enough samples")
    model, _ = _load_model_checked(cfg, mesh, adjacency)

    if args.oracle:
        bvp = _build_bvp(mesh, cfg)
        preds = _oracle_predictions(bvp, dataset.test_forces)
    else:
        preds = predict_test_set(model, dataset)
    report = evaluate(preds, dataset.test_disps)

    if cfg.eval.residuals:
        bvp = _build_bvp(mesh, cfg)
        norms, mismatches = [], []
        for i in range(dataset.test_count):
            check = residual_check(bvp, preds[i], dataset.test_forces[i])
            norms.append(check.free_residual_norm)
            if check.reaction_mismatch is not None:
                mismatches.append(check.reaction_mismatch)
            logger.info(
                "sample %d: free residual %.3e, reaction mismatch %s",
                i,
                check.free_residual_norm,
                "n/a" if check.reaction_mismatch is None else f"{check.reaction_mismatch:.3%}",
            )
        report.residual_stats = np.array(norms)
        if mismatches:
            print(
                f"reaction mismatch over {len(mismatches)} samples: "
                f"mean {np.mean(mismatches):.3%} max {np.max(mismatches):.3%}"
            )

    text = format_eval_report(report, cfg.eval.characteristic_length_m)
    sys.stdout.write(text)
    if "eval_report" in cfg.files:
        write_eval_report(report, cfg.files["eval_report"], cfg.eval.characteristic_length_m)
        print(f"wrote {cfg.files['eval_report']}")
    return EXIT_OK


def cmd_export_field(args) -> int:
    from .config import load_run_config
    from .graph import adjacency_from_mesh
    from .mesh import read_mesh
    from .metrics import l2_error_field, predict_test_set

    cfg = load_run_config(args.config)
    mesh_path, _, dataset_path, _ = _check_inputs(cfg, ["mesh", "pool_plan", "dataset", "model"])
    out_path = cfg.require_file("field")
    seed = _effective_seed(cfg, args)
    mesh = read_mesh(mesh_path)
    adjacency = adjacency_from_mesh(mesh)
    dataset = _split_for_eval(cfg, _load_dataset_checked(dataset_path, mesh), seed)
    if dataset.test_count == 0:
        raise ValueError("dataset has no test split; not enough samples")
    if not 0 <= args.sample < dataset.test_count:
        raise ValueError(
            f"--sample {args.sample} out of range (test split has {dataset.test_count} samples)"
        )
    model, _ = _load_model_checked(cfg, mesh, adjacency)

    if args.oracle:
        bvp = _build_bvp(mesh, cfg)
        pred = _oracle_predictions(bvp, dataset.test_forces[args.sample : args.sample + 1])[0]
    else:
        pred = predict_test_set(model, dataset)[args.sample]
    truth = dataset.test_disps[args.sample]
    err = l2_error_field(pred, truth)

    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("node,x,y,z,pred_ux,pred_uy,truth_ux,truth_uy,l2_error\n")
        for i in range(mesh.n_nodes):
            x, y = mesh.coords[i]
            fh.write(
                f"{i},{x:.17e},{y:.17e},{0.0:.17e},"
                f"{pred[i, 0]:.17e},{pred[i, 1]:.17e},"
                f"{truth[i, 0]:.17e},{truth[i, 1]:.17e},{err[i]:.17e}\n"
            )
    print(f"wrote {out_path} ({mesh.n_nodes} rows)")
    return EXIT_OK


_COMMANDS = {
    "mesh-info": cmd_mesh_info,
    "pool-plan": cmd_pool_plan,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-field": cmd_export_field,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_OK if not err.code else EXIT_USAGE
    if args.threads is not None:
        if args.threads < 1:
            print("--threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    from .config import ConfigError
    from .fem import ElementInversionError, GenerationError, SolverError
    from .mesh import MeshFormatError
    from .training import TrainingError

    try:
        return _COMMANDS[args.command](args)
    except (SolverError, GenerationError, TrainingError, ElementInversionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, MeshFormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


def entrypoint() -> None:
    sys.exit(main())
