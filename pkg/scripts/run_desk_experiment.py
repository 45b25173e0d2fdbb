#!/usr/bin/env python3
"""Stage and run the full surrogate pipeline in a work directory.

Writes a built-in benchmark mesh and a run config, then drives the CLI
end to end: pool-plan -> gen-data -> train -> eval -> export-field.

    python3 scripts/run_desk_experiment.py --workdir runs/quad
    python3 scripts/run_desk_experiment.py --workdir runs/tri --mesh beam \
        --epochs 80 --samples-per-node 100

The defaults reproduce the L-shape benchmark: 2000 single-nodal-load
samples in [-1, 1]^2 N, a 95/5 split, 3 pooling levels with a 1000-trial
search, 2 aggregation layers per level on squared-adjacency windows,
channels 8/16/32/64, batch 4, learning rate 1e-4 -> 1e-6.
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

CONFIG = """\
[files]
mesh = {workdir}/bench.mesh
pool_plan = {workdir}/bench.plan
dataset = {workdir}/bench.data
model = {workdir}/bench.model
train_report = {workdir}/train_report.txt
eval_report = {workdir}/eval_report.txt
field = {workdir}/field.csv

[material]
youngs_modulus_pa = 500.0
poissons_ratio = 0.4

[boundary]
fixed_edge = {fixed_edge}
load_edge = {load_edge}

[pooling]
trials = {trials}

[model]
num_poolings = 3
aggs_per_level = 2
window_power = 2
channels = 8 16 32 64

[data]
force_range_n = {force_lo} {force_hi}
samples_per_node = {samples_per_node}
train_fraction = 0.95

[train]
epochs = {epochs}
batch_size = 4
lr_start = 1e-4
lr_end = 1e-6

[eval]
characteristic_length_m = {length}
residuals = {residuals}

[run]
seed = {seed}
"""

MESHES = {
    # name: (constructor, fixed edge, load edge, characteristic length)
    "lshape": ("l_shape_quad_mesh", "y_max", "y_min", 2.0),
    "beam": ("beam_tri_mesh", "x_min", "x_max", 2.0),
}


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", required=True, help="directory for all artifacts")
    parser.add_argument("--mesh", choices=sorted(MESHES), default="lshape")
    parser.add_argument("--epochs", type=int, default=60)
    parser.add_argument("--samples-per-node", type=int, default=400)
    parser.add_argument("--force", type=float, default=1.0, help="load range is [-force, force]")
    parser.add_argument("--trials", type=int, default=1000, help="pooling search trials")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--residuals", action="store_true", help="run equilibrium diagnostics")
    parser.add_argument("--resume", action="store_true", help="continue an interrupted training run")
    return parser.parse_args()


def main():
    args = parse_args()
    from meshunet import cli, mesh as meshmod

    os.makedirs(args.workdir, exist_ok=True)
    builder, fixed_edge, load_edge, length = MESHES[args.mesh]
    meshmod.write_mesh(getattr(meshmod, builder)(), os.path.join(args.workdir, "bench.mesh"))

    config_path = os.path.join(args.workdir, "run.cfg")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(
            CONFIG.format(
                workdir=args.workdir,
                fixed_edge=fixed_edge,
                load_edge=load_edge,
                trials=args.trials,
                force_lo=-args.force,
                force_hi=args.force,
                samples_per_node=args.samples_per_node,
                epochs=args.epochs,
                length=length,
                residuals="yes" if args.residuals else "no",
                seed=args.seed,
            )
        )
    print(f"wrote {config_path}")

    stages = [
        ["pool-plan", "--config", config_path],
        ["gen-data", "--config", config_path],
        ["train", "--config", config_path] + (["--resume"] if args.resume else []),
        ["eval", "--config", config_path],
        ["export-field", "--config", config_path, "--sample", "0"],
    ]
    for argv in stages:
        print(f"\n== meshunet {' '.join(argv)}")
        t0 = time.time()
        code = cli.main(argv)
        print(f"== done in {time.time() - t0:.1f}s (exit {code})")
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
