"""Command-line driver.

Exit codes: 0 success, 2 configuration/input error, 3 infeasible problem,
4 iterative refinement did not converge.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .assoc import GAConfig
from .decmap import load_map, reduce_map, save_map, scene_fingerprint
from .errors import ConfigError, InfeasibleError, VlcError
from .experiments import (
    AssocExperimentConfig,
    MapExperimentConfig,
    SweepConfig,
    run_assoc_experiment,
    run_map_experiment,
    run_sweep_experiment,
    user_grid,
)
from .sceneio import SceneSpec, load_scene, reference_scene
from .signaling import build_layer_set

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NO_CONVERGENCE = 4


def _load_spec(scene_path: str | None, layers: int | None) -> SceneSpec:
    if scene_path is None:
        spec = SceneSpec(scene=reference_scene(), layers_per_tx=2, snr_db=15.0)
    else:
        spec = load_scene(scene_path)
    if layers is not None:
        spec.layers_per_tx = layers
    return spec


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _run(fn):
    try:
        fn()
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except InfeasibleError as exc:
        _fail(EXIT_INFEASIBLE, str(exc))
    except VlcError as exc:
        _fail(EXIT_CONFIG, str(exc))


@click.group()
def main() -> None:
    """Decoding maps and transmitter-user association for multi-color VLC."""


@main.group("map")
def map_group() -> None:
    """Build, reduce and inspect decoding maps."""


@map_group.command("build")
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None,
              help="Scene YAML (defaults to the built-in benchmark scene).")
@click.option("--out", "outdir", type=click.Path(), required=True)
@click.option("--filter", "filter_index", type=int, default=0, show_default=True)
@click.option("--tau", type=int, default=1, show_default=True,
              help="Maximum decoding-group size.")
@click.option("--layers", type=int, default=None, help="Layers per transmitter.")
@click.option("--symmetry/--no-symmetry", default=True, show_default=True)
@click.option("--reduce/--no-reduce", "do_reduce", default=True, show_default=True)
@click.option("--tau-diff", type=float, default=1e-5, show_default=True)
@click.option("--tau-loss", type=float, default=0.1, show_default=True)
def map_build(scene_path, outdir, filter_index, tau, layers, symmetry, do_reduce,
              tau_diff, tau_loss) -> None:
    """Solve the decoding order at every plane sample and store the map."""

    def go() -> None:
        spec = _load_spec(scene_path, layers)
        cfg = MapExperimentConfig(
            filter_index=filter_index,
            tau=tau,
            layers_per_tx=spec.layers_per_tx,
            use_symmetry=symmetry,
            reduce=do_reduce,
            tau_diff=tau_diff,
            tau_loss=tau_loss,
        )
        summary = run_map_experiment(spec.scene, cfg, outdir)
        click.echo(json.dumps(summary, indent=2, sort_keys=True))

    _run(go)


@map_group.command("reduce")
@click.option("--map", "map_path", type=click.Path(exists=True), required=True)
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None)
@click.option("--layers", type=int, default=None)
@click.option("--tau-diff", type=float, default=1e-5, show_default=True)
@click.option("--tau-loss", type=float, default=0.1, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Output map file (defaults to rewriting in place).")
def map_reduce(map_path, scene_path, layers, tau_diff, tau_loss, out_path) -> None:
    """Cluster an existing map's cells and store the labels."""

    def go() -> None:
        spec = _load_spec(scene_path, layers)
        dmap = load_map(map_path)
        if dmap.scene_hash != scene_fingerprint(spec.scene):
            raise ConfigError("map was built from a different scene")
        table = build_layer_set(spec.scene, spec.layers_per_tx)
        clusters = reduce_map(dmap, spec.scene, table, tau_diff, tau_loss)
        save_map(dmap, out_path or map_path)
        click.echo(json.dumps({
            "cluster_count": len(clusters),
            "n_active": dmap.n_active,
            "compression_ratio": dmap.compression_ratio,
        }, indent=2, sort_keys=True))

    _run(go)


@map_group.command("inspect")
@click.option("--map", "map_path", type=click.Path(exists=True), required=True)
@click.option("--at", nargs=2, type=float, default=None,
              help="Print the cell at plane coordinates (x, y).")
def map_inspect(map_path, at) -> None:
    """Print a map summary, or one cell's decoding order."""

    def go() -> None:
        dmap = load_map(map_path)
        if at:
            try:
                cell = dmap.cell_at(at[0], at[1])
            except KeyError as exc:
                raise ConfigError(str(exc)) from exc
            info = {
                "position": list(cell.position),
                "outage": cell.order.outage,
                "provenance": cell.provenance,
                "cluster": cell.cluster,
            }
            if not cell.order.outage:
                info["groups"] = [[k + 1 for k in g] for g in cell.order.groups]
                info["rates"] = [
                    float(cell.order.rates[k]) for g in cell.order.groups for k in g
                ]
            click.echo(json.dumps(info, indent=2))
            return
        click.echo(json.dumps({
            "scene_hash": dmap.scene_hash,
            "filter_index": dmap.filter_index,
            "tau": dmap.tau,
            "shape": list(dmap.shape),
            "n_cells": len(dmap.cells),
            "n_active": dmap.n_active,
            "n_derived": sum(c.provenance == "derived" for c in dmap.cells),
            "cluster_count": dmap.cluster_count,
            "compression_ratio": dmap.compression_ratio,
        }, indent=2, sort_keys=True))

    _run(go)


def _read_users(path: str) -> list[tuple[float, float, float]]:
    out = []
    with open(path) as fh:
        for ln, line in enumerate(fh):
            line = line.strip()
            if not line or (ln == 0 and line.lower().startswith("x")):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ConfigError(f"{path}:{ln + 1}: expected x,y,z")
            try:
                out.append(tuple(float(p) for p in parts))
            except ValueError as exc:
                raise ConfigError(f"{path}:{ln + 1}: {exc}") from exc
    if not out:
        raise ConfigError(f"no user positions in {path}")
    return out


@main.group("assoc")
def assoc_group() -> None:
    """Transmitter-user association."""


@assoc_group.command("solve")
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None)
@click.option("--users", "users_path", type=click.Path(exists=True), default=None,
              help="CSV of user positions x,y,z (header optional).")
@click.option("--anchor", nargs=2, type=float, default=None,
              help="Place the default 4x4 user grid at this plane anchor.")
@click.option("--map", "map_path", type=click.Path(exists=True), default=None,
              help="Serve decoding orders from this prebuilt map.")
@click.option("--out", "outdir", type=click.Path(), default=None)
@click.option("--filter", "filter_index", type=int, default=0, show_default=True)
@click.option("--tau", type=int, default=1, show_default=True)
@click.option("--layers", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--population", type=int, default=64, show_default=True)
@click.option("--generations", type=int, default=200, show_default=True)
@click.option("--refine/--no-refine", default=True, show_default=True)
def assoc_solve(scene_path, users_path, anchor, map_path, outdir, filter_index,
                tau, layers, seed, population, generations, refine) -> None:
    """Assign each user a transmitter and report the achieved rates."""

    def go() -> None:
        spec = _load_spec(scene_path, layers)
        if users_path is not None:
            positions = _read_users(users_path)
        elif anchor is not None:
            positions = user_grid((anchor[0], anchor[1], spec.scene.plane.height))
        else:
            raise ConfigError("need --users or --anchor")
        dmap = load_map(map_path) if map_path else None
        if dmap is not None and dmap.scene_hash != scene_fingerprint(spec.scene):
            raise ConfigError("map was built from a different scene")
        cfg = AssocExperimentConfig(
            filter_index=filter_index,
            tau=tau,
            layers_per_tx=spec.layers_per_tx,
            ga=GAConfig(population=population, generations=generations, seed=seed),
            refine=refine,
        )
        result = run_assoc_experiment(
            spec.scene, positions, cfg, outdir=outdir, dmap=dmap
        )
        click.echo(json.dumps(result, indent=2, sort_keys=True))
        if refine and not result.get("converged", True):
            sys.exit(EXIT_NO_CONVERGENCE)

    _run(go)


@main.group("sweep")
def sweep_group() -> None:
    """Anchor sweeps of the user grid."""


@sweep_group.command("run")
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None)
@click.option("--out", "outdir", type=click.Path(), required=True)
@click.option("--plane", type=click.Choice(["xy", "yz"]), default="xy",
              show_default=True)
@click.option("--a-range", nargs=2, type=float, default=(-1.6, 1.6), show_default=True)
@click.option("--b-range", nargs=2, type=float, default=(-1.6, 1.6), show_default=True)
@click.option("--step", type=float, default=0.1, show_default=True)
@click.option("--fixed", type=float, default=None,
              help="z of the xy sweep plane / x of the yz plane "
                   "(default: receiver plane height / array center).")
@click.option("--map", "map_path", type=click.Path(exists=True), default=None)
@click.option("--filter", "filter_index", type=int, default=0, show_default=True)
@click.option("--tau", type=int, default=1, show_default=True)
@click.option("--layers", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--population", type=int, default=64, show_default=True)
@click.option("--generations", type=int, default=200, show_default=True)
def sweep_run(scene_path, outdir, plane, a_range, b_range, step, fixed, map_path,
              filter_index, tau, layers, seed, population, generations) -> None:
    """Sweep the user-grid anchor and record the achieved rates per anchor."""

    def go() -> None:
        spec = _load_spec(scene_path, layers)
        if fixed is None:
            fixed_val = spec.scene.plane.height if plane == "xy" else 0.0
        else:
            fixed_val = fixed
        dmap = load_map(map_path) if map_path else None
        if dmap is not None and dmap.scene_hash != scene_fingerprint(spec.scene):
            raise ConfigError("map was built from a different scene")
        cfg = SweepConfig(
            plane=plane,
            a_range=tuple(a_range),
            b_range=tuple(b_range),
            step=step,
            fixed=fixed_val,
            assoc=AssocExperimentConfig(
                filter_index=filter_index,
                tau=tau,
                layers_per_tx=spec.layers_per_tx,
                ga=GAConfig(population=population, generations=generations, seed=seed),
            ),
        )
        rows = run_sweep_experiment(spec.scene, cfg, outdir, dmap=dmap)
        sums = [r["sum_rate"] for r in rows]
        click.echo(json.dumps({
            "anchors": len(rows),
            "best_sum_rate": max(sums) if sums else 0.0,
            "worst_sum_rate": min(sums) if sums else 0.0,
            "out": str(Path(outdir) / "sweep.csv"),
        }, indent=2, sort_keys=True))

    _run(go)


@main.command("validate")
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None)
@click.option("--layers", type=int, default=None)
def validate(scene_path, layers) -> None:
    """Check that a scene file parses and its signaling calibrates."""

    def go() -> None:
        spec = _load_spec(scene_path, layers)
        table = build_layer_set(spec.scene, spec.layers_per_tx)
        click.echo(json.dumps({
            "scene_hash": scene_fingerprint(spec.scene),
            "n_tx": spec.scene.n_tx,
            "n_layers": table.n_layers,
            "snr_db": spec.snr_db,
            "sigma": spec.scene.sigma,
            "plane_samples": [
                int(spec.scene.plane.grid()[0].size),
                int(spec.scene.plane.grid()[1].size),
            ],
            "filter_matrix": np.round(spec.scene.filter_matrix, 3).tolist(),
        }, indent=2, sort_keys=True))

    _run(go)


if __name__ == "__main__":
    main()
