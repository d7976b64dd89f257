"""`peel` command line: plan, check, compare, serve.

Exit codes follow the batch convention: 0 for a valid plan or clean
check, 2 for an invalid plan or found violations (with the full report
still written), 1 for usage and input errors.  All human-readable
output is mirrored as machine-readable files, and fixed seed + fixed
inputs give byte-identical output files across runs.
"""

import os
import sys

# PEEL_THREADS caps the linear-algebra worker pools; it must land in the
# environment before numpy loads its BLAS, hence before other imports.
if os.environ.get("PEEL_THREADS"):
    _n = os.environ["PEEL_THREADS"]
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _n)

import json
from pathlib import Path

import click
import numpy as np

from .errors import PeelError
from .layers import export_layers, floating_volume_check, layer_stations, load_obj, load_stl
from .planner import PlanConfig, compare_strategies, run_plan, serialize_plan
from .diffops import ScalarField
from .fieldopt import AnchorSet
from .singularity import full_scan_extrema
from .tetmesh import load_mesh

EXIT_OK, EXIT_ERROR, EXIT_INVALID = 0, 1, 2


def _read_config(path):
    text = Path(path).read_text()
    if path.endswith((".yaml", ".yml")):
        import yaml
        return yaml.safe_load(text)
    return json.loads(text)


def _load_anchors(mesh, specs):
    anchors = AnchorSet()
    for spec in specs:
        kw = {"weight": spec.get("weight"),
              "critical": bool(spec.get("critical", False))}
        if spec.get("tet") is not None:
            anchors.add_tet(int(spec["tet"]), spec["direction"], **kw)
        else:
            anchors.add_vertex(mesh, int(spec["vertex"]), spec["direction"],
                               **kw)
    return anchors


def _load_surface(path):
    if path.endswith(".stl"):
        return load_stl(path)
    return load_obj(path)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_scalar(path):
    if path.endswith(".npy"):
        return np.load(path)
    return np.loadtxt(path)


@click.group()
def main():
    """Curved-layer peeling planner for multi-axis rough machining."""


@main.command()
@click.option("--mesh", "mesh_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--format", "fmt", default="obj", show_default=True,
              type=click.Choice(["obj", "stl"]))
def plan(mesh_path, config_path, out_dir, fmt):
    """Run the full pipeline and write the plan directory."""
    try:
        mesh = load_mesh(mesh_path)
        raw = _read_config(config_path)
        anchors = raw.pop("anchors", None)
        config = PlanConfig.from_dict(raw)
        if anchors:
            anchors = _load_anchors(mesh, anchors)
    except (PeelError, OSError, ValueError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)

    result = run_plan(mesh, config, anchors=anchors)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", config.to_dict())
    _write_json(out / "plan.json", serialize_plan(result))
    if result.layer_set is not None:
        export_layers(result.layer_set, out / "layers", fmt=fmt)

    status = "VALID" if result.valid else "INVALID"
    click.echo(f"plan {status}: {len(result.layer_set) if result.layer_set else 0} "
               f"layers -> {out}")
    for note in result.notes:
        click.echo(f"  note: {note}")
    sys.exit(EXIT_OK if result.valid else EXIT_INVALID)


@main.command()
@click.option("--mesh", "mesh_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--scalar", "scalar_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--layers", "layer_count", default=8, show_default=True,
              help="Stations audited by the floating-volume check.")
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Write the audit report here (default: stdout).")
def check(mesh_path, scalar_path, layer_count, out_path):
    """Audit a scalar field: interior extrema + floating volumes."""
    try:
        mesh = load_mesh(mesh_path)
        g = _load_scalar(scalar_path)
        if len(g) != mesh.n_vertices:
            raise PeelError(f"scalar has {len(g)} values, mesh has "
                            f"{mesh.n_vertices} vertices")
        extrema = full_scan_extrema(mesh, g, interior_only=True)
        stations = layer_stations(g.min(), g.max(), layer_count=layer_count)
        floating = floating_volume_check(mesh, ScalarField(-g),
                                         [-c for c in stations])
    except (PeelError, OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)

    clean = not extrema and not floating
    report = {"clean": clean,
              "interior_extrema": [{"vertex": int(p.vertex), "kind": p.kind,
                                    "value": float(p.value)}
                                   for p in extrema],
              "floating": [{"station": -f.value, "n_tets": int(len(f.tets)),
                            "volume": f.volume} for f in floating],
              "stations": [float(c) for c in stations]}
    if out_path:
        _write_json(out_path, report)
        click.echo(f"report -> {out_path}")
    else:
        click.echo(json.dumps(report, indent=2, sort_keys=True))
    if not clean:
        click.echo(f"check FAILED: {len(extrema)} interior extrema, "
                   f"{len(floating)} floating violations", err=True)
    sys.exit(EXIT_OK if clean else EXIT_INVALID)


@main.command()
@click.option("--mesh", "mesh_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--part", "part_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--configs", "config_paths", required=True, multiple=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--samples", default=2000, show_default=True)
def compare(mesh_path, part_path, config_paths, out_dir, samples):
    """Run several configs and tabulate final cutting depths."""
    try:
        mesh = load_mesh(mesh_path)
        part = _load_surface(part_path)
        configs = [PlanConfig.from_dict(_read_config(p)) for p in config_paths]
        if len(configs) < 2:
            raise PeelError("compare needs at least two configs")
    except (PeelError, OSError, ValueError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)

    report = compare_strategies(mesh, part, configs, sample_count=samples)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "comparison.json", report.to_dict())
    with open(out / "table.txt", "w") as fh:
        fh.write(report.table(include_runtime=False) + "\n")
    click.echo(report.table())
    click.echo(f"-> {out}")
    sys.exit(EXIT_OK)


@main.command()
@click.option("--port", default=8571, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--ui-dir", default=None,
              type=click.Path(exists=True, file_okay=False),
              help="Serve a built UI bundle at /.")
def serve(port, host, ui_dir):
    """Run the session service (HTTP + WebSocket under /api/v1)."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(ui_dir=ui_dir), host=host, port=port,
                log_level="info")


if __name__ == "__main__":
    main()
