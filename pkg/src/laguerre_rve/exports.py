"""File formats: diagram JSON, OBJ polygon soup, per-grain stats CSV, and the
run manifest.

JSON is the canonical interchange (human-diffable; seeds, weights, and cells
are explicit).  The OBJ export is per-cell polygon soup for viewers.  The
stats CSV is one row per grain.  Floats are serialized with ``repr`` so a
deterministic rerun writes bit-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .geometry import ConvexPolyhedron, Facet, Plane
from .tessellation import LaguerreDiagram

DIAGRAM_SCHEMA = "laguerre-rve.diagram/1"
MANIFEST_SCHEMA = "laguerre-rve.manifest/1"

STATS_COLUMNS = [
    "grain",
    "target",
    "volume",
    "pct_error",
    "centroid_x",
    "centroid_y",
    "centroid_z",
    "faces",
]

BENCH_COLUMNS = [
    "n",
    "dist",
    "repeats",
    "failures",
    "mean_time",
    "median_time",
    "std_time",
    "mean_iterations",
    "mean_backtracking",
]

BACKTRACK_COLUMNS = ["run", "iteration", "backtracking_steps"]


def _fmt(x) -> str:
    return repr(float(x))


def write_diagram_json(path, diagram: LaguerreDiagram, targets=None) -> None:
    """Write seeds, weights, targets, measures, and tagged cell geometry."""
    cells = []
    for i in range(diagram.n):
        poly = diagram.cell(i)
        facets = []
        for facet in poly.facets:
            neighbor, shift = facet.tag
            facets.append(
                {
                    "vertices": [int(v) for v in facet.vertices],
                    "neighbor": int(neighbor),
                    "shift": [int(c) for c in shift],
                }
            )
        cells.append(
            {
                "vertices": [[float(c) for c in v] for v in poly.vertices],
                "facets": facets,
            }
        )
    doc = {
        "schema": DIAGRAM_SCHEMA,
        "lattice": [diagram.lattice.L1, diagram.lattice.L2, diagram.lattice.L3],
        "seeds": diagram.seeds.positions.tolist(),
        "weights": diagram.seeds.weights.tolist(),
        "targets": None if targets is None else list(map(float, targets.values)),
        "volumes": diagram.volumes.tolist(),
        "centroids": [
            None if np.any(np.isnan(c)) else list(map(float, c))
            for c in diagram.centroids
        ],
        "cells": cells,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_diagram_json(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != DIAGRAM_SCHEMA:
        raise ValueError(f"not a diagram file: {path}")
    return doc


def cell_polyhedra(doc: dict) -> list[ConvexPolyhedron]:
    """Rebuild cell polyhedra from a loaded diagram document.

    Facet planes are refit from the vertex loops (orientation is arbitrary;
    the measure routines do not depend on it).
    """
    polys = []
    for cell in doc["cells"]:
        verts = np.asarray(cell["vertices"], dtype=float).reshape(-1, 3)
        if len(verts) == 0:
            polys.append(ConvexPolyhedron.empty())
            continue
        facets = []
        for f in cell["facets"]:
            loop = list(f["vertices"])
            pts = verts[loop]
            normal = np.zeros(3)
            for t in range(1, len(loop) - 1):
                normal += np.cross(pts[t] - pts[0], pts[t + 1] - pts[0])
            normal /= np.linalg.norm(normal)
            plane = Plane(normal, float(normal @ pts[0]))
            facets.append(Facet(loop, plane, (f["neighbor"], tuple(f["shift"]))))
        polys.append(ConvexPolyhedron(verts, facets))
    return polys


def write_obj(path, diagram: LaguerreDiagram) -> None:
    """Per-cell polygon soup with 1-based global vertex indices."""
    lines = []
    offset = 1
    for i in range(diagram.n):
        poly = diagram.cell(i)
        lines.append(f"o cell_{i}")
        for v in poly.vertices:
            lines.append(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
        for facet in poly.facets:
            lines.append("f " + " ".join(str(offset + k) for k in facet.vertices))
        offset += len(poly.vertices)
    Path(path).write_text("\n".join(lines) + "\n")


def write_stats_csv(path, diagram: LaguerreDiagram, targets) -> None:
    """One row per grain: volume vs target, percentage error, centroid,
    face count."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_COLUMNS)
        for i in range(diagram.n):
            v = diagram.volumes[i]
            m = targets.values[i]
            c = diagram.centroids[i]
            writer.writerow(
                [
                    i,
                    _fmt(m),
                    _fmt(v),
                    _fmt(100.0 * abs(v - m) / m),
                    _fmt(c[0]),
                    _fmt(c[1]),
                    _fmt(c[2]),
                    int(diagram.face_counts[i]),
                ]
            )


def solver_report_dict(report) -> dict:
    return {
        "initial_error": report.initial_error,
        "initial_pct_error": report.initial_pct_error,
        "epsilon": report.epsilon,
        "converged": report.converged,
        "total_time": report.total_time,
        "iterations": [
            {
                "error": r.error,
                "pct_error": r.pct_error,
                "backtracking_steps": r.backtracking_steps,
                "min_volume": r.min_volume,
                "time_diagram": r.time_diagram,
                "time_hessian": r.time_hessian,
                "time_solve": r.time_solve,
                "time_total": r.time_total,
            }
            for r in report.iterations
        ],
    }


def write_manifest(path, config: dict, timings: dict, reports, version: str) -> None:
    doc = {
        "schema": MANIFEST_SCHEMA,
        "version": version,
        "config": config,
        "timings": timings,
        "solver_reports": [solver_report_dict(r) for r in reports],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"not a manifest file: {path}")
    return doc
