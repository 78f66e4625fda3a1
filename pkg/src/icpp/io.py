"""File formats: event CSVs, model JSON, report CSVs, config files.

All numeric output goes through ``repr`` of the Python float (shortest
round-trip form) and JSON objects are written with sorted keys, so a run
with the same configuration and seed produces byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .basis import CUBIC_BSPLINE, GAUSSIAN_RBF, BasisSystem, build_basis
from .em import EStepStats, FitResult
from .errors import ConfigError, IngestError
from .geometry import Region, build_quadrature
from .model import ModelParams, PointPattern, ScoreParams

SCHEMA_VERSION = 1
PACKAGE_VERSION = "0.1.0"


def fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- events CSV

def load_patterns_csv(path, region: Region) -> list[PointPattern]:
    """Read events grouped by replication; rows outside the region are rejected.

    Header is ``replication_id,t`` (1-D) or ``replication_id,x,y`` (2-D).
    A row with empty coordinates declares an empty replication. All bad
    rows are collected into one line-numbered error.
    """
    dim = region.dimension
    want = ["replication_id", "t"] if dim == 1 else ["replication_id", "x", "y"]
    groups: dict[str, list] = {}
    bad: list[tuple[int, str]] = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != want:
            raise IngestError(f"expected header {','.join(want)!r} in {path}", lines=[1])
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(want):
                bad.append((lineno, "wrong field count"))
                continue
            rep = row[0].strip()
            coords = [f.strip() for f in row[1:]]
            groups.setdefault(rep, [])
            if all(not c for c in coords):
                continue
            try:
                values = [float(c) for c in coords]
            except ValueError:
                bad.append((lineno, "unparsable coordinate"))
                continue
            point = values[0] if dim == 1 else values
            if not bool(region.contains([point] if dim == 1 else [point])[0]):
                bad.append((lineno, "coordinate outside region"))
                continue
            groups[rep].append(point)
    if bad:
        detail = "; ".join(f"line {ln}: {msg}" for ln, msg in bad[:20])
        raise IngestError(f"{len(bad)} bad row(s) in {path}: {detail}",
                          lines=[ln for ln, _ in bad])
    patterns = []
    for rep, pts in groups.items():
        arr = np.asarray(pts, dtype=float) if pts else np.zeros((0,) if dim == 1 else (0, 2))
        patterns.append(PointPattern(replication_id=rep, points=arr))
    return patterns


def write_patterns_csv(path, patterns, dim: int) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["replication_id", "t"] if dim == 1 else ["replication_id", "x", "y"])
        for pat in patterns:
            pts = np.asarray(pat.points, dtype=float).reshape(pat.count, -1)
            if pat.count == 0:
                writer.writerow([pat.replication_id] + [""] * dim)
            for row in pts:
                writer.writerow([pat.replication_id] + [fmt(v) for v in row])


def load_region(dim: int, spec: str) -> Region:
    """Region from a config value: "l,u" for intervals, a vertex CSV path for polygons."""
    if dim == 1:
        parts = [p.strip() for p in str(spec).split(",")]
        if len(parts) != 2:
            raise ConfigError("1-D region must be 'lower,upper'")
        return Region.interval(float(parts[0]), float(parts[1]))
    verts = []
    with open(spec, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "y"]:
            raise ConfigError(f"polygon file {spec} must have header 'x,y'")
        for row in reader:
            if not row or all(not f.strip() for f in row):
                continue
            verts.append((float(row[0]), float(row[1])))
    return Region.polygon(verts)


# ---------------------------------------------------------------- model JSON

def _region_payload(region: Region) -> dict:
    if region.dimension == 1:
        return {"dimension": 1, "lower": region.lower, "upper": region.upper}
    return {"dimension": 2, "vertices": np.asarray(region.vertices).tolist()}


def _region_from_payload(payload: dict) -> Region:
    if payload["dimension"] == 1:
        return Region.interval(payload["lower"], payload["upper"])
    return Region.polygon(payload["vertices"])


def _basis_payload(basis: BasisSystem, quad_resolution: int) -> dict:
    out = {"family": basis.family, "quad_resolution": quad_resolution}
    if basis.family == CUBIC_BSPLINE:
        breaks = np.unique(basis.knots).tolist()
        out["breakpoints"] = breaks
    else:
        out["centers"] = np.asarray(basis.centers).tolist()
        out["bandwidth"] = basis.bandwidth
    return out


def rebuild_basis(region: Region, payload: dict) -> BasisSystem:
    quad = build_quadrature(region, payload["quad_resolution"])
    if payload["family"] == CUBIC_BSPLINE:
        return build_basis(CUBIC_BSPLINE, region, quad, knots=np.asarray(payload["breakpoints"]))
    return build_basis(GAUSSIAN_RBF, region, quad,
                       centers=np.asarray(payload["centers"]), bandwidth=payload["bandwidth"])


def save_model_json(path, result: FitResult, *, zeta: float, quad_resolution: int,
                    config_hash: str, seed: int) -> None:
    model = result.params
    payload = {
        "schema_version": SCHEMA_VERSION,
        "package_version": PACKAGE_VERSION,
        "config_hash": config_hash,
        "seed": int(seed),
        "zeta": float(zeta),
        "region": _region_payload(model.basis.region),
        "basis": _basis_payload(model.basis, quad_resolution),
        "coefficients": model.coeffs.tolist(),
        "alphas": model.scores.alphas.tolist(),
        "beta": model.scores.beta,
        "objective_trace": np.asarray(result.objective_trace).tolist(),
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "gamma_assignments": {
            rep: g.tolist() for rep, g in zip(result.e_stats.rep_ids, result.e_stats.gammas)
        },
        "posterior_scores": {
            rep: row.tolist() for rep, row in zip(result.e_stats.rep_ids, result.e_stats.euk)
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_model_json(path) -> tuple[ModelParams, dict]:
    payload = json.loads(Path(path).read_text())
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported model schema in {path}")
    region = _region_from_payload(payload["region"])
    basis = rebuild_basis(region, payload["basis"])
    scores = ScoreParams(alphas=np.asarray(payload["alphas"]), beta=payload["beta"])
    model = ModelParams(coeffs=np.asarray(payload["coefficients"]), scores=scores, basis=basis)
    return model, payload


# ---------------------------------------------------------------- report CSVs

def write_components_csv(path, model: ModelParams, grid) -> None:
    from .basis import evaluate_basis
    values = evaluate_basis(model.basis, grid) @ model.coeffs.T
    grid = np.asarray(grid, dtype=float)
    coords = grid.reshape(grid.shape[0], -1)
    coord_names = ["t"] if coords.shape[1] == 1 else ["x", "y"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(coord_names + [f"phi_{k + 1}" for k in range(model.p)])
        for row_c, row_v in zip(coords, values):
            writer.writerow([fmt(v) for v in row_c] + [fmt(v) for v in row_v])


def write_scores_csv(path, e_stats: EStepStats) -> None:
    p = e_stats.p
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["replication_id"] + [f"score_{k + 1}" for k in range(p)])
        for rep, row in zip(e_stats.rep_ids, e_stats.euk):
            writer.writerow([rep] + [fmt(v) for v in row])


def write_assignments_csv(path, patterns, e_stats: EStepStats, dim: int) -> None:
    p = e_stats.p
    by_id = {pat.replication_id: pat for pat in patterns}
    coord_names = ["t"] if dim == 1 else ["x", "y"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["replication_id"] + coord_names + ["component"]
                        + [f"gamma_{k + 1}" for k in range(p)])
        for rep, gam in zip(e_stats.rep_ids, e_stats.gammas):
            pts = np.asarray(by_id[rep].points, dtype=float).reshape(-1, dim)
            for point, g in zip(pts, gam):
                writer.writerow([rep] + [fmt(v) for v in point]
                                + [int(np.argmax(g)) + 1] + [fmt(v) for v in g])


def write_intensities_csv(path, grid, rep_ids, values) -> None:
    grid = np.asarray(grid, dtype=float)
    coords = grid.reshape(grid.shape[0], -1)
    coord_names = ["t"] if coords.shape[1] == 1 else ["x", "y"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(coord_names + [f"lambda_{rep}" for rep in rep_ids])
        for i in range(coords.shape[0]):
            writer.writerow([fmt(v) for v in coords[i]] + [fmt(col[i]) for col in values])


def write_cv_csv(path, report) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["p", "zeta", "cv_score", "cv_se", "n_invalid_folds"])
        for cell in report.table:
            writer.writerow([cell.p, fmt(cell.zeta), fmt(cell.score), fmt(cell.std_err),
                             cell.n_invalid_folds])


def coordinate_names(p: int, q: int) -> list[str]:
    names = [f"c_{k + 1}_{j + 1}" for k in range(p) for j in range(q)]
    names += [f"alpha_{k + 1}" for k in range(p)]
    names.append("beta")
    return names


def write_intervals_csv(path, model: ModelParams, intervals: np.ndarray) -> None:
    names = coordinate_names(model.p, model.q)
    theta = np.concatenate([model.coeffs.ravel(), model.scores.alphas, [model.scores.beta]])
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["coordinate", "estimate", "lower", "upper", "covers_zero"])
        for name, est, (lo, hi) in zip(names, theta, intervals):
            writer.writerow([name, fmt(est), fmt(lo), fmt(hi), int(lo <= 0.0 <= hi)])


def write_table1_csv(path, rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["model", "n", "knots", "policy", "component", "bias", "std",
                         "rmse", "rmse_se", "zeta", "reps_used", "n_failed", "valid"])
        for r in rows:
            writer.writerow([r.model, r.n, r.knots, r.policy, r.component + 1, fmt(r.bias),
                             fmt(r.std), fmt(r.rmse), fmt(r.rmse_se), fmt(r.zeta),
                             r.reps_used, r.n_failed, int(r.valid)])


def write_table2_csv(path, rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["model", "n", "policy", "intensity_rmse", "intensity_se",
                         "density_rmse", "density_se", "reps_used", "n_failed", "valid"])
        for r in rows:
            writer.writerow([r.model, r.n, r.policy, fmt(r.intensity_rmse), fmt(r.intensity_se),
                             fmt(r.density_rmse), fmt(r.density_se), r.reps_used, r.n_failed,
                             int(r.valid)])


# ---------------------------------------------------------------- config

def read_config_file(path) -> dict:
    """Key = value lines; '#' starts a comment; values stay strings."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_hash(settings: dict) -> str:
    canon = json.dumps(settings, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def write_sidecar(path, *, cfg_hash: str, seed: int) -> None:
    meta = {"config_hash": cfg_hash, "seed": int(seed), "version": PACKAGE_VERSION}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
