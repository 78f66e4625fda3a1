"""Command-line interface: fit, cv, simulate, variance.

Settings come from an optional key=value config file overridden by flags
(flags win). All randomness derives from one root seed through named
streams, so each subcommand is independently reproducible; outputs carry
metadata sidecars with the config hash and seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import asymptotics as asy
from . import io as icpp_io
from .basis import CUBIC_BSPLINE, GAUSSIAN_RBF, build_basis, evaluate_basis
from .em import FitConfig, fit
from .errors import ConfigError, IcppError
from .geometry import build_quadrature
from .model import posterior_intensity
from .seeds import derive_seed
from .selection import CvPlan, select_model
from .simulation import model1, model2, run_table1, run_table2, sample_pattern, sample_scores


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icpp",
                                     description="Independent-component intensity models "
                                                 "for replicated point processes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value settings file (flags win)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)

    p_fit = sub.add_parser("fit", help="fit a model to event data")
    common(p_fit)
    for flag, kw in [("--input", {}), ("--region", {}), ("--dim", {"type": int}),
                     ("--basis", {"choices": ["bspline", "rbf"]}), ("--knots", {"type": int}),
                     ("--centers", {}), ("--bandwidth", {"type": float}),
                     ("--p", {"type": int}), ("--zeta", {"type": float}),
                     ("--mc-draws", {"type": int}), ("--quad-resolution", {"type": int}),
                     ("--grid-size", {"type": int}), ("--intensity-reps", {})]:
        p_fit.add_argument(flag, **kw)

    p_cv = sub.add_parser("cv", help="cross-validated model selection")
    common(p_cv)
    for flag, kw in [("--input", {}), ("--region", {}), ("--dim", {"type": int}),
                     ("--basis", {"choices": ["bspline", "rbf"]}), ("--knots", {"type": int}),
                     ("--centers", {}), ("--bandwidth", {"type": float}),
                     ("--p-grid", {}), ("--zeta-grid", {}), ("--folds", {"type": int}),
                     ("--mc-draws", {"type": int}), ("--quad-resolution", {"type": int}),
                     ("--grid-size", {"type": int})]:
        p_cv.add_argument(flag, **kw)

    p_sim = sub.add_parser("simulate", help="run the simulation studies or generate data")
    common(p_sim)
    for flag, kw in [("--task", {"choices": ["table1", "table2", "generate"]}),
                     ("--gen-model", {"choices": ["model1", "model2"]}),
                     ("--n", {"type": int}), ("--reps", {"type": int}),
                     ("--knots", {"type": int}), ("--zeta-policy", {"choices": ["cv", "grid-optimal"]}),
                     ("--zeta-grid", {}), ("--folds", {"type": int})]:
        p_sim.add_argument(flag, **kw)

    p_var = sub.add_parser("variance", help="asymptotic variance of a fitted model")
    common(p_var)
    for flag, kw in [("--model", {}), ("--input", {}), ("--mc-draws", {"type": int}),
                     ("--draws", {"type": int}), ("--level", {"type": float}),
                     ("--fisher", {"choices": ["empirical", "generative"]})]:
        p_var.add_argument(flag, **kw)
    return parser


class Settings:
    """Flag values backed by an optional config file; flags win."""

    def __init__(self, args: argparse.Namespace):
        self.args = vars(args)
        self.file = icpp_io.read_config_file(args.config) if args.config else {}

    def get(self, name, kind=str, default=None, required=False):
        flag = self.args.get(name.replace("-", "_"))
        if flag is not None:
            return flag
        if name in self.file:
            raw = self.file[name]
            if kind is bool:
                return raw.lower() in ("1", "true", "yes")
            return kind(raw)
        if required and default is None:
            raise ConfigError(f"missing required setting '{name}'")
        return default

    def merged(self) -> dict:
        out = dict(self.file)
        out.update({k: v for k, v in self.args.items() if v is not None and k != "config"})
        return out


def _float_list(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if str(x).strip()]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if str(x).strip()]


def _out_dir(settings: Settings) -> Path:
    out = settings.get("out", str, required=True)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_inputs(settings: Settings):
    dim = settings.get("dim", int, 1)
    region_spec = settings.get("region", str, required=True)
    region = icpp_io.load_region(dim, region_spec)
    input_path = settings.get("input", str, required=True)
    if not Path(input_path).exists():
        raise ConfigError(f"input file {input_path} does not exist")
    patterns = icpp_io.load_patterns_csv(input_path, region)
    if not patterns:
        raise ConfigError("no replications found in input")
    return region, patterns


def _build_basis(settings: Settings, region):
    family = settings.get("basis", str, "bspline" if region.dimension == 1 else "rbf")
    default_res = 256 if region.dimension == 1 else 128
    resolution = settings.get("quad-resolution", int, default_res)
    quad = build_quadrature(region, resolution)
    if family == "bspline":
        knots = settings.get("knots", int, 10)
        return build_basis(CUBIC_BSPLINE, region, quad, knots=knots), resolution
    centers_spec = settings.get("centers", str, "7x7")
    rows, cols = (int(v) for v in str(centers_spec).lower().split("x"))
    bandwidth = settings.get("bandwidth", float, None)
    return build_basis(GAUSSIAN_RBF, region, quad, centers=(rows, cols),
                       bandwidth=bandwidth), resolution


def _fit_config_from(settings: Settings, zeta: float, seed: int) -> FitConfig:
    return FitConfig(
        zeta=zeta,
        max_outer_iters=settings.get("max-outer-iters", int, 40),
        gibbs_sweeps=settings.get("gibbs-sweeps", int, 24),
        inner_tol=settings.get("inner-tol", float, 1e-6),
        outer_tol=settings.get("outer-tol", float, 1e-4),
        monitor_draws=settings.get("monitor-draws", int, 256),
        seed=seed,
    )


def _evaluation_grid(settings: Settings, region):
    size = settings.get("grid-size", int, 512)
    if region.dimension == 1:
        return np.linspace(region.lower, region.upper, size)
    side = int(np.ceil(np.sqrt(size)))
    x0, x1, y0, y1 = region.bbox()
    gx, gy = np.meshgrid(np.linspace(x0, x1, side), np.linspace(y0, y1, side), indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return pts[region.contains(pts)]


def _write_fit_artifacts(out: Path, settings: Settings, result, patterns, region,
                         resolution: int, zeta: float, root_seed: int):
    cfg_hash = icpp_io.config_hash(settings.merged())
    grid = _evaluation_grid(settings, region)
    model = result.params

    def emit(name, writer):
        path = out / name
        writer(path)
        icpp_io.write_sidecar(path, cfg_hash=cfg_hash, seed=root_seed)

    emit("model.json", lambda p: icpp_io.save_model_json(
        p, result, zeta=zeta, quad_resolution=resolution, config_hash=cfg_hash, seed=root_seed))
    emit("components.csv", lambda p: icpp_io.write_components_csv(p, model, grid))
    emit("scores.csv", lambda p: icpp_io.write_scores_csv(p, result.e_stats))
    emit("assignments.csv", lambda p: icpp_io.write_assignments_csv(
        p, patterns, result.e_stats, region.dimension))

    reps_spec = settings.get("intensity-reps", str, None)
    if reps_spec:
        wanted = [r.strip() for r in str(reps_spec).split(",") if r.strip()]
        by_id = {pat.replication_id: pat for pat in patterns}
        missing = [r for r in wanted if r not in by_id]
        if missing:
            raise ConfigError(f"unknown replication ids for intensities: {missing}")
        values = [posterior_intensity(model, by_id[r], result.e_stats, grid)[1] for r in wanted]
        emit("intensities.csv", lambda p: icpp_io.write_intensities_csv(p, grid, wanted, values))
    return cfg_hash


def cmd_fit(settings: Settings) -> int:
    region, patterns = _load_inputs(settings)
    basis, resolution = _build_basis(settings, region)
    out = _out_dir(settings)
    root_seed = settings.get("seed", int, 0)
    p = settings.get("p", int, required=True)
    zeta = settings.get("zeta", float, 1e-4)
    cfg = _fit_config_from(settings, zeta, derive_seed(root_seed, "fit"))
    result = fit(patterns, basis, p, cfg)
    _write_fit_artifacts(out, settings, result, patterns, region, resolution, zeta, root_seed)
    if not result.converged:
        print("warning: EM did not converge; trace written to model.json", file=sys.stderr)
        return 3
    return 0


def cmd_cv(settings: Settings) -> int:
    region, patterns = _load_inputs(settings)
    basis, resolution = _build_basis(settings, region)
    out = _out_dir(settings)
    root_seed = settings.get("seed", int, 0)
    folds = settings.get("folds", int, 5)
    if folds > len(patterns):
        raise ConfigError(f"folds ({folds}) exceeds number of replications ({len(patterns)})")
    p_grid = _int_list(settings.get("p-grid", str, "2"))
    zeta_grid = _float_list(settings.get("zeta-grid", str,
                                         "1e-8,1e-7,1e-6,1e-5,1e-4,1e-3,1e-2,1e-1"))
    template = _fit_config_from(settings, 0.0, 0)
    plan = CvPlan(zeta_grid=tuple(zeta_grid), p_grid=tuple(p_grid), folds=folds,
                  seed=derive_seed(root_seed, "cv"), fit_config=template,
                  eval_draws=settings.get("mc-draws", int, 4000))
    result, report = select_model(patterns, basis, plan)
    cfg_hash = icpp_io.config_hash(settings.merged())
    cv_path = out / "cv.csv"
    icpp_io.write_cv_csv(cv_path, report)
    icpp_io.write_sidecar(cv_path, cfg_hash=cfg_hash, seed=root_seed)
    _write_fit_artifacts(out, settings, result, patterns, region, resolution,
                         report.selected[1], root_seed)
    return 0


def cmd_simulate(settings: Settings) -> int:
    out = _out_dir(settings)
    root_seed = settings.get("seed", int, 0)
    task = settings.get("task", str, required=True)
    gen = {"model1": model1, "model2": model2}[settings.get("gen-model", str, "model2")]()
    n = settings.get("n", int, 50)
    cfg_hash = icpp_io.config_hash(settings.merged())

    if task == "generate":
        scores = sample_scores(gen, n, seed=derive_seed(root_seed, "sim", "scores"))
        patterns = [sample_pattern(gen.region, seed=derive_seed(root_seed, "sim", "pattern", i),
                                   scores=scores[i], components=gen.component_pdf,
                                   replication_id=f"rep{i:04d}")
                    for i in range(n)]
        path = out / "events.csv"
        icpp_io.write_patterns_csv(path, patterns, gen.region.dimension)
        icpp_io.write_sidecar(path, cfg_hash=cfg_hash, seed=root_seed)
        return 0

    reps = settings.get("reps", int, 50)
    knots = settings.get("knots", int, 10)
    policy = settings.get("zeta-policy", str, "cv")
    kwargs = {}
    zg = settings.get("zeta-grid", str, None)
    if zg:
        kwargs["zeta_grid"] = tuple(_float_list(zg))
    folds = settings.get("folds", int, None)
    if folds:
        kwargs["folds"] = folds
    sim_seed = derive_seed(root_seed, "sim")
    if task == "table1":
        rows = run_table1(gen, n, knots, reps, policy, sim_seed, **kwargs)
        path = out / "table1.csv"
        icpp_io.write_table1_csv(path, rows)
    else:
        rows = run_table2(gen, n, reps, sim_seed, knots=knots, policy=policy, **kwargs)
        path = out / "table2.csv"
        icpp_io.write_table2_csv(path, rows)
    icpp_io.write_sidecar(path, cfg_hash=cfg_hash, seed=root_seed)
    return 0


def cmd_variance(settings: Settings) -> int:
    out = _out_dir(settings)
    root_seed = settings.get("seed", int, 0)
    model_path = settings.get("model", str, required=True)
    if not Path(model_path).exists():
        raise ConfigError(f"model file {model_path} does not exist")
    model, payload = icpp_io.load_model_json(model_path)
    region = model.basis.region
    input_path = settings.get("input", str, required=True)
    patterns = icpp_io.load_patterns_csv(input_path, region)
    n = len(patterns)

    mode = settings.get("fisher", str, "empirical")
    mc_draws = settings.get("mc-draws", int, 1000)
    fisher_seed = derive_seed(root_seed, "asym", "fisher")
    if mode == "empirical":
        fisher = asy.estimate_fisher(model, patterns, mc_draws=mc_draws, seed=fisher_seed)
    else:
        def sampler(rng):
            u = rng.gamma(shape=model.scores.alphas, scale=model.scores.beta)
            return sample_pattern(region, seed=int(rng.integers(2**32)), scores=u,
                                  components=lambda pts: evaluate_basis(model.basis, pts)
                                  @ model.coeffs.T)
        fisher = asy.estimate_fisher(model, sampler=sampler, mc_draws=mc_draws, seed=fisher_seed)

    kappa = float(np.sqrt(n) * payload.get("zeta", 0.0))
    cone = asy.tangent_cone(model)
    grad_p = asy.penalty_gradient(model)
    if cone.interior:
        result = asy.interior_result(model, fisher, kappa, grad_p)
    else:
        result = asy.simulate_delta(fisher, cone, kappa, grad_p,
                                    settings.get("draws", int, 2000),
                                    seed=derive_seed(root_seed, "asym", "delta"),
                                    theta_hat=asy.flatten_params(model))
    level = settings.get("level", float, 0.95)
    intervals = asy.confidence_intervals(result, n, level)

    cfg_hash = icpp_io.config_hash(settings.merged())
    path = out / "intervals.csv"
    icpp_io.write_intervals_csv(path, model, intervals)
    icpp_io.write_sidecar(path, cfg_hash=cfg_hash, seed=root_seed)
    summary = {
        "method": result.method,
        "kappa": result.kappa,
        "level": level,
        "m_draws": 0 if result.draws is None else int(result.draws.shape[0]),
        "fisher_condition_number": fisher.condition_number,
        "fisher_singular_warning": bool(fisher.singular_warning),
        "variances": result.variances.tolist(),
    }
    import json
    sum_path = out / "asymptotics.json"
    sum_path.write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    icpp_io.write_sidecar(sum_path, cfg_hash=cfg_hash, seed=root_seed)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = Settings(args)
    threads = settings.get("threads", int, 1)
    if threads is not None and threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    handlers = {"fit": cmd_fit, "cv": cmd_cv, "simulate": cmd_simulate,
                "variance": cmd_variance}
    try:
        return handlers[args.command](settings)
    except IcppError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
