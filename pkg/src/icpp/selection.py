"""Cross-validated choice of the smoothing parameter and component count.

Replications are partitioned into K folds (a blocked form of leave-one-out);
each grid cell is scored by the summed held-out marginal log likelihood,
evaluated with a fixed number of Monte-Carlo draws and a per-cell seed so
cells are comparable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .basis import BasisSystem
from .em import FitConfig, FitResult, fit
from .errors import IcppError, SelectionFailedError
from .model import marginal_loglik
from .seeds import derive_rng, derive_seed

EVAL_DRAWS = 4000


@dataclass(frozen=True)
class CvPlan:
    """Grid, folds and fit template for one cross-validation run."""

    zeta_grid: tuple
    p_grid: tuple
    folds: int = 5
    seed: int = 0
    fit_config: FitConfig = field(default_factory=FitConfig)
    eval_draws: int = EVAL_DRAWS

    def __post_init__(self):
        object.__setattr__(self, "zeta_grid", tuple(float(z) for z in self.zeta_grid))
        object.__setattr__(self, "p_grid", tuple(int(p) for p in self.p_grid))
        if not self.zeta_grid or not self.p_grid:
            raise ValueError("grids must be nonempty")
        if any(z < 0 for z in self.zeta_grid):
            raise ValueError("zeta values must be >= 0")
        if any(p < 1 for p in self.p_grid):
            raise ValueError("component counts must be >= 1")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")


@dataclass(frozen=True)
class CvCell:
    p: int
    zeta: float
    score: float
    std_err: float
    n_invalid_folds: int

    @property
    def valid(self) -> bool:
        return self.n_invalid_folds == 0


@dataclass(frozen=True)
class CvReport:
    """Scored grid, the selected cell, and per-fold failure diagnostics."""

    table: list
    selected: tuple          # (p, zeta)
    fold_diagnostics: list

    def __post_init__(self):
        valid = [c for c in self.table if c.valid]
        if valid:
            best = max(c.score for c in valid)
            sel = next(c for c in self.table if c.valid and c.score == best)
            if (sel.p, sel.zeta) != self.selected:
                raise ValueError("selected cell must attain the maximum score")


def _make_folds(patterns, folds: int, seed: int):
    """Seeded partition by replication id; independent of input order."""
    order = np.argsort([pat.replication_id for pat in patterns])
    rng = derive_rng(seed, "folds")
    shuffled = order[rng.permutation(order.size)]
    parts = np.array_split(shuffled, folds)
    covered = np.sort(np.concatenate(parts))
    if not np.array_equal(covered, np.arange(len(patterns))):
        raise AssertionError("fold assignment is not a partition")
    return parts


def kfold_cv(patterns, basis: BasisSystem, plan: CvPlan) -> CvReport:
    """Score every (p, zeta) cell by K-fold held-out marginal log likelihood.

    Fold fits warm-start along the ascending zeta path. A cell with any
    failed fold fit is marked invalid and excluded from the selection.
    """
    patterns = list(patterns)
    n = len(patterns)
    if plan.folds > n:
        raise ValueError(f"folds ({plan.folds}) cannot exceed replications ({n})")
    parts = _make_folds(patterns, plan.folds, plan.seed)

    zeta_order = np.argsort(plan.zeta_grid)
    cells = []
    diagnostics = []
    for p in plan.p_grid:
        scores = {z: 0.0 for z in plan.zeta_grid}
        variances = {z: 0.0 for z in plan.zeta_grid}
        invalid = {z: 0 for z in plan.zeta_grid}
        for f, held_idx in enumerate(parts):
            held = [patterns[i] for i in held_idx]
            train = [patterns[i] for i in range(n) if i not in set(held_idx.tolist())]
            warm = None
            for zi in zeta_order:
                zeta = plan.zeta_grid[zi]
                cfg = replace(plan.fit_config, zeta=zeta,
                              seed=derive_seed(plan.seed, "cv-fit", p, int(zi), f))
                try:
                    result = fit(train, basis, p, cfg, start=warm)
                    warm = result.params
                except (IcppError, ValueError, RuntimeError) as exc:
                    invalid[zeta] += 1
                    diagnostics.append({"p": p, "zeta": zeta, "fold": f, "error": str(exc)})
                    continue
                eval_seed = derive_seed(plan.seed, "cv-eval", p, int(zi))
                for pat in held:
                    ll = marginal_loglik(result.params, pat, plan.eval_draws, seed=eval_seed)
                    scores[zeta] += ll.value
                    variances[zeta] += ll.mc_std_err**2
        for zeta in plan.zeta_grid:
            cells.append(CvCell(p=p, zeta=zeta, score=scores[zeta],
                                std_err=float(np.sqrt(variances[zeta])),
                                n_invalid_folds=invalid[zeta]))

    valid = [c for c in cells if c.valid]
    if not valid:
        raise SelectionFailedError("every cross-validation cell failed")
    best = max(valid, key=lambda c: (c.score, -c.p, -c.zeta))
    table = sorted(cells, key=lambda c: (not c.valid, -c.score if c.valid else 0.0, c.p, c.zeta))
    return CvReport(table=table, selected=(best.p, best.zeta), fold_diagnostics=diagnostics)


def select_model(patterns, basis: BasisSystem, plan: CvPlan) -> tuple[FitResult, CvReport]:
    """Run the grid search, then refit on the full data at the selected cell."""
    report = kfold_cv(patterns, basis, plan)
    p_star, zeta_star = report.selected
    cfg = replace(plan.fit_config, zeta=zeta_star, seed=derive_seed(plan.seed, "final-fit"))
    result = fit(list(patterns), basis, p_star, cfg)
    return result, report
