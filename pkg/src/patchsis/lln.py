"""Empirical law-of-large-numbers checks: scaled SSA paths against the ODE."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ode, ssa
from .errors import GridOutOfRange, InsufficientData, PatchsisError, ValidationError
from .model import ContinuousState, ValidatedModel


def default_threads() -> int:
    env = os.environ.get("PATCHSIS_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"PATCHSIS_THREADS must be an integer, got {env!r}") from None
        if n >= 1:
            return n
    return os.cpu_count() or 1


@dataclass(frozen=True)
class LlnStudyConfig:
    populations: Sequence[int]
    replicates: int
    t_max: float
    grid_dt: float | None = None
    master_seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        pops = tuple(int(n) for n in self.populations)
        if not pops or any(n < 1 for n in pops):
            raise ValidationError("populations must be positive integers")
        if any(b <= a for a, b in zip(pops, pops[1:])):
            raise ValidationError(f"populations must be strictly increasing, got {pops}")
        object.__setattr__(self, "populations", pops)
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise ValidationError(f"t_max must be > 0, got {self.t_max!r}")
        if self.grid_dt is not None and not self.grid_dt > 0:
            raise ValidationError(f"grid_dt must be > 0, got {self.grid_dt!r}")

    @property
    def spacing(self) -> float:
        return self.grid_dt if self.grid_dt is not None else self.t_max / 200


@dataclass(frozen=True)
class Cell:
    population: int
    replicate: int
    sup_error: float | None
    events: int = 0
    absorbed: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class Aggregate:
    population: int
    median: float
    mean: float
    max: float
    completed: int
    failed: int


@dataclass
class LlnResult:
    cells: list[Cell]
    grid: np.ndarray
    reference: ode.ContinuousTrajectory
    config: LlnStudyConfig
    aggregates: list[Aggregate] = field(default_factory=list)

    def errors_for(self, n: int) -> np.ndarray:
        return np.array([c.sup_error for c in self.cells if c.population == n and c.ok])

    def medians(self) -> np.ndarray:
        return np.array([a.median for a in self.aggregates])


def _hold(times, values, t):
    """Piecewise-constant (right-continuous) evaluation at times ``t``."""
    idx = np.searchsorted(times, t, side="right") - 1
    return values[idx]


def sup_distance(stoch, det: ode.ContinuousTrajectory, grid=None) -> float:
    """Max over ``grid`` of the L1 distance between two trajectories.

    The stochastic path is held constant between recorded points (and after
    the last one, up to its horizon); the deterministic path is linearly
    interpolated between its records.
    """
    grid = det.times if grid is None else np.asarray(grid, dtype=float)
    s_end = stoch.t_max
    tol = 1e-12 * max(1.0, abs(s_end))
    if grid.size == 0:
        raise GridOutOfRange("empty comparison grid")
    if grid[0] < stoch.times[0] - tol or grid[-1] > s_end + tol:
        raise GridOutOfRange(
            f"grid [{grid[0]}, {grid[-1]}] leaves the stochastic path's range "
            f"[{stoch.times[0]}, {s_end}]"
        )
    if grid[0] < det.times[0] - tol or grid[-1] > det.times[-1] + tol:
        raise GridOutOfRange(
            f"grid [{grid[0]}, {grid[-1]}] leaves the deterministic path's range "
            f"[{det.times[0]}, {det.times[-1]}]"
        )
    s_vals = _hold(stoch.times, stoch.values, grid)
    d_vals = np.column_stack(
        [np.interp(grid, det.times, det.values[:, c]) for c in range(det.values.shape[1])]
    )
    return float(np.abs(s_vals - d_vals).sum(axis=1).max())


def _run_cell(model, x0, n, r, cfg, reference, grid):
    try:
        sim_cfg = ssa.SimConfig(n, cfg.t_max, cfg.master_seed, ssa.Grid(cfg.spacing))
        traj = ssa.simulate(model, x0, sim_cfg, rng=ssa.make_rng(cfg.master_seed, n, r))
        err = sup_distance(ssa.scale(traj), reference, grid)
        return Cell(n, r, err, traj.event_count, traj.absorbed)
    except PatchsisError as exc:
        return Cell(n, r, None, error=f"{type(exc).__name__}: {exc}")


def aggregate(cells: Sequence[Cell], populations: Sequence[int]) -> list[Aggregate]:
    out = []
    for n in populations:
        errs = np.array([c.sup_error for c in cells if c.population == n and c.ok])
        failed = sum(1 for c in cells if c.population == n and not c.ok)
        if errs.size:
            out.append(Aggregate(n, float(np.median(errs)), float(errs.mean()), float(errs.max()),
                                 int(errs.size), failed))
        else:
            out.append(Aggregate(n, math.nan, math.nan, math.nan, 0, failed))
    return out


def convergence_study(model: ValidatedModel, x0: ContinuousState, cfg: LlnStudyConfig) -> LlnResult:
    """Sup-norm distance to the ODE for every (population, replicate) cell.

    Replicate ``r`` at population ``N`` draws from the stream
    ``(master_seed, N, r)``, so results do not depend on thread count or on
    which other populations are in the study.
    """
    reference = ode.integrate(model, x0, ode.OdeConfig(cfg.t_max, record_dt=cfg.spacing))
    grid = reference.times
    jobs = [(n, r) for n in cfg.populations for r in range(cfg.replicates)]
    threads = cfg.threads or default_threads()
    if threads <= 1:
        cells = [_run_cell(model, x0, n, r, cfg, reference, grid) for n, r in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(lambda job: _run_cell(model, x0, *job, cfg, reference, grid), jobs))
    return LlnResult(cells, grid, reference, cfg, aggregate(cells, cfg.populations))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float


def rate_fit(result) -> RateFit:
    """Least-squares slope of log(median error) against log(N).

    Accepts an :class:`LlnResult` or a sequence of ``(N, median)`` pairs.
    """
    if isinstance(result, LlnResult):
        pairs = [(a.population, a.median) for a in result.aggregates]
    else:
        pairs = list(result)
    pairs = [(n, m) for n, m in pairs if np.isfinite(m) and m > 0]
    if len(pairs) < 3:
        raise InsufficientData(f"need at least 3 populations with positive median error, got {len(pairs)}")
    x = np.log([p[0] for p in pairs])
    y = np.log([p[1] for p in pairs])
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return RateFit(float(coef[0]), float(coef[1]), resid)
