"""Deterministic limit of the patch model and its numerical integration.

State vectors are laid out as ``[s_1..s_ell, i_1..i_ell]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import DimensionMismatch, SolverError, StepSizeUnderflow, ValidationError
from .model import ContinuousState, ValidatedModel, mobility_laplacian


@dataclass(frozen=True)
class RK4Fixed:
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError(f"RK4 step must be > 0, got {self.dt!r}")


@dataclass(frozen=True)
class RK45Adaptive:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValidationError("integrator tolerances must be > 0")


Method = Union[RK4Fixed, RK45Adaptive]


@dataclass(frozen=True)
class OdeConfig:
    t_max: float
    method: Method = field(default_factory=RK45Adaptive)
    record_dt: float | None = None

    def __post_init__(self):
        if not (self.t_max >= 0 and math.isfinite(self.t_max)):
            raise ValidationError(f"t_max must be finite and >= 0, got {self.t_max!r}")
        if self.record_dt is not None and not self.record_dt > 0:
            raise ValidationError(f"record_dt must be > 0, got {self.record_dt!r}")

    @property
    def grid_spacing(self) -> float:
        if self.record_dt is not None:
            return self.record_dt
        return self.t_max / 200 if self.t_max > 0 else 1.0


@dataclass(frozen=True)
class ContinuousTrajectory:
    times: np.ndarray
    values: np.ndarray
    method: str = ""
    steps: int = 0
    rejected: int = 0

    @property
    def ell(self) -> int:
        return self.values.shape[1] // 2

    @property
    def states(self) -> list[ContinuousState]:
        return [ContinuousState.from_vector(v) for v in self.values]

    @property
    def final(self) -> ContinuousState:
        return ContinuousState.from_vector(self.values[-1])

    def mass(self) -> np.ndarray:
        return self.values.sum(axis=1)


def _incidence(lam, s, i):
    n = s + i
    out = np.zeros_like(n)
    pos = n > 0
    out[pos] = lam[pos] * s[pos] * i[pos] / n[pos]
    return out


def make_rhs(model: ValidatedModel) -> Callable[[float, np.ndarray], np.ndarray]:
    """Vector field of the deterministic system as ``f(t, z)``."""
    ell = model.ell
    lam = model.lam
    gamma = model.gamma
    # (Q x)_j = sum_k a_kj x_k - sum_k a_jk x_j
    q = mobility_laplacian(model.adjacency).T.copy()
    mig_s = model.nu_s * q
    mig_i = model.nu_i * q

    def rhs(t, z):
        s = z[:ell]
        i = z[ell:]
        inc = _incidence(lam, s, i)
        rec = gamma * i
        out = np.empty_like(z)
        out[:ell] = -inc + rec + mig_s @ s
        out[ell:] = inc - rec + mig_i @ i
        return out

    return rhs


def drift(z, model: ValidatedModel) -> np.ndarray:
    """Time derivative of the full system at ``z`` (2 * ell components)."""
    if isinstance(z, ContinuousState):
        z = z.as_vector()
    z = np.asarray(z, dtype=float)
    if z.shape != (2 * model.ell,):
        raise DimensionMismatch(f"expected {2 * model.ell} components, got {z.shape}")
    return make_rhs(model)(0.0, z)


def make_reduced_rhs(model: ValidatedModel) -> Callable[[float, np.ndarray], np.ndarray]:
    """Vector field of the (N, I) form as ``f(t, y)`` with ``y = [N..., I...]``."""
    nu = model.require_equal_diffusion()
    ell = model.ell
    nu_d = nu * mobility_laplacian(model.adjacency)
    lam = model.lam
    gamma = model.gamma

    def rhs(t, y):
        n = y[:ell]
        i = y[ell:]
        frac = np.divide(i, n, out=np.zeros_like(i), where=n > 0)
        out = np.empty_like(y)
        out[:ell] = nu_d @ n
        out[ell:] = nu_d @ i - gamma * i + (1.0 - frac) * lam * i
        return out

    return rhs


def drift_reduced(n_vec, i_vec, model: ValidatedModel):
    """Derivatives of patch totals and infectious mass when nu_s == nu_i.

    Returns ``(dN/dt, dI/dt)``.
    """
    n_vec = np.asarray(n_vec, dtype=float)
    i_vec = np.asarray(i_vec, dtype=float)
    out = make_reduced_rhs(model)(0.0, np.concatenate([n_vec, i_vec]))
    return out[: model.ell], out[model.ell:]


def drift_homogeneous(s, i, lam, gamma):
    """Mass-action SIS in one well-mixed community."""
    force = lam * s * i
    return -force + gamma * i, force - gamma * i


# -- integrators -------------------------------------------------------------

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4
_A_ROWS = [np.array(row) for row in _A]


def _dp_step(f, t, y, k0, h):
    k = np.empty((7, y.shape[0]))
    k[0] = k0
    for st in range(1, 7):
        yy = y + h * (_A_ROWS[st] @ k[:st])
        k[st] = f(t + _C[st] * h, yy)
    y_new = y + h * (_B5 @ k)
    # stage 7 is evaluated at y_new (FSAL)
    err = h * (_E @ k)
    return y_new, err, k[6]


def _initial_step(f, t, y, f0, rtol, atol, t_span):
    scale = atol + np.abs(y) * rtol
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_span)
    y1 = y + h0 * f0
    d2 = np.sqrt(np.mean(((f(t + h0, y1) - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, t_span)


def time_grid(t_max: float, spacing: float) -> np.ndarray:
    """``0, dt, 2 dt, ...`` up to ``t_max``; ``t_max`` is appended if off-grid."""
    n = int(math.floor(t_max / spacing * (1 + 1e-12)))
    grid = spacing * np.arange(n + 1)
    if t_max - grid[-1] > 1e-12 * max(1.0, t_max):
        grid = np.append(grid, t_max)
    return grid


def integrate_rhs(f, z0, cfg: OdeConfig, clamp_tol: float | None = None,
                  steady_tol: float | None = None) -> ContinuousTrajectory:
    """Integrate ``dz/dt = f(t, z)`` from ``z0`` and record on the output grid.

    Components that dip into ``[-clamp_tol, 0)`` after an accepted step are
    reset to zero; a deeper excursion makes the adaptive method retry with a
    smaller step (and is an error for the fixed-step method).

    With ``steady_tol`` set, the adaptive integration stops as soon as
    ``max|f| < steady_tol`` and the current point is appended as the last
    record.
    """
    y = np.array(z0, dtype=float)
    if np.any(y < 0):
        raise ValidationError("initial state must be nonnegative")
    grid = time_grid(cfg.t_max, cfg.grid_spacing)
    out = np.empty((grid.shape[0], y.shape[0]))
    out[0] = y
    method = cfg.method
    if clamp_tol is None:
        clamp_tol = method.abs_tol if isinstance(method, RK45Adaptive) else 1e-10
    steps = rejected = 0
    t = 0.0

    if isinstance(method, RK4Fixed):
        for g in range(1, grid.shape[0]):
            t_target = grid[g]
            while t < t_target - 1e-14 * max(1.0, t_target):
                h = min(method.dt, t_target - t)
                k1 = f(t, y)
                k2 = f(t + h / 2, y + h / 2 * k1)
                k3 = f(t + h / 2, y + h / 2 * k2)
                k4 = f(t + h, y + h * k3)
                y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                t = t + h
                steps += 1
                if np.any(y < -clamp_tol):
                    raise SolverError(
                        f"fixed step {method.dt} drove the state negative at t={t:.6g}",
                        {"t": t, "min": float(y.min())},
                    )
                np.maximum(y, 0.0, out=y)
            t = t_target
            out[g] = y
        return ContinuousTrajectory(grid, out, f"rk4(dt={method.dt!r})", steps, 0)

    rtol, atol = method.rel_tol, method.abs_tol
    fy = f(t, y)
    h = _initial_step(f, t, y, fy, rtol, atol, max(cfg.t_max, 1e-12)) if cfg.t_max > 0 else 0.0
    for g in range(1, grid.shape[0]):
        t_target = grid[g]
        while t < t_target:
            h_try = min(h, t_target - t)
            hit = h_try >= t_target - t
            if h_try < 1e-14 * max(1.0, abs(t)):
                raise StepSizeUnderflow(
                    f"step size underflow at t={t:.6g}", {"t": t, "h": h_try, "steps": steps}
                )
            y_new, err, f_new = _dp_step(f, t, y, fy, h_try)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
            if err_norm <= 1.0 and not np.any(y_new < -clamp_tol):
                t = t_target if hit else t + h_try
                neg = y_new < 0
                if neg.any():
                    y_new[neg] = 0.0
                    f_new = f(t, y_new)
                y, fy = y_new, f_new
                steps += 1
                factor = 5.0 if err_norm == 0 else min(5.0, 0.9 * err_norm ** -0.2)
                # a step shortened to land on a grid point says nothing about h
                if not hit or h_try == h:
                    h = h_try * factor
                if steady_tol is not None and np.abs(fy).max() < steady_tol:
                    grid = np.append(grid[:g], t)
                    out = out[: g + 1]
                    out[g] = y
                    name = f"dopri5(rtol={rtol!r}, atol={atol!r}, stopped at steady state)"
                    return ContinuousTrajectory(grid, out, name, steps, rejected)
            else:
                rejected += 1
                factor = 0.2 if not np.isfinite(err_norm) else max(0.2, 0.9 * err_norm ** -0.2)
                if err_norm <= 1.0:
                    factor = 0.5
                h = h_try * factor
        out[g] = y
    name = f"dopri5(rtol={rtol!r}, atol={atol!r})"
    return ContinuousTrajectory(grid, out, name, steps, rejected)


def integrate(model: ValidatedModel, z0, cfg: OdeConfig) -> ContinuousTrajectory:
    """Integrate the full patch system from ``z0``."""
    if isinstance(z0, ContinuousState):
        z0 = z0.as_vector()
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (2 * model.ell,):
        raise DimensionMismatch(f"expected {2 * model.ell} components, got {z0.shape}")
    return integrate_rhs(make_rhs(model), z0, cfg)


def integrate_reduced(model: ValidatedModel, n0, i0, cfg: OdeConfig,
                      steady_tol: float | None = None) -> ContinuousTrajectory:
    """Integrate the (N, I) form; the trajectory stores ``[N..., I...]``."""
    f = make_reduced_rhs(model)
    y0 = np.concatenate([np.asarray(n0, float), np.asarray(i0, float)])
    return integrate_rhs(f, y0, cfg, steady_tol=steady_tol)
