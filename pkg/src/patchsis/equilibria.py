"""Equilibria, the basic reproduction number and stability diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    ConvergenceFailure,
    NoConvergence,
    NotCritical,
    RankDeficiency,
    SingularV,
    SolverError,
    SubcriticalModel,
    ValidationError,
)
from .model import ContinuousState, ValidatedModel, derive_matrices, mobility_laplacian
from . import ode

CRITICAL_TOL = 1e-8
DFE_TOL = 1e-8


@dataclass
class Equilibrium:
    state: ContinuousState
    residual: float
    iterations: int
    method: str
    converged_to_dfe: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def prevalence(self) -> np.ndarray:
        return self.state.prevalence


@dataclass
class AnalysisReport:
    r0: float
    dfe: ContinuousState
    n_star: np.ndarray
    ee: ContinuousState | None
    stability_modulus_at_ee: float | None
    solver_diagnostics: dict = field(default_factory=dict)


# -- basic objects -----------------------------------------------------------

def dfe(ell: int, mass: float = 1.0) -> ContinuousState:
    """Disease-free equilibrium: susceptibles spread evenly, no infection."""
    if ell < 1:
        raise ValidationError("ell must be >= 1")
    return ContinuousState(np.full(ell, mass / ell), np.zeros(ell))


def homogeneous_ee(lam: float, gamma: float) -> tuple[float, float]:
    """Endemic state ``(gamma/lam, 1 - gamma/lam)`` of the well-mixed model."""
    if not lam > gamma:
        raise SubcriticalModel(f"no endemic state for lam={lam!r} <= gamma={gamma!r}")
    return gamma / lam, 1.0 - gamma / lam


def next_gen_matrix(model: ValidatedModel) -> np.ndarray:
    """``-B V^-1`` via an LU factorisation of ``V``."""
    mats = derive_matrices(model)
    V = np.array(mats.V)
    lu, piv = scipy.linalg.lu_factor(V, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= np.finfo(float).eps * max(1.0, np.abs(V).max()) * V.shape[0]:
        raise SingularV("V is numerically singular", {"min_pivot": float(pivots.min())})
    v_inv = scipy.linalg.lu_solve((lu, piv), np.eye(V.shape[0]))
    k = -np.diag(mats.B)[:, None] * v_inv
    # -V^-1 is nonnegative in exact arithmetic; drop roundoff of the wrong sign
    k[(k < 0) & (k > -1e-14 * np.abs(k).max())] = 0.0
    return k


def spectral_radius(m, tol: float = 1e-12, max_iter: int = 10_000) -> tuple[float, dict]:
    """Dominant eigenvalue of a nonnegative matrix by power iteration.

    Falls back to a dense eigensolver when the iteration has not settled
    after ``max_iter`` steps.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if not np.any(m):
        return 0.0, {"method": "zero-matrix", "iterations": 0}
    x = np.full(n, 1.0 / n)
    est = 0.0
    prev_change = np.inf
    for it in range(1, max_iter + 1):
        y = m @ x
        norm = np.abs(y).sum()
        if norm == 0.0:
            break
        y /= norm
        change = abs(norm - est)
        # geometric convergence: remaining error ~ change * q / (1 - q)
        q = min(change / prev_change, 0.999) if prev_change > 0 else 0.0
        if change * max(1.0, q / (1.0 - q)) <= tol * norm and np.abs(y - x).sum() <= np.sqrt(tol):
            return float(norm), {"method": "power-iteration", "iterations": it}
        x, est, prev_change = y, norm, change
    try:
        vals = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(
            "power iteration and dense eigensolver both failed",
            {"iterations": max_iter, "last_estimate": est},
        ) from exc
    return float(np.abs(vals).max()), {"method": "dense-eig", "iterations": max_iter}


def r0(model: ValidatedModel) -> float:
    return spectral_radius(next_gen_matrix(model))[0]


def stationary_n(model: ValidatedModel, mass: float = 1.0) -> np.ndarray:
    """Equilibrium of the migration flow, ``N*^T Q = 0`` with ``sum N* = mass``."""
    ell = model.ell
    if ell == 1:
        return np.array([float(mass)])
    Q = np.array(derive_matrices(model).Q)
    rank = np.linalg.matrix_rank(Q)
    if rank != ell - 1:
        raise RankDeficiency(f"generator has rank {rank}, expected {ell - 1}", {"rank": int(rank)})
    system = Q.T.copy()
    system[-1, :] = 1.0
    rhs = np.zeros(ell)
    rhs[-1] = mass
    n_star = scipy.linalg.lu_solve(scipy.linalg.lu_factor(system), rhs)
    if np.any(n_star <= 0):
        raise RankDeficiency("stationary masses are not all positive", {"n_star": n_star.tolist()})
    return n_star


def stability_modulus(m) -> float:
    """Largest real part over the spectrum of ``m``."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise ValidationError(f"matrix must be square, got {m.shape}")
    try:
        alpha = float(np.linalg.eigvals(m).real.max())
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure("eigenvalue iteration did not converge") from exc
    if m.shape[0] <= 2:
        closed = _modulus_closed_form(m)
        scale = max(1.0, np.abs(m).max())
        if abs(closed - alpha) > 1e-8 * scale:
            raise ConvergenceFailure(
                "eigensolver disagrees with characteristic polynomial",
                {"eig": alpha, "closed_form": closed},
            )
    return alpha


def _modulus_closed_form(m: np.ndarray) -> float:
    if m.shape[0] == 1:
        return float(m[0, 0])
    half_tr = 0.5 * (m[0, 0] + m[1, 1])
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    disc = half_tr * half_tr - det
    return float(half_tr + np.sqrt(disc)) if disc > 0 else float(half_tr)


# -- equal-diffusion endemic equilibrium ------------------------------------

def reduced_residual(model: ValidatedModel, infected, n_star) -> np.ndarray:
    """``(nu D - A_gamma + B) I - diag(1/N*) diag(I) B I``."""
    nu = model.require_equal_diffusion()
    I = np.asarray(infected, dtype=float)
    D = mobility_laplacian(model.adjacency)
    lam = model.lam
    return nu * D @ I - model.gamma * I + lam * I - lam * I * I / n_star


def reduced_jacobian(model: ValidatedModel, infected, n_star) -> np.ndarray:
    """Jacobian of :func:`reduced_residual` with respect to ``I``."""
    nu = model.require_equal_diffusion()
    I = np.asarray(infected, dtype=float)
    lam = model.lam
    D = mobility_laplacian(model.adjacency)
    return (
        nu * D
        + np.diag(lam - model.gamma)
        - np.diag(I / n_star * lam)
        - np.diag(lam * I / n_star)
    )


def _newton_box(model, I, n_star, tol, max_iter):
    """Damped Newton keeping every iterate inside the open box (0, N*)."""
    res = reduced_residual(model, I, n_star)
    norm = np.abs(res).max()
    history = [norm]
    for it in range(1, max_iter + 1):
        if norm < tol:
            return I, norm, it - 1, True
        if it > 10 and norm > 0.5 * history[-6]:
            # creeping toward the box boundary instead of converging
            return I, norm, it, False
        J = reduced_jacobian(model, I, n_star)
        try:
            delta = -np.linalg.solve(J, res)
        except np.linalg.LinAlgError:
            return I, norm, it, False
        alpha = 1.0
        while alpha > 1e-12:
            cand = I + alpha * delta
            if np.all(cand > 0) and np.all(cand < n_star):
                cand_res = reduced_residual(model, cand, n_star)
                cand_norm = np.abs(cand_res).max()
                if cand_norm < norm or cand_norm < tol:
                    break
            alpha *= 0.5
        else:
            return I, norm, it, False
        I, res, norm = cand, cand_res, cand_norm
        history.append(norm)
    return I, norm, max_iter, norm < tol


def solve_endemic_equal_diffusion(model: ValidatedModel, mass: float = 1.0,
                                  tol: float = 1e-12, max_iter: int = 100) -> Equilibrium:
    """Endemic equilibrium for ``nu_s == nu_i`` with full diagnostics."""
    model.require_equal_diffusion()
    R0 = r0(model)
    if R0 <= 1.0:
        raise SubcriticalModel(f"R0 = {R0:.12g} <= 1: no endemic equilibrium", {"r0": R0})
    n_star = stationary_n(model, mass)
    tol = tol * max(1.0, mass)
    guess = np.clip(0.5 * n_star * (1 - 1 / R0), 1e-3 * n_star, (1 - 1e-3) * n_star)
    I, norm, iters, ok = _newton_box(model, guess, n_star, tol, max_iter)
    method = "newton"
    if not ok or I.min() < DFE_TOL * mass:
        # stagnation: relax along the reduced flow, then polish
        traj = ode.integrate_reduced(model, n_star, guess, ode.OdeConfig(1e4, record_dt=1e4),
                                     steady_tol=1e-6 * max(1.0, mass))
        relaxed = np.clip(traj.values[-1, model.ell:], 1e-12 * n_star, (1 - 1e-12) * n_star)
        I, norm, more, ok = _newton_box(model, relaxed, n_star, tol, max_iter)
        iters += more
        method = "ode-relaxation+newton"
    if not ok:
        raise NoConvergence(
            "endemic equilibrium Newton iteration did not converge",
            {"residual": float(norm), "iterations": iters, "method": method},
        )
    state = ContinuousState(n_star - I, I)
    return Equilibrium(state, float(norm), iters, method,
                       diagnostics={"r0": R0, "n_star": n_star.tolist()})


def endemic_equilibrium_equal_diffusion(model: ValidatedModel, mass: float = 1.0) -> ContinuousState:
    return solve_endemic_equal_diffusion(model, mass).state


# -- general steady state ---------------------------------------------------

def full_jacobian(model: ValidatedModel, z) -> np.ndarray:
    """Analytic Jacobian of the full drift at ``z = [s, i]``."""
    z = z.as_vector() if isinstance(z, ContinuousState) else np.asarray(z, dtype=float)
    ell = model.ell
    s, i = z[:ell], z[ell:]
    n = s + i
    lam = model.lam
    with np.errstate(divide="ignore", invalid="ignore"):
        g_s = np.where(n > 0, lam * i * i / (n * n), 0.0)
        g_i = np.where(n > 0, lam * s * s / (n * n), 0.0)
    q = mobility_laplacian(model.adjacency).T
    J = np.zeros((2 * ell, 2 * ell))
    J[:ell, :ell] = model.nu_s * q + np.diag(-g_s)
    J[:ell, ell:] = np.diag(model.gamma - g_i)
    J[ell:, :ell] = np.diag(g_s)
    J[ell:, ell:] = model.nu_i * q + np.diag(g_i - model.gamma)
    return J


def _constrained_system(model, rhs, z, mass):
    F = rhs(0.0, z)
    F[0] = z.sum() - mass
    J = full_jacobian(model, z)
    J[0, :] = 1.0
    return F, J


def _newton_full(model, rhs, z, mass, tol, max_iter):
    F, J = _constrained_system(model, rhs, z, mass)
    norm = np.abs(rhs(0.0, z)).max() + abs(F[0])
    for it in range(1, max_iter + 1):
        if norm < tol:
            return _polish(model, rhs, z, F, J, norm, mass) + (it - 1, True)
        try:
            delta = -np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            return z, norm, it, False
        # largest step keeping every component nonnegative
        neg = delta < 0
        alpha = 1.0
        if neg.any():
            alpha = min(1.0, 0.99 * float(np.min(z[neg] / -delta[neg])) if np.any(z[neg] > 0) else 1.0)
        accepted = False
        while alpha > 1e-12:
            cand = np.maximum(z + alpha * delta, 0.0)
            cand_F, cand_J = _constrained_system(model, rhs, cand, mass)
            cand_norm = np.abs(rhs(0.0, cand)).max() + abs(cand_F[0])
            if cand_norm < norm or cand_norm < tol:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return z, norm, it, False
        z, F, J, norm = cand, cand_F, cand_J, cand_norm
    return z, norm, max_iter, norm < tol


def _polish(model, rhs, z, F, J, norm, mass):
    """One extra undamped Newton step, kept only if it lowers the residual."""
    try:
        cand = np.maximum(z - np.linalg.solve(J, F), 0.0)
    except np.linalg.LinAlgError:
        return z, norm
    cand_norm = np.abs(rhs(0.0, cand)).max() + abs(cand.sum() - mass)
    return (cand, cand_norm) if cand_norm < norm else (z, norm)


def _default_guess(model: ValidatedModel, mass: float) -> np.ndarray:
    n = np.full(model.ell, mass / model.ell)
    frac = np.maximum(1.0 - model.gamma / model.lam, 0.05)
    return np.concatenate([n * (1 - frac), n * frac])


def solve_steady_state(model: ValidatedModel, initial_guess=None, mass: float = 1.0,
                       tol: float = 1e-10, max_iter: int = 100, starts: int = 8,
                       seed: int = 0) -> Equilibrium:
    """Root of the full drift on the simplex ``sum(z) = mass``.

    The mass constraint replaces the first equation (the drift always sums
    to zero, so one equation is redundant). When Newton fails from the first
    guess, up to ``starts`` randomly perturbed guesses are tried.
    """
    if not mass > 0:
        raise ValidationError(f"mass must be > 0, got {mass!r}")
    rhs = ode.make_rhs(model)
    if initial_guess is None:
        z0 = _default_guess(model, mass)
    else:
        z0 = initial_guess.as_vector() if isinstance(initial_guess, ContinuousState) else np.asarray(initial_guess, float)
        z0 = np.maximum(z0, 0.0)
        z0 = z0 * (mass / z0.sum())
    tol = tol * max(1.0, mass)
    rng = np.random.default_rng(seed)
    attempts = []
    guess = z0
    for attempt in range(starts + 1):
        z, norm, iters, ok = _newton_full(model, rhs, guess, mass, tol, max_iter)
        attempts.append({"residual": float(norm), "iterations": iters})
        if ok:
            ell = model.ell
            state = ContinuousState(z[:ell], z[ell:])
            to_dfe = bool(np.abs(z[ell:]).sum() < DFE_TOL)
            return Equilibrium(
                state, float(np.abs(rhs(0.0, z)).max()), iters,
                "newton" if attempt == 0 else f"newton-multistart[{attempt}]",
                converged_to_dfe=to_dfe,
                diagnostics={"attempts": attempts},
            )
        guess = z0 * np.exp(rng.uniform(-0.5, 0.5, size=z0.shape))
        guess *= mass / guess.sum()
    raise NoConvergence("steady-state Newton failed from every start", {"attempts": attempts})


def steady_state_general(model: ValidatedModel, initial_guess=None, mass: float = 1.0) -> ContinuousState:
    return solve_steady_state(model, initial_guess, mass).state


def constrained_modulus(model: ValidatedModel, z) -> float:
    """Stability modulus of the full Jacobian on the zero-mass subspace.

    The drift conserves total mass, so its Jacobian always has a zero
    eigenvalue along that direction; it is projected out here.
    """
    J = full_jacobian(model, z)
    n = J.shape[0]
    basis = scipy.linalg.null_space(np.ones((1, n)))
    return stability_modulus(basis.T @ J @ basis)


# -- criticality ------------------------------------------------------------

def lyapunov_left_vector(model: ValidatedModel) -> np.ndarray:
    """Positive left null vector of ``B + V`` at criticality, summing to one."""
    mats = derive_matrices(model)
    M = np.array(mats.B + mats.V)
    alpha = stability_modulus(M)
    if abs(alpha) > CRITICAL_TOL:
        raise NotCritical(f"alpha(B+V) = {alpha:.3e} is not within {CRITICAL_TOL:g} of 0", {"alpha": alpha})
    vals, vecs = np.linalg.eig(M.T)
    v = np.real(vecs[:, np.argmax(vals.real)])
    v = v / v.sum()
    if np.any(v <= 0):
        raise SolverError("Perron vector is not positive", {"v": v.tolist()})
    return v


def tune_to_criticality(model: ValidatedModel, tol: float = 1e-13, max_iter: int = 200) -> ValidatedModel:
    """Scale every contact rate by a common factor so that alpha(B + V) = 0.

    Bisection on the factor; alpha is increasing in it.
    """
    mats = derive_matrices(model)
    B, V = np.array(mats.B), np.array(mats.V)

    def alpha(c):
        return stability_modulus(c * B + V)

    lo, hi = 0.0, 1.0
    while alpha(hi) < 0:
        hi *= 2.0
        if hi > 1e12:
            raise ConvergenceFailure("could not bracket the critical contact scaling")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        a = alpha(mid)
        if a == 0.0:
            lo = hi = mid
            break
        if a < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    c = 0.5 * (lo + hi)
    return model.replace(lam=c * model.lam)


# -- report -----------------------------------------------------------------

def analyze(model: ValidatedModel, mass: float = 1.0) -> AnalysisReport:
    """R0, DFE, N* and (when supercritical) the endemic equilibrium."""
    K = next_gen_matrix(model)
    R0, r0_diag = spectral_radius(K)
    mats = derive_matrices(model)
    diag = {
        "r0": r0_diag,
        "alpha_B_plus_V": stability_modulus(np.array(mats.B + mats.V)),
        "mass": mass,
    }
    n_star = stationary_n(model, mass)
    ee = None
    modulus = None
    if R0 > 1:
        if model.equal_diffusion:
            eq = solve_endemic_equal_diffusion(model, mass)
            modulus = stability_modulus(reduced_jacobian(model, eq.state.i, n_star))
            diag["ee"] = {"method": eq.method, "iterations": eq.iterations,
                          "residual": eq.residual, "stability": "alpha(DL(I*))"}
        else:
            eq = solve_steady_state(model, mass=mass)
            modulus = constrained_modulus(model, eq.state)
            diag["ee"] = {"method": eq.method, "iterations": eq.iterations,
                          "residual": eq.residual, "converged_to_dfe": eq.converged_to_dfe,
                          "stability": "alpha(full Jacobian on mass-zero subspace)"}
        if not eq.converged_to_dfe:
            ee = eq.state
        else:
            modulus = None
    return AnalysisReport(R0, dfe(model.ell, mass), n_star, ee, modulus, diag)
