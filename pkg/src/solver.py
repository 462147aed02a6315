"""
Equilibrium Solver Module

Solves the kernel inclusion 0 ∈ H z + psi(z) + B u and evaluates the
output y = -C z - D u (the forward pass of the network).

Two operator-splitting iterations are provided:

- forward_backward: z <- J(z - alpha (H z + B u)) with J the entrywise
  resolvent of psi (relu for ideal diodes)
- peaceman_rachford: relaxed reflected-resolvent iteration using the
  linear resolvent (I + alpha H)^-1, factorized once per solve

Both periodically try to finish exactly. For piecewise-linear activations
the current iterate fixes a branch for every entry and the branch linear
system is solved directly; for smooth (Shockley) activations a damped
Newton iteration runs on H z + psi(z) + B u = 0. A candidate is accepted
only when one genuine iteration step from it moves less than tol.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .activations import ResolventMap
from .extraction import KernelBehavior, factorize, lu_apply
from .utils import ConvergenceError, DegenerateNetworkError, DimensionError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000
POLISH_EVERY = 50


@dataclass(frozen=True, eq=False)
class SolveReport:
    """
    Outcome of one equilibrium solve.

    Attributes:
        z_star: Equilibrium (mixed amperes/volts)
        y: Output -C z* - D u
        iterations: Iterations performed
        residual: Infinity-norm step at exit
        converged: residual <= tol
        alpha: Step size used
        solver: "fb" or "pr"
        u: Input the solve was run with
        polished: True when the exit point came from an exact branch solve
        inclusion_residual: Distance of -(H z* + B u) from psi(z*)
    """

    z_star: np.ndarray
    y: np.ndarray
    iterations: int
    residual: float
    converged: bool
    alpha: float
    solver: str
    u: np.ndarray
    polished: bool = False
    inclusion_residual: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "z_star": self.z_star.tolist(),
            "y": self.y.tolist(),
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "alpha": self.alpha,
            "solver": self.solver,
            "polished": self.polished,
            "inclusion_residual": self.inclusion_residual,
        }


def step_size(kernel: KernelBehavior, iterations: int = 500, rtol: float = 1e-9) -> float:
    """
    Automatic step alpha = 1 / (1 + lambda_max(H_sym)).

    lambda_max is the dominant eigenvalue magnitude of (H + H^T)/2 from
    power iteration.
    """
    if kernel.n == 0:
        return 1.0
    S = 0.5 * (kernel.H + kernel.H.T)
    v = np.ones(kernel.n) / np.sqrt(kernel.n)
    # break symmetry for matrices with the all-ones vector in their kernel
    v = v + 1e-3 * np.arange(kernel.n) / max(kernel.n, 1)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iterations):
        w = S @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        v = w / norm
        if abs(norm - estimate) <= rtol * norm:
            estimate = norm
            break
        estimate = norm
    return 1.0 / (1.0 + estimate)


def inclusion_residual(kernel: KernelBehavior, z: np.ndarray, u: np.ndarray,
                       boundary_tol: float = 1e-12) -> float:
    """Largest distance of -(H z + B u) from psi(z), entrywise."""
    if kernel.n == 0:
        return 0.0
    w = -(kernel.H @ z + kernel.B @ u)
    scale = max(1.0, float(np.max(np.abs(z), initial=0.0)))
    distances = ResolventMap(kernel.activations).distance(z, w, tol=boundary_tol * scale)
    return float(np.max(distances))


def solve_on_branches(kernel: KernelBehavior, rhs: np.ndarray, free: np.ndarray,
                      pinned: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Solve the kernel with every entry's branch fixed.

    Free entries satisfy (H z + rhs)_k = 0; pinned entries take their
    pinned value. rhs may hold several right-hand sides as columns.

    Args:
        kernel: Kernel behavior (only H is used)
        rhs: B u plus any offsets, shape (n,) or (n, k)
        free: Boolean mask of free entries
        pinned: Values of pinned entries (default zero)

    Returns:
        z with the shape of rhs

    Raises:
        DegenerateNetworkError: If H restricted to the free set is singular
    """
    rhs = np.asarray(rhs, dtype=float)
    z = np.zeros_like(rhs)
    fixed = ~free
    if pinned is not None:
        z[fixed] = pinned[fixed] if rhs.ndim == 1 else pinned[fixed][:, None]
    if np.any(free):
        H_ff = kernel.H[np.ix_(free, free)]
        right = rhs[free]
        if np.any(fixed):
            right = right + kernel.H[np.ix_(free, fixed)] @ z[fixed]
        try:
            z[free] = -scipy.linalg.solve(H_ff, right, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as e:
            raise DegenerateNetworkError(f"Kernel restricted to {int(free.sum())} free entries is singular") from e
    return z


def _fb_step(kernel: KernelBehavior, resolve: ResolventMap, z: np.ndarray, bu: np.ndarray,
             alpha: float) -> np.ndarray:
    return resolve(z - alpha * (kernel.H @ z + bu), alpha)


def _newton_polish(kernel: KernelBehavior, resolve: ResolventMap, z: np.ndarray, bu: np.ndarray,
                   tol: float, max_steps: int = 60) -> Optional[np.ndarray]:
    """Damped Newton on H z + psi(z) + B u = 0 for smooth activations."""

    def residual(x):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            r = kernel.H @ x + resolve.value(x) + bu
        return r if np.all(np.isfinite(r)) else None

    r = residual(z)
    if r is None:
        return None
    norm = np.max(np.abs(r))
    for _ in range(max_steps):
        if norm <= tol:
            return z
        J = kernel.H + np.diag(resolve.derivative(z))
        try:
            step = scipy.linalg.solve(J, -r, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            return None
        t = 1.0
        while t > 1e-8:
            trial = z + t * step
            r_trial = residual(trial)
            if r_trial is not None and np.max(np.abs(r_trial)) < norm:
                break
            t *= 0.5
        else:
            return None
        z, r = trial, r_trial
        norm = np.max(np.abs(r))
    return z if norm <= tol else None


def _polish(kernel: KernelBehavior, resolve: ResolventMap, z: np.ndarray, bu: np.ndarray,
            alpha: float, tol: float):
    """
    Try to replace an iterate with an exact equilibrium.

    Returns:
        (z, step residual) or None when the candidate is rejected
    """
    try:
        if resolve.all_piecewise:
            free = resolve.free_branch(z)
            candidate = solve_on_branches(kernel, bu, free, resolve.pinned_value(z))
        elif resolve.all_smooth:
            candidate = _newton_polish(kernel, resolve, z, bu, tol)
            if candidate is None:
                return None
        else:
            return None
        step = _fb_step(kernel, resolve, candidate, bu, alpha)
    except (DegenerateNetworkError, ConvergenceError, FloatingPointError, ValueError):
        return None
    if not np.all(np.isfinite(step)):
        return None
    moved = float(np.max(np.abs(step - candidate), initial=0.0))
    if moved > tol:
        return None
    return candidate, moved


def _prepare(kernel: KernelBehavior, u, alpha: float, z0):
    u = np.asarray(u, dtype=float)
    if u.shape != (kernel.m,):
        raise DimensionError(f"Input must have length {kernel.m}, got shape {u.shape}")
    if alpha < 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if alpha == 0:
        alpha = step_size(kernel)
        if not alpha > 0:
            raise ValueError("Automatic step-size selection failed")
    if z0 is None:
        z = np.zeros(kernel.n)
    else:
        z = np.asarray(z0, dtype=float).copy()
        if z.shape != (kernel.n,):
            raise DimensionError(f"z0 must have length {kernel.n}, got shape {z.shape}")
    return u, alpha, z


def _report(kernel, z, u, iterations, residual, tol, alpha, solver, polished) -> SolveReport:
    converged = residual <= tol
    report = SolveReport(
        z_star=z,
        y=kernel.output(z, u),
        iterations=iterations,
        residual=residual,
        converged=converged,
        alpha=alpha,
        solver=solver,
        u=u,
        polished=polished,
        inclusion_residual=inclusion_residual(kernel, z, u),
    )
    if converged:
        logger.debug(f"{solver} solve converged in {iterations} iterations (residual {residual:.3e})")
    else:
        logger.warning(f"{solver} solve stopped after {iterations} iterations with residual {residual:.3e}")
    return report


def forward_backward(kernel: KernelBehavior, u, alpha: float = 0.0, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER, z0=None, polish: bool = True,
                     polish_every: int = POLISH_EVERY) -> SolveReport:
    """
    Forward-backward splitting for the kernel inclusion.

    Args:
        kernel: Kernel behavior
        u: Input vector of length m
        alpha: Step size; 0 selects 1/(1 + lambda_max(H_sym))
        tol: Infinity-norm step tolerance
        max_iter: Iteration cap
        z0: Warm start
        polish: Try exact branch solves along the way
        polish_every: Iterations between polish attempts

    Returns:
        SolveReport (converged=False when max_iter is exhausted)

    Raises:
        DimensionError: On wrong input length
        ValueError: On negative alpha
    """
    u, alpha, z = _prepare(kernel, u, alpha, z0)
    if kernel.n == 0:
        return _report(kernel, z, u, 0, 0.0, tol, alpha, "fb", False)

    resolve = ResolventMap(kernel.activations)
    bu = kernel.B @ u
    residual = np.inf
    iterations = 0

    while iterations < max_iter:
        z_next = _fb_step(kernel, resolve, z, bu, alpha)
        residual = float(np.max(np.abs(z_next - z)))
        z = z_next
        iterations += 1
        if not np.all(np.isfinite(z)):
            logger.warning(f"fb iterate diverged at iteration {iterations}")
            break
        if residual <= tol:
            break
        if polish and (iterations == 1 or iterations % polish_every == 0):
            polished = _polish(kernel, resolve, z, bu, alpha, tol)
            if polished is not None:
                return _report(kernel, polished[0], u, iterations, polished[1], tol, alpha, "fb", True)

    return _report(kernel, z, u, iterations, residual, tol, alpha, "fb", False)


def peaceman_rachford(kernel: KernelBehavior, u, alpha: float = 0.0, tol: float = DEFAULT_TOL,
                      max_iter: int = DEFAULT_MAX_ITER, z0=None, relaxation: float = 0.5,
                      polish: bool = True, polish_every: int = POLISH_EVERY) -> SolveReport:
    """
    Relaxed Peaceman-Rachford splitting.

    x <- (1 - lam) x + lam R_psi R_H x with R = 2J - I, where
    J_H(x) = (I + alpha H)^-1 (x - alpha B u). lam = 1 is the plain
    iteration; the default 1/2 also converges for H that is merely
    monotone. The tracked iterate is z = J_psi(R_H x), and the exit
    residual also covers the gap between the two resolvents.

    Args:
        kernel: Kernel behavior
        u: Input vector
        alpha: Step size (0 = automatic)
        tol: Tolerance
        max_iter: Iteration cap
        z0: Warm start
        relaxation: lam in (0, 1]
        polish: Try exact branch solves along the way
        polish_every: Iterations between polish attempts

    Returns:
        SolveReport
    """
    if not 0 < relaxation <= 1:
        raise ValueError(f"relaxation must be in (0, 1], got {relaxation}")
    u, alpha, z = _prepare(kernel, u, alpha, z0)
    if kernel.n == 0:
        return _report(kernel, z, u, 0, 0.0, tol, alpha, "pr", False)

    resolve = ResolventMap(kernel.activations)
    bu = kernel.B @ u
    lu = factorize(np.eye(kernel.n) + alpha * kernel.H, "I + alpha H")
    x = z + alpha * (kernel.H @ z + bu)
    residual = np.inf
    iterations = 0

    while iterations < max_iter:
        z_lin = lu_apply(lu, x - alpha * bu)
        reflected = 2.0 * z_lin - x
        z_next = resolve(reflected, alpha)
        x = (1.0 - relaxation) * x + relaxation * (2.0 * z_next - reflected)
        residual = float(max(np.max(np.abs(z_next - z)), np.max(np.abs(z_next - z_lin))))
        z = z_next
        iterations += 1
        if not np.all(np.isfinite(x)):
            logger.warning(f"pr iterate diverged at iteration {iterations}")
            break
        if residual <= tol:
            break
        if polish and (iterations == 1 or iterations % polish_every == 0):
            polished = _polish(kernel, resolve, z, bu, alpha, tol)
            if polished is not None:
                return _report(kernel, polished[0], u, iterations, polished[1], tol, alpha, "pr", True)

    return _report(kernel, z, u, iterations, residual, tol, alpha, "pr", False)


SOLVERS = {
    "fb": forward_backward,
    "pr": peaceman_rachford,
}


def solve(kernel: KernelBehavior, u, solver: str = "fb", **kwargs) -> SolveReport:
    """Dispatch to a named solver."""
    try:
        method = SOLVERS[solver]
    except KeyError as e:
        raise ValueError(f"Unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from e
    return method(kernel, u, **kwargs)


def infer(kernel: KernelBehavior, u, solver: str = "fb", **kwargs) -> np.ndarray:
    """
    Evaluate the network output y for input u.

    Raises:
        ConvergenceError: If the solve does not converge
    """
    report = solve(kernel, u, solver, **kwargs)
    if not report.converged:
        raise ConvergenceError(
            f"{solver} solve did not converge: residual {report.residual:.3e} after {report.iterations} iterations"
        )
    return report.y
