"""Log-domain barrier solver for one successive-approximation GP step.

With ``x = log p`` and ``y = log gamma`` the subproblem

    minimise    prod_l gamma_l ** (-a_l),   a_l = g_l / (1 + g_l)
    subject to  g_l / beta <= gamma_l <= beta * g_l
                gamma_l * (1 + sum_{j != l} z_jl p_j) / (z_ll p_l) <= 1
                p_floor <= p_l <= p_max

becomes a convex program: a linear objective ``-a . y``, box constraints,
and one log-sum-exp constraint per link,

    y_l - x_l - log z_ll + log(1 + sum_{j != l} z_jl exp(x_j)) <= 0.

It is solved by a barrier method with damped Newton centering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSubproblemError, NonConvergenceError

BARRIER_GROWTH = 50.0
NEWTON_TOL = 1e-10
STAGE_TOL = 1e-3
INITIAL_T = 1.0
MAX_NEWTON_STEPS = 500
ARMIJO = 0.25
MIN_STEP = 1e-14
STALL_STEP = 1e-6


@dataclass
class _Problem:
    log_gain_own: np.ndarray   # log z_ll
    cross: np.ndarray          # z_jl with zero diagonal, rows = Tx j, cols = Rx l
    weight: np.ndarray         # a_l
    y_lo: np.ndarray
    y_hi: np.ndarray
    x_lo: float
    x_hi: float

    def __post_init__(self):
        m = self.weight.size
        self.lower = np.concatenate([np.full(m, self.x_lo), self.y_lo])
        self.upper = np.concatenate([np.full(m, self.x_hi), self.y_hi])

    def sinr_slack(self, x, y):
        """-h_l(x, y) = log SINR_l(exp x) - y_l, plus the normalised weights W."""
        contrib = self.cross * np.exp(x)[:, None]   # [j, l] = z_jl p_j
        denom = 1.0 + contrib.sum(axis=0)
        r = x + self.log_gain_own - np.log(denom) - y
        return r, (contrib / denom).T               # W[l, j]

    def barrier(self, z, t):
        m = z.size // 2
        x, y = z[:m], z[m:]
        contrib = self.cross * np.exp(x)[:, None]
        r = x + self.log_gain_own - np.log1p(contrib.sum(axis=0)) - y
        slacks = np.concatenate([r, self.upper - z, z - self.lower])
        if slacks.min() <= 0:
            return np.inf
        return -t * float(self.weight @ y) - float(np.log(slacks).sum())

    def newton_step(self, z, t):
        """Gradient and Newton direction of the barrier function at ``z``.

        The y-block of the Hessian is diagonal, so it is eliminated and only
        an M x M system in x is factorised.
        """
        m = z.size // 2
        x, y = z[:m], z[m:]
        r, W = self.sinr_slack(x, y)
        inv_r = 1.0 / r
        d2 = inv_r ** 2
        ux, lx = 1.0 / (self.x_hi - x), 1.0 / (x - self.x_lo)
        uy, ly = 1.0 / (self.y_hi - y), 1.0 / (y - self.y_lo)

        gx = W.T @ inv_r - inv_r + ux - lx
        gy = -t * self.weight + inv_r + uy - ly

        A = W - np.eye(m)                       # d h / d x
        hxx = (A.T * d2) @ A
        hxx += np.diag(W.T @ inv_r + ux ** 2 + lx ** 2) - (W.T * inv_r) @ W
        hyy = d2 + uy ** 2 + ly ** 2            # diagonal
        hxy = A.T * d2                          # d^2 / dx dy, column l scaled by d2_l

        schur = hxx - (hxy / hyy) @ hxy.T
        rhs = -gx + hxy @ (gy / hyy)
        try:
            dx = np.linalg.solve(schur, rhs)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(schur, rhs, rcond=None)[0]
        dy = -(gy + hxy.T @ dx) / hyy
        return np.concatenate([gx, gy]), np.concatenate([dx, dy])

    def max_box_step(self, z, dz):
        with np.errstate(divide="ignore", invalid="ignore"):
            room = np.where(dz > 0, (self.upper - z) / dz,
                            np.where(dz < 0, (self.lower - z) / dz, np.inf))
        return float(room.min())


def _center(problem: _Problem, z: np.ndarray, t: float, tol: float = NEWTON_TOL) -> tuple:
    f = problem.barrier(z, t)
    for it in range(MAX_NEWTON_STEPS):
        g, dz = problem.newton_step(z, t)
        decrement = -float(g @ dz)
        if decrement / 2.0 <= tol:
            return z, it
        s = min(1.0, 0.99 * problem.max_box_step(z, dz))
        while True:
            cand = z + s * dz
            fc = problem.barrier(cand, t)
            if fc <= f - ARMIJO * s * decrement:
                break
            s *= 0.5
            if s < MIN_STEP:
                return z, it
        if s < STALL_STEP or not fc < f:
            # accepted only because the decrease is below roundoff in f
            return cand, it
        z, f = cand, fc
    raise NonConvergenceError(f"Newton centering did not converge in {MAX_NEWTON_STEPS} steps")


def solve_log_domain(gains: np.ndarray, weight: np.ndarray, y_lo: np.ndarray, y_hi: np.ndarray,
                     x_lo: float, x_hi: float, x0: np.ndarray, y0: np.ndarray,
                     gap_tolerance: float) -> tuple:
    """Barrier method from the strictly feasible point ``(x0, y0)``.

    Returns the log-powers, log-SINR variables and the total Newton step
    count. Stops once the duality-gap bound ``n_constraints / t`` is below
    ``gap_tolerance``.
    """
    m = gains.shape[0]
    cross = gains - np.diag(np.diag(gains))
    problem = _Problem(np.log(np.diag(gains)), cross, np.asarray(weight, float),
                       np.asarray(y_lo, float), np.asarray(y_hi, float), x_lo, x_hi)
    z = np.concatenate([x0, y0])
    if not np.isfinite(problem.barrier(z, 1.0)):
        raise InfeasibleSubproblemError("starting point is not strictly feasible")
    n_constraints = 5 * m
    t = INITIAL_T
    steps = 0
    while True:
        final = n_constraints / t < gap_tolerance
        z, it = _center(problem, z, t, NEWTON_TOL if final else STAGE_TOL)
        steps += it
        if final:
            break
        t *= BARRIER_GROWTH
    return z[:m], z[m:], steps
