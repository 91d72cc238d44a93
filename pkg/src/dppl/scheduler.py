"""Ground-truth schedulers for the binary-power sum-rate problem.

``gp_schedule`` is the successive-approximation geometric-programming
heuristic; ``exhaustive_schedule`` is the brute-force oracle for small
networks; ``thinning_schedule`` is the independent Bernoulli baseline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import gp
from .errors import (EmptyTrainingSetError, InfeasibleSubproblemError,
                     InstanceTooLargeError, InvalidParameterError, NonConvergenceError)
from .network import LinkNetwork, PowerConfig, as_rng, rate_from_powers, sinr_all

MAX_EXHAUSTIVE_M = 20
START_SHRINK = 1e-3


class GpConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GpSettings:
    beta: float = 1.1
    epsilon: float = 0.01
    max_outer_iters: int = 100
    inner_tolerance: float = 1e-6
    p_floor_ratio: float = 1e-6

    def __post_init__(self):
        if not self.beta > 1:
            raise InvalidParameterError("beta must exceed 1")
        if not self.epsilon > 0 or not self.inner_tolerance > 0:
            raise InvalidParameterError("tolerances must be positive")
        if self.max_outer_iters < 1:
            raise InvalidParameterError("max_outer_iters must be >= 1")


@dataclass(frozen=True)
class GpIterate:
    """Power vector and the SINR guess the next GP is linearised around."""

    powers: np.ndarray
    sinr_guess: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.powers, dtype=float)
        g = np.asarray(self.sinr_guess, dtype=float)
        if p.shape != g.shape or p.ndim != 1:
            raise InvalidParameterError("powers and SINR guess must be equal-length vectors")
        if not (np.all(np.isfinite(p)) and np.all(p > 0) and np.all(np.isfinite(g)) and np.all(g > 0)):
            raise InvalidParameterError("iterate entries must be positive and finite")
        object.__setattr__(self, "powers", p)
        object.__setattr__(self, "sinr_guess", g)


@dataclass
class GpResult:
    subset: frozenset
    powers: np.ndarray
    sinr: np.ndarray
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)


def monomial_params(gamma_hat):
    """Monomial ``k * gamma**alpha`` touching ``1 + gamma`` at ``gamma_hat``.

    Returns
    -------
    k, alpha : float or ndarray
        ``alpha = g / (1 + g)`` and ``k = g**(-alpha) * (1 + g)``. The
        monomial never exceeds ``1 + gamma`` for ``gamma > 0``.
    """
    g = np.asarray(gamma_hat, dtype=float)
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        raise InvalidParameterError("gamma_hat must be positive and finite")
    alpha = g / (1.0 + g)
    k = np.exp(np.log1p(g) - alpha * np.log(g))
    if k.ndim == 0:
        return float(k), float(alpha)
    return k, alpha


def _tighten(network: LinkNetwork, powers: np.ndarray, upper: np.ndarray, floor: float) -> np.ndarray:
    """Scale powers down until no SINR exceeds ``upper``.

    Lowering one power only raises the others' SINR, so the iteration is
    monotone and converges to the largest admissible power vector below
    ``powers``.
    """
    p = powers.copy()
    for _ in range(200):
        ratio = upper / sinr_all(network, p)
        if np.all(ratio >= 1.0 - 1e-13):
            break
        p = np.maximum(p * np.minimum(ratio, 1.0), floor)
    return p


def solve_gp_subproblem(network: LinkNetwork, iterate: GpIterate, settings: GpSettings,
                        p_max: float) -> GpIterate:
    """One GP step around ``iterate.sinr_guess`` with the trust region ``[g/beta, beta*g]``.

    The returned SINRs are the exact SINRs at the returned powers; powers
    that would overshoot the trust region are trimmed, which leaves the
    objective unchanged.
    """
    g_hat = iterate.sinr_guess
    m = network.m
    if g_hat.shape != (m,):
        raise InvalidParameterError("iterate length does not match the network")
    p_floor = settings.p_floor_ratio * p_max
    log_beta = np.log(settings.beta)

    p0 = np.clip(iterate.powers, p_floor * (1 + START_SHRINK), p_max * (1 - START_SHRINK))
    achieved = sinr_all(network, p0)
    y0 = np.log(np.minimum(achieved, g_hat)) - 0.5 * log_beta
    y_lo, y_hi = np.log(g_hat) - log_beta, np.log(g_hat) + log_beta
    if np.any(y0 <= y_lo):
        raise InfeasibleSubproblemError("current powers cannot reach the trust-region floor")

    _, alpha = monomial_params(g_hat)
    x, _, _ = gp.solve_log_domain(network.gains, np.atleast_1d(alpha), y_lo, y_hi,
                                  np.log(p_floor), np.log(p_max), np.log(p0), y0,
                                  settings.inner_tolerance)
    p = _tighten(network, np.exp(x), g_hat * settings.beta, p_floor)
    return GpIterate(p, sinr_all(network, p))


def quantize_powers(powers, cfg: PowerConfig) -> frozenset:
    """Links at or above ``p_threshold`` are active."""
    p = np.asarray(powers, dtype=float)
    return frozenset(int(i) for i in np.flatnonzero(p >= cfg.p_threshold))


def run_gp(network: LinkNetwork, cfg: PowerConfig, settings: GpSettings | None = None) -> GpResult:
    """Successive GP approximation from full power, then quantisation.

    Each trace entry records the outer iteration, the largest SINR change
    and the relaxed (continuous-power) sum-rate.
    """
    settings = settings or GpSettings()
    p = np.full(network.m, cfg.p_max)
    current = GpIterate(p, sinr_all(network, p))
    trace = []
    converged = False
    it = 0
    for it in range(1, settings.max_outer_iters + 1):
        try:
            nxt = solve_gp_subproblem(network, current, settings, cfg.p_max)
        except (InfeasibleSubproblemError, NonConvergenceError):
            # re-centre the guess on the SINRs the current powers achieve
            current = GpIterate(current.powers, sinr_all(network, current.powers))
            try:
                nxt = solve_gp_subproblem(network, current, settings, cfg.p_max)
            except (InfeasibleSubproblemError, NonConvergenceError):
                break
        change = float(np.max(np.abs(nxt.sinr_guess - current.sinr_guess)))
        trace.append({"iteration": it, "max_sinr_change": change,
                      "relaxed_rate": rate_from_powers(network, nxt.powers)})
        current = nxt
        if change <= settings.epsilon:
            converged = True
            break
    return GpResult(quantize_powers(current.powers, cfg), current.powers, current.sinr_guess,
                    converged, it, trace)


def gp_schedule(network: LinkNetwork, cfg: PowerConfig, settings: GpSettings | None = None) -> frozenset:
    """Active subset chosen by the GP heuristic.

    Warns with :class:`GpConvergenceWarning` if the outer loop hit its cap;
    the subset of the last iterate is returned either way.
    """
    result = run_gp(network, cfg, settings)
    if not result.converged:
        warnings.warn(f"GP outer loop stopped after {result.iterations} iterations "
                      "without meeting the SINR tolerance", GpConvergenceWarning, stacklevel=2)
    return result.subset


def _subset_rates(network: LinkNetwork, masks: np.ndarray, cfg: PowerConfig) -> np.ndarray:
    g = network.gains
    own = np.diag(g)
    cross = g - np.diag(own)
    P = np.where(masks, cfg.p_high, cfg.p_low)
    sinr = P * own / (1.0 + P @ cross)
    return np.log2(1.0 + sinr).sum(axis=1)


def exhaustive_schedule(network: LinkNetwork, cfg: PowerConfig) -> tuple:
    """Best subset over all 2^M binary power assignments, and its sum-rate.

    Ties (to 1e-12 relative) go to the smaller subset, then to the
    lexicographically smaller sorted index tuple.
    """
    m = network.m
    if m > MAX_EXHAUSTIVE_M:
        raise InstanceTooLargeError(f"exhaustive search limited to M <= {MAX_EXHAUSTIVE_M}, got {m}")
    bits = np.arange(m)
    codes = np.arange(1 << m)
    rates = np.empty(codes.size)
    chunk = 1 << 14
    for start in range(0, codes.size, chunk):
        block = codes[start:start + chunk]
        rates[start:start + chunk] = _subset_rates(network, (block[:, None] >> bits) & 1 == 1, cfg)
    top = rates.max()
    ties = codes[rates >= top - 1e-12 * abs(top)]
    subsets = [tuple(int(i) for i in bits[(c >> bits) & 1 == 1]) for c in ties]
    winner = min(subsets, key=lambda b: (len(b), b))
    code = sum(1 << i for i in winner)
    return frozenset(winner), float(rates[code])


def thinning_schedule(m: int, xi: float, seed=None) -> frozenset:
    """Each link active independently with probability ``xi``."""
    if not 0.0 <= xi <= 1.0:
        raise InvalidParameterError(f"xi must be a probability, got {xi}")
    rng = as_rng(seed)
    return frozenset(int(i) for i in np.flatnonzero(rng.random(m) < xi))


def estimate_xi(labels, probe: int = 0) -> float:
    """Fraction of labels in which the probe link is active.

    ``labels`` is an iterable of active subsets or of ``(network, subset)``
    training pairs.
    """
    labels = list(labels)
    if not labels:
        raise EmptyTrainingSetError("cannot estimate xi from an empty training set")
    hits = 0
    for item in labels:
        subset = item[1] if isinstance(item, tuple) else item
        hits += probe in subset
    return hits / len(labels)
