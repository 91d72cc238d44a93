"""Conditional DPP for link scheduling: features, kernels, likelihood, training.

The kernel of a network is ``L_ij = g_i S_ij g_j`` with log-linear quality
``g_i = exp(theta . f_i)`` and a Gaussian similarity on the Tx/Rx cross
distances of links ``i`` and ``j``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dpp import DppKernel, greedy_map, sample_dpp
from .errors import (DegenerateLabelError, EmptyTrainingSetError, FeatureScalingError,
                     InvalidParameterError, NumericalDegeneracyError, PsdViolationError)
from .network import LinkNetwork, PowerConfig, as_rng, check_subset

log = logging.getLogger(__name__)

N_FEATURES = 3
MAX_EXPONENT = 700.0
SIGMA_MARGIN = 1e-9
MAX_KERNEL_ENTRY = 1e300


@dataclass(frozen=True)
class DppModel:
    """Quality weights ``theta`` and similarity bandwidth ``sigma`` (meters).

    With ``standardize`` set, features are mapped through
    ``(f - feature_means) / feature_stds`` before the dot product.
    """

    theta: np.ndarray
    sigma: float
    standardize: bool = False
    feature_means: np.ndarray | None = None
    feature_stds: np.ndarray | None = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if theta.shape != (N_FEATURES,) or not np.all(np.isfinite(theta)):
            raise InvalidParameterError(f"theta must be {N_FEATURES} finite numbers")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidParameterError("sigma must be positive and finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma", float(self.sigma))
        if self.standardize:
            if self.feature_means is None or self.feature_stds is None:
                raise InvalidParameterError("standardized model needs feature means and stds")
            means = np.asarray(self.feature_means, dtype=float)
            stds = np.asarray(self.feature_stds, dtype=float)
            if means.shape != (N_FEATURES,) or stds.shape != (N_FEATURES,) or np.any(stds <= 0):
                raise InvalidParameterError("bad feature standardization statistics")
            object.__setattr__(self, "feature_means", means)
            object.__setattr__(self, "feature_stds", stds)
        else:
            object.__setattr__(self, "feature_means", None)
            object.__setattr__(self, "feature_stds", None)

    def transform(self, features: np.ndarray) -> np.ndarray:
        if not self.standardize:
            return features
        return (features - self.feature_means) / self.feature_stds

    def with_params(self, theta, sigma) -> "DppModel":
        return DppModel(theta, sigma, self.standardize, self.feature_means, self.feature_stds)

    def to_dict(self) -> dict:
        out = {"theta": self.theta.tolist(), "sigma": self.sigma, "standardize": self.standardize}
        if self.standardize:
            out["feature_means"] = self.feature_means.tolist()
            out["feature_stds"] = self.feature_stds.tolist()
        return out

    @classmethod
    def from_dict(cls, record: dict) -> "DppModel":
        std = bool(record.get("standardize", False))
        return cls(record["theta"], record["sigma"], std,
                   record.get("feature_means") if std else None,
                   record.get("feature_stds") if std else None)


TrainingSet = Sequence[tuple]   # (LinkNetwork, active subset) pairs


# -- features and kernels ---------------------------------------------------

def feature_matrix(network: LinkNetwork, cfg: PowerConfig) -> np.ndarray:
    """Raw features of every link: own received power and the two strongest interferers."""
    g = network.gains
    m = network.m
    F = np.zeros((m, N_FEATURES))
    F[:, 0] = np.diag(g) * cfg.p_high
    if m > 1:
        interf = cfg.p_high * g.T.copy()        # row i: powers arriving at Rx i
        np.fill_diagonal(interf, -np.inf)
        top = -np.sort(-interf, axis=1)[:, :2]
        F[:, 1] = top[:, 0]
        if m > 2:
            F[:, 2] = top[:, 1]
    return F


def extract_features(network: LinkNetwork, cfg: PowerConfig, i: int) -> np.ndarray:
    if not 0 <= i < network.m:
        raise IndexError(f"link index {i} out of range for M={network.m}")
    return feature_matrix(network, cfg)[i]


def _exponent(theta: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Quality exponent theta . f, guarded against overflow of exp.

    Large negative exponents only drive the quality towards zero, which is
    harmless because likelihoods are evaluated from the exponent itself.
    """
    q = features @ theta
    if not np.all(q <= MAX_EXPONENT):
        raise FeatureScalingError(
            f"quality exponent {np.max(q):.3g} exceeds {MAX_EXPONENT}; rescale features")
    return q


def quality(model: DppModel, f) -> float:
    """exp(theta . f) for one link's raw feature vector."""
    f = model.transform(np.asarray(f, dtype=float))
    return float(np.exp(_exponent(model.theta, f)))


def cross_distances(network: LinkNetwork) -> np.ndarray:
    """C_ij = |t_i - r_j|^2 + |t_j - r_i|^2, zero on the diagonal."""
    diff = network.tx_positions[:, None, :] - network.rx_positions[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    C = d2 + d2.T
    np.fill_diagonal(C, 0.0)
    return C


def _similarity_from_distances(C: np.ndarray, sigma: float) -> np.ndarray:
    S = np.exp(-C / sigma ** 2)
    np.fill_diagonal(S, 1.0)
    return S


def similarity_matrix(network: LinkNetwork, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise InvalidParameterError("sigma must be positive")
    return _similarity_from_distances(cross_distances(network), sigma)


def similarity(network: LinkNetwork, sigma: float, i: int, j: int) -> float:
    if not sigma > 0:
        raise InvalidParameterError("sigma must be positive")
    if i == j:
        return 1.0
    t, r = network.tx_positions, network.rx_positions
    c = np.sum((t[i] - r[j]) ** 2) + np.sum((t[j] - r[i]) ** 2)
    return float(np.exp(-c / sigma ** 2))


def psd_sigma_bound(C: np.ndarray, growth: float = 1.03) -> float:
    """Largest bandwidth up to which the similarity matrix stays PSD.

    Scans upward from a bandwidth where the matrix is diagonally dominant
    (hence PSD) and bisects the first sign change of the smallest
    eigenvalue. Returns ``inf`` when no sign change occurs before the
    similarities saturate. Quality scaling is a congruence, so the same
    bound holds for the full kernel ``g S g``.
    """
    off = C[~np.eye(C.shape[0], dtype=bool)]
    if off.size == 0:
        return math.inf

    def lam_min(sigma):
        return float(np.linalg.eigvalsh(_similarity_from_distances(C, sigma))[0])

    # row sums of exp(-C / sigma^2) stay below 1/2 once every term is below 1/(2M)
    lo = math.sqrt(off.min() / math.log(2.0 * C.shape[0]))
    hi_limit = 30.0 * math.sqrt(off.max())
    if lam_min(lo) < 0:
        raise NumericalDegeneracyError("similarity matrix indefinite at a diagonally dominant bandwidth")
    hi = lo
    while True:
        hi = lo * growth
        if hi > hi_limit:
            return math.inf
        if lam_min(hi) < 0:
            break
        lo = hi
    while hi - lo > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        if lam_min(mid) < 0:
            hi = mid
        else:
            lo = mid
    return lo


def _compose(g: np.ndarray, S: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        L = g[:, None] * S * g[None, :]
    # the eigendecomposition needs a few orders of magnitude of headroom
    if not np.all(np.abs(L) <= MAX_KERNEL_ENTRY):
        raise FeatureScalingError("kernel entries overflow; quality exponents are too large")
    return L


def raw_kernel_matrix(model: DppModel, network: LinkNetwork, cfg: PowerConfig) -> np.ndarray:
    """g_i S_ij g_j before any PSD flooring."""
    g = np.exp(_exponent(model.theta, model.transform(feature_matrix(network, cfg))))
    return _compose(g, similarity_matrix(network, model.sigma))


def build_kernel(model: DppModel, network: LinkNetwork, cfg: PowerConfig) -> DppKernel:
    return DppKernel(raw_kernel_matrix(model, network, cfg))


# -- likelihood ---------------------------------------------------------------

@dataclass
class _Sample:
    features: np.ndarray      # raw, M x 3
    distances: np.ndarray     # cross distances, M x M
    label: list


def _prepare(training, cfg: PowerConfig) -> list:
    training = list(training)
    if not training:
        raise EmptyTrainingSetError("training set is empty")
    out = []
    for network, label in training:
        idx = sorted(check_subset(label, network.m))
        out.append(_Sample(feature_matrix(network, cfg), cross_distances(network), idx))
    return out


def _normalizer_factor(g: np.ndarray, S: np.ndarray):
    """Scale factors ``d`` and ``M^{-1}`` with ``L + I = D M D``.

    With ``d_i = max(g_i, 1)``, ``h = g / d`` and ``e = 1 / d^2`` the middle
    factor ``M = H S H + E`` has entries of order one, so its Cholesky
    factor gives ``log det(L + I)`` accurately even when the qualities span
    hundreds of orders of magnitude (an eigendecomposition of ``L`` would
    lose the small eigenvalues to rounding).
    """
    d = np.maximum(g, 1.0)
    h = g / d
    M = h[:, None] * S * h[None, :] + np.diag(1.0 / d ** 2)
    try:
        chol = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise PsdViolationError("kernel is indefinite at working precision") from None
    logdet = 2.0 * float(np.sum(np.log(d))) + 2.0 * float(np.sum(np.log(np.diag(chol))))
    inv_chol = np.linalg.solve(chol, np.eye(len(g)))
    return d, h, logdet, inv_chol.T @ inv_chol


def _sample_terms(model: DppModel, s: _Sample, with_grad: bool):
    """Log-likelihood of one sample and, optionally, its gradient in (theta, log sigma)."""
    F = model.transform(s.features)
    q = _exponent(model.theta, F)
    g = np.exp(q)
    S = _similarity_from_distances(s.distances, model.sigma)
    kernel = DppKernel(_compose(g, S))      # validates PSD and counts clamped eigenvalues
    Y = s.label

    if Y:
        try:
            chol = np.linalg.cholesky(S[np.ix_(Y, Y)])
        except np.linalg.LinAlgError:
            raise DegenerateLabelError(f"label {Y} has zero probability (singular similarity)") from None
        logdet_sy = 2.0 * float(np.sum(np.log(np.diag(chol))))
    else:
        logdet_sy = 0.0
    d, h, logdet_norm, m_inv = _normalizer_factor(g, S)
    value = 2.0 * float(q[Y].sum()) + logdet_sy - logdet_norm
    if not with_grad:
        return value, None, kernel.clamped

    k_diag = 1.0 - np.diag(m_inv) / d ** 2               # K = I - (L + I)^{-1}
    grad = np.empty(N_FEATURES + 1)
    grad[:N_FEATURES] = 2.0 * F[Y].sum(axis=0) - 2.0 * (k_diag @ F)

    dS = S * (2.0 * s.distances / model.sigma ** 2)     # dS / dlog(sigma), zero diagonal
    if Y:
        sub = np.linalg.solve(S[np.ix_(Y, Y)], dS[np.ix_(Y, Y)])
        num = float(np.trace(sub))
    else:
        num = 0.0
    # tr((L + I)^{-1} G dS G) = tr(M^{-1} H dS H)
    den = float(np.sum(m_inv * (h[:, None] * dS * h[None, :])))
    grad[N_FEATURES] = num - den
    return value, grad, kernel.clamped


def _evaluate(model: DppModel, samples: list, with_grad: bool):
    values, grads, clamped = [], [], 0
    for s in samples:
        v, gr, c = _sample_terms(model, s, with_grad)
        values.append(v)
        clamped += c
        if with_grad:
            grads.append(gr)
    total = math.fsum(values)
    if not with_grad:
        return total, None, clamped
    G = np.array(grads)
    return total, np.array([math.fsum(G[:, k]) for k in range(G.shape[1])]), clamped


def log_likelihood(model: DppModel, training, cfg: PowerConfig) -> float:
    """Sum over samples of log det(L_Y) - log det(L + I)."""
    return _evaluate(model, _prepare(training, cfg), False)[0]


def grad_log_likelihood(model: DppModel, training, cfg: PowerConfig) -> np.ndarray:
    """Gradient with respect to ``(theta_1, theta_2, theta_3, log sigma)``.

    Per sample, the theta part is ``2 sum_{i in Y} f_i - 2 sum_i K_ii f_i``
    and the bandwidth part is ``tr(S_Y^{-1} dS_Y) - tr((L + I)^{-1} G dS G)``
    with ``dS = S * 2C / sigma^2`` and ``G = diag(g)``.
    """
    return _evaluate(model, _prepare(training, cfg), True)[1]


# -- training -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainSettings:
    max_iters: int = 500
    grad_tol: float = 1e-5
    backtrack: float = 0.5
    armijo: float = 1e-4
    standardize: bool = False
    stall_window: int = 10
    stall_tol: float = 1e-12


@dataclass
class TrainResult:
    model: DppModel
    log_likelihood: float
    grad_norm: float
    iterations: int
    converged: bool
    initial_log_likelihood: float
    clamped_eigenvalues: int = 0
    history: list = field(default_factory=list)
    sigma_bound: float = math.inf     # largest sigma keeping every training kernel PSD
    at_sigma_bound: bool = False
    stop_reason: str = ""             # "gradient", "stalled", "line_search" or "max_iters"


def feature_statistics(training, cfg: PowerConfig) -> tuple:
    """Per-feature mean and std over all links of the training set.

    A constant feature keeps a zero mean and is scaled by its magnitude, so
    it still acts as an intercept after standardisation.
    """
    F = np.vstack([feature_matrix(net, cfg) for net, _ in training])
    means, stds = F.mean(axis=0), F.std(axis=0)
    const = stds <= 1e-12 * np.maximum(np.abs(means), 1.0)
    means = np.where(const, 0.0, means)
    stds = np.where(const, np.where(np.abs(F).max(axis=0) > 0, np.abs(F).max(axis=0), 1.0), stds)
    return means, stds


def default_init(disc_radius: float = 10.0) -> DppModel:
    return DppModel(np.zeros(N_FEATURES), disc_radius / 10.0)


def train(training, cfg: PowerConfig, init: DppModel | None = None,
          hyper: TrainSettings | None = None) -> TrainResult:
    """Maximum-likelihood fit of ``(theta, log sigma)`` by projected, preconditioned gradient ascent.

    The similarity matrix loses positive semidefiniteness above a
    bandwidth that depends only on the link geometry, so ``sigma`` is
    kept at or below the smallest such bound over the training set (with
    a relative margin of 1e-9). At that bound the likelihood is often
    still increasing in ``sigma``; convergence is then judged on the
    projected gradient, whose ``log sigma`` entry is dropped while the
    bound is active and the entry points outward.

    Steps are taken in coordinates where each theta component is scaled by
    the RMS of its feature, so that the raw features (which differ by orders
    of magnitude) start on a common footing. The ascent direction is the
    gradient preconditioned by a BFGS estimate of the inverse curvature; a
    unit step is shrunk by backtracking until the Armijo condition holds.
    Trial points where the kernel cannot be formed count as failed steps.

    With raw features the curvature in ``theta`` can be so large that the
    gain promised by a gradient of norm ``grad_tol`` is below the rounding
    noise of the likelihood. Training then stops as ``stalled`` once
    ``stall_window`` accepted steps together gain less than
    ``stall_tol * |log-likelihood|``; the result is not flagged converged.
    """
    hyper = hyper or TrainSettings()
    training = list(training)
    samples = _prepare(training, cfg)
    if init is None:
        init = default_init()
    if hyper.standardize and not init.standardize:
        means, stds = feature_statistics(training, cfg)
        init = DppModel(init.theta, init.sigma, True, means, stds)

    sigma_bound = min(psd_sigma_bound(s.distances) for s in samples)
    u_max = math.log(sigma_bound) + math.log1p(-SIGMA_MARGIN) if math.isfinite(sigma_bound) else math.inf

    F_all = np.vstack([init.transform(s.features) for s in samples])
    scale = np.sqrt(np.mean(F_all ** 2, axis=0))
    scale = np.where(scale > 0, scale, 1.0)
    metric = np.append(scale, 1.0)

    def unpack(u):
        return init.with_params(u[:N_FEATURES] / scale, math.exp(u[N_FEATURES]))

    def objective(u, with_grad):
        try:
            value, grad, clamped = _evaluate(unpack(u), samples, with_grad)
        except (FeatureScalingError, PsdViolationError, DegenerateLabelError, OverflowError):
            return -np.inf, None, 0
        if not np.isfinite(value):
            return -np.inf, None, 0
        return value, grad, clamped

    def project(u):
        u = u.copy()
        u[N_FEATURES] = min(u[N_FEATURES], u_max)
        return u

    def blocked(u, gu):
        """Coordinates held fixed: log sigma at its bound with an outward gradient."""
        mask = np.zeros(u.size, dtype=bool)
        mask[N_FEATURES] = u[N_FEATURES] >= u_max and gu[N_FEATURES] > 0
        return mask

    u = project(np.concatenate([init.theta * scale, [math.log(init.sigma)]]))
    if u[N_FEATURES] < math.log(init.sigma):
        log.info("initial sigma %g lowered to the PSD bound %g", init.sigma, math.exp(u[N_FEATURES]))
    value, grad, clamped = objective(u, True)
    if not np.isfinite(value):
        raise DegenerateLabelError("training labels have zero likelihood at the initial model")
    initial = value
    gu = grad / metric                         # gradient in scaled coordinates
    eye = np.eye(u.size)
    H = eye / max(1.0, float(np.linalg.norm(gu)))
    history = [value]
    converged = False
    reason = "max_iters"
    it = 0

    def pgrad_norm():
        return float(np.linalg.norm(np.where(blocked(u, gu), 0.0, grad)))

    for it in range(1, hyper.max_iters + 1):
        if pgrad_norm() <= hyper.grad_tol:
            converged, reason = True, "gradient"
            it -= 1
            break
        w = hyper.stall_window
        if len(history) > w and history[-1] - history[-1 - w] <= hyper.stall_tol * max(1.0, abs(value)):
            log.debug("stalled at iteration %d with gradient norm %.3e", it, pgrad_norm())
            reason = "stalled"
            it -= 1
            break
        fixed = blocked(u, gu)
        accepted = False
        for attempt in range(2):
            d = H @ np.where(fixed, 0.0, gu)
            d[fixed] = 0.0
            if not float(d @ gu) > 0:
                H = eye / max(1.0, float(np.linalg.norm(gu)))
                continue
            t = 1.0
            while t * np.linalg.norm(d) > 1e-15 * max(1.0, np.linalg.norm(u)):
                cand = project(u + t * d)
                c_value, c_grad, c_clamped = objective(cand, True)
                if np.isfinite(c_value) and c_value >= value + hyper.armijo * float(gu @ (cand - u)):
                    accepted = True
                    break
                t *= hyper.backtrack
            if accepted:
                break
            # the curvature model misled the search; restart from a scaled gradient step
            H = eye / max(1.0, float(np.linalg.norm(gu)))
        if not accepted:
            log.debug("line search failed at iteration %d", it)
            reason = "line_search"
            break
        c_gu = c_grad / metric
        s_vec, y_vec = cand - u, gu - c_gu          # y is the change in the gradient of -LL
        sy = float(s_vec @ y_vec)
        if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            if it == 1:
                H = eye * (sy / float(y_vec @ y_vec))
            rho = 1.0 / sy
            V = eye - rho * np.outer(s_vec, y_vec)
            H = V @ H @ V.T + rho * np.outer(s_vec, s_vec)
        u, value, grad, gu, clamped = cand, c_value, c_grad, c_gu, c_clamped
        history.append(value)
    else:
        converged = pgrad_norm() <= hyper.grad_tol
        if converged:
            reason = "gradient"

    return TrainResult(unpack(u), value, pgrad_norm(), it, bool(converged), initial, clamped,
                       history, sigma_bound, bool(u[N_FEATURES] >= u_max), reason)


# -- inference ----------------------------------------------------------------

def inference_kernel(model: DppModel, network: LinkNetwork, cfg: PowerConfig) -> DppKernel:
    """Kernel used at inference time.

    A bandwidth learned on one training set can exceed the PSD bound of a
    new network with tighter geometry. The kernel is then rebuilt with
    ``sigma`` lowered to that network's bound (less the training margin),
    the nearest bandwidth at which the model is a valid DPP.
    """
    try:
        return build_kernel(model, network, cfg)
    except PsdViolationError:
        bound = psd_sigma_bound(cross_distances(network))
        sigma = bound * (1.0 - SIGMA_MARGIN)
        log.info("sigma %g exceeds the PSD bound %g of this network; using %g",
                 model.sigma, bound, sigma)
        return build_kernel(model.with_params(model.theta, sigma), network, cfg)


def infer(model: DppModel, network: LinkNetwork, cfg: PowerConfig, mode: str = "map",
          seed=None) -> frozenset:
    """Estimated active subset: a DPP draw (``mode='sample'``) or greedy MAP."""
    if mode not in ("map", "sample"):
        raise InvalidParameterError(f"unknown inference mode {mode!r}")
    kernel = inference_kernel(model, network, cfg)
    if mode == "map":
        return greedy_map(kernel)
    return sample_dpp(kernel, as_rng(seed))
