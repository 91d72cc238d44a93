"""Random bipartite link networks with their channel gains and rates.

All powers are linear ratios to the thermal noise power, which is fixed at 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import InvalidParameterError

NOISE_POWER = 1.0


def db_to_linear(db: float) -> float:
    return float(10.0 ** (db / 10.0))


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed, a SeedSequence, a Generator or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class PowerConfig:
    """Binary power levels of the scheduling problem.

    ``p_low`` is the inactive level, ``p_high`` the active level, ``p_max``
    the cap of the continuous relaxation and ``p_threshold`` the
    quantisation level that decides activity.
    """

    p_high: float
    p_low: float
    p_max: float
    p_threshold: float

    def __post_init__(self):
        if not (0.0 <= self.p_low < self.p_threshold < self.p_high <= self.p_max):
            raise InvalidParameterError(
                "power levels must satisfy 0 <= p_low < p_threshold < p_high <= p_max, "
                f"got {self}")

    @classmethod
    def from_db(cls, p_high_db=33.0, p_low_db=13.0, p_max_db=33.0, p_threshold_db=23.0):
        return cls(p_high=db_to_linear(p_high_db), p_low=db_to_linear(p_low_db),
                   p_max=db_to_linear(p_max_db), p_threshold=db_to_linear(p_threshold_db))

    @classmethod
    def standard(cls):
        """33 dB active/max, 13 dB inactive, 23 dB threshold."""
        return cls.from_db()


@dataclass(frozen=True, eq=False)
class LinkNetwork:
    """M transmitter/receiver pairs and their M x M gain matrix.

    ``gains[i, j]`` is the path gain from Tx ``i`` to Rx ``j``; it is not
    symmetric in general. Gains are always derived from the geometry.
    """

    tx_positions: np.ndarray
    rx_positions: np.ndarray
    link_distance: float
    pathloss_exponent: float
    gains: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        tx = np.array(self.tx_positions, dtype=float).reshape(-1, 2)
        rx = np.array(self.rx_positions, dtype=float).reshape(-1, 2)
        if tx.shape != rx.shape or tx.shape[0] < 1:
            raise InvalidParameterError("need M >= 1 Tx and as many Rx positions")
        if self.link_distance <= 0:
            raise InvalidParameterError("link distance must be positive")
        own = np.linalg.norm(tx - rx, axis=1)
        if not np.allclose(own, self.link_distance, rtol=1e-9, atol=0.0):
            raise InvalidParameterError("every Tx-Rx pair must be link_distance apart")
        dist = np.linalg.norm(tx[:, None, :] - rx[None, :, :], axis=-1)
        with np.errstate(divide="ignore"):
            gains = dist ** (-float(self.pathloss_exponent))
        if not np.all(np.isfinite(gains)) or np.any(gains <= 0):
            raise InvalidParameterError("degenerate geometry: a Tx coincides with an Rx")
        for arr in (tx, rx, gains):
            arr.setflags(write=False)
        object.__setattr__(self, "tx_positions", tx)
        object.__setattr__(self, "rx_positions", rx)
        object.__setattr__(self, "gains", gains)

    @property
    def m(self) -> int:
        return self.tx_positions.shape[0]

    def __len__(self):
        return self.m

    def permuted(self, perm) -> "LinkNetwork":
        """Relabel links so that new link ``k`` is old link ``perm[k]``."""
        perm = np.asarray(perm)
        return LinkNetwork(self.tx_positions[perm], self.rx_positions[perm],
                           self.link_distance, self.pathloss_exponent)

    def to_dict(self) -> dict:
        return {"tx": self.tx_positions.tolist(), "rx": self.rx_positions.tolist(),
                "d": float(self.link_distance), "alpha": float(self.pathloss_exponent)}

    @classmethod
    def from_dict(cls, record: dict) -> "LinkNetwork":
        return cls(np.asarray(record["tx"], dtype=float), np.asarray(record["rx"], dtype=float),
                   float(record["d"]), float(record["alpha"]))


def check_subset(subset: Iterable[int], m: int) -> frozenset:
    """Validate link indices and return them as a frozenset."""
    out = frozenset(int(i) for i in subset)
    if any(i < 0 or i >= m for i in out):
        raise InvalidParameterError(f"subset {sorted(out)} not within 0..{m - 1}")
    return out


def generate_network(m: int, disc_radius: float, d: float, alpha: float, seed=None) -> LinkNetwork:
    """Drop ``m`` transmitters uniformly in a disc, each Rx ``d`` away at a random bearing.

    Receivers may land outside the disc. Draws where a transmitter lands on
    a foreign receiver are redrawn.
    """
    if m < 1:
        raise InvalidParameterError("m must be >= 1")
    if disc_radius <= 0 or d <= 0:
        raise InvalidParameterError("disc radius and link distance must be positive")
    rng = as_rng(seed)
    while True:
        r = disc_radius * np.sqrt(rng.random(m))
        phi = rng.uniform(0.0, 2 * np.pi, m)
        tx = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
        psi = rng.uniform(0.0, 2 * np.pi, m)
        rx = tx + d * np.column_stack([np.cos(psi), np.sin(psi)])
        try:
            return LinkNetwork(tx, rx, d, alpha)
        except InvalidParameterError:
            continue


def sample_network_size(mean: float, seed=None) -> int:
    """Poisson(mean) draw with zeros rejected."""
    if not mean > 0:
        raise InvalidParameterError("mean link count must be positive")
    rng = as_rng(seed)
    while True:
        m = int(rng.poisson(mean))
        if m > 0:
            return m


def sinr_all(network: LinkNetwork, powers) -> np.ndarray:
    """SINR at every receiver for the given transmit power vector."""
    p = np.asarray(powers, dtype=float)
    if p.shape != (network.m,):
        raise InvalidParameterError(f"expected {network.m} powers, got shape {p.shape}")
    if np.any(p < 0):
        raise InvalidParameterError("powers must be non-negative")
    g = network.gains
    signal = np.diag(g) * p
    # exact zero diagonal avoids cancellation when the signal dominates
    interference = p @ (g - np.diag(np.diag(g)))
    return signal / (NOISE_POWER + interference)


def sinr(network: LinkNetwork, powers, l: int) -> float:
    if not 0 <= l < network.m:
        raise IndexError(f"link index {l} out of range for M={network.m}")
    return float(sinr_all(network, powers)[l])


def power_vector(subset, m: int, cfg: PowerConfig) -> np.ndarray:
    p = np.full(m, cfg.p_low)
    idx = list(check_subset(subset, m))
    p[idx] = cfg.p_high
    return p


def rate_from_powers(network: LinkNetwork, powers) -> float:
    return float(np.sum(np.log2(1.0 + sinr_all(network, powers))))


def sum_rate(network: LinkNetwork, subset, cfg: PowerConfig) -> float:
    """Sum over all links of log2(1 + SINR); inactive links transmit at ``p_low``."""
    return rate_from_powers(network, power_vector(subset, network.m, cfg))
