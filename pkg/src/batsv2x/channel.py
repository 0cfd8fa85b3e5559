"""
Dual-slope path loss, Nakagami-m outage and packet-loss probabilities.

The reference gain is free-space loss at d0 = 10 m for the carrier
frequency; the mean fading power is normalised to 1.  All functions accept
scalars or numpy arrays of distances.  An infinite distance means the
receiver is out of range and is lost with probability 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DistanceTooSmall, IndexOutOfRange

SPEED_OF_LIGHT = 299_792_458.0


def db_to_linear(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    Pt_dBm: float = 20.0
    Pt_prime_dBm: float = 20.0
    PN_dBm: float = -89.0
    gamma_th_dB: float = 10.0
    f_Hz: float = 5.9e9
    d0: float = 10.0
    dc: float = 80.0
    beta1: float = 2.3
    beta2: float = 2.7
    m1: float = 1.2
    m2_near: float = 1.2
    m2_far: float = 0.75
    v2v_break_dist: float = 90.0
    Omega: float = 1.0

    def __post_init__(self):
        for name in ("Pt_dBm", "Pt_prime_dBm", "PN_dBm", "gamma_th_dB"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.beta1 <= 0 or self.beta2 <= 0:
            raise ValueError("path-loss exponents must be positive")
        if min(self.m1, self.m2_near, self.m2_far) < 0.5:
            raise ValueError("Nakagami shapes must be >= 0.5")
        if self.Omega <= 0:
            raise ValueError("Omega must be positive")
        if not 0 < self.d0 < self.dc:
            raise ValueError("need 0 < d0 < dc")

    @property
    def PL0_dB(self) -> float:
        """Free-space loss at the reference distance d0."""
        return 20.0 * np.log10(4.0 * np.pi * self.d0 * self.f_Hz / SPEED_OF_LIGHT)


def path_loss_db(d, p: ChannelParams):
    d = np.asarray(d, dtype=float)
    if np.any(d <= p.d0):
        raise DistanceTooSmall(f"distance must exceed d0 = {p.d0} m")
    near = p.PL0_dB + 10.0 * p.beta1 * np.log10(d / p.d0)
    far = (
        p.PL0_dB
        + 10.0 * p.beta1 * np.log10(p.dc / p.d0)
        + 10.0 * p.beta2 * np.log10(d / p.dc)
    )
    out = np.where(d <= p.dc, near, far)
    return out if out.ndim else float(out)


def path_gain(d, p: ChannelParams):
    """Linear large-scale power gain 10^(-PL/10); zero for infinite d."""
    return db_to_linear(-np.asarray(path_loss_db(d, p)))


def snr_outage_prob(d, Pt_dBm: float, m_shape, p: ChannelParams):
    """Probability the instantaneous SNR falls below the threshold.

    With gamma-distributed power gain g (shape m, mean Omega) the outage is
    Pr[g < A] = P(m, m A / Omega), the regularised lower incomplete gamma,
    where A = gamma_th * PN / (Pt * path_gain(d)).
    """
    gain = path_gain(d, p)
    with np.errstate(divide="ignore"):
        a = db_to_linear(p.gamma_th_dB + p.PN_dBm - Pt_dBm) / gain
    out = special.gammainc(m_shape, np.asarray(m_shape) * a / p.Omega)
    return out if np.ndim(out) else float(out)


def i2v_loss_prob(d, p: ChannelParams):
    return snr_outage_prob(d, p.Pt_dBm, p.m1, p)


def v2v_shape(dist, p: ChannelParams):
    return np.where(np.asarray(dist) < p.v2v_break_dist, p.m2_near, p.m2_far)


def v2v_loss_prob(avg_dist, p: ChannelParams):
    """V2V packet loss at average separation ``avg_dist`` (shape switches at 90 m)."""
    return snr_outage_prob(avg_dist, p.Pt_prime_dBm, v2v_shape(avg_dist, p), p)


def v2v_loss_matrix(dist: np.ndarray, p: ChannelParams) -> np.ndarray:
    """k x k matrix of V2V loss probabilities from a pairwise distance matrix.

    The diagonal is unused and set to 1 (a vehicle never receives itself).
    """
    dist = np.asarray(dist, dtype=float)
    k = dist.shape[0]
    out = np.ones((k, k))
    off = ~np.eye(k, dtype=bool)
    if off.any():
        out[off] = v2v_loss_prob(dist[off], p)
    return out


def sample_reception(loss_p, rng: np.random.Generator, size=None):
    """Bernoulli(1 - loss_p) reception draw(s)."""
    return rng.random(size if size is not None else np.shape(loss_p)) >= np.asarray(loss_p)


@dataclass
class LossProfile:
    """RSU per-packet loss ``P_in`` (k x N) and V2V loss ``Phat`` (k x k)."""

    P_in: np.ndarray
    Phat: np.ndarray
    M: int

    @property
    def k(self) -> int:
        return self.P_in.shape[0]

    @property
    def N(self) -> int:
        return self.P_in.shape[1]

    @property
    def J(self) -> int:
        return self.N // self.M

    def batch_loss(self) -> np.ndarray:
        """(k, J) mean loss per vehicle per batch."""
        return self.P_in[:, : self.J * self.M].reshape(self.k, self.J, self.M).mean(axis=2)

    def group_loss(self) -> np.ndarray:
        """(J,) probability a packet of each batch reaches no vehicle, batch-averaged."""
        prod = self.P_in[:, : self.J * self.M].prod(axis=0)
        return prod.reshape(self.J, self.M).mean(axis=1)

    def subset(self, keep) -> "LossProfile":
        keep = np.asarray(keep)
        return LossProfile(self.P_in[keep], self.Phat[np.ix_(keep, keep)], self.M)


def _batch_slice(j: int, profile: LossProfile) -> slice:
    if not 0 <= j < profile.J:
        raise IndexOutOfRange(f"batch {j} outside 0..{profile.J - 1}")
    return slice(j * profile.M, (j + 1) * profile.M)


def batch_loss_prob(j: int, i: int, profile: LossProfile) -> float:
    return float(profile.P_in[i, _batch_slice(j, profile)].mean())


def group_loss_prob(j: int, profile: LossProfile, k: int | None = None) -> float:
    """Loss of batch ``j`` at the whole group (first ``k`` vehicles by default all)."""
    k = profile.k if k is None else k
    return float(profile.P_in[:k, _batch_slice(j, profile)].prod(axis=0).mean())
