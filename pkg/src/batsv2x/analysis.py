"""
Analytic tools: the V2V transmission lower bound and the bottleneck rank
distribution estimate used to design the degree distribution.

Vehicle and batch indices are 0-based throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .channel import LossProfile
from .errors import DegenerateProfile, IndexOutOfRange, NoProgress


# -- transmission lower bound ------------------------------------------------

@dataclass
class LpInstance:
    F: int
    Y_sums: np.ndarray  # per-vehicle RSU receptions, summed over batches
    Phat: np.ndarray  # Phat[q, i]: loss from q to i

    @property
    def k(self) -> int:
        return self.Y_sums.size


@dataclass
class LpSolution:
    X: np.ndarray
    objective: float
    feasible: bool


class Infeasible(Exception):
    pass


def lp_lower_bound(inst: LpInstance) -> LpSolution:
    """Fewest V2V transmissions if every packet were innovative to every peer.

    minimise sum X  s.t.  sum_{q != i} (1 - Phat[q, i]) X_q >= F - Y_i,
    0 <= X_i <= Y_i.
    """
    Y = np.asarray(inst.Y_sums, dtype=float)
    k = Y.size
    deficit = inst.F - Y
    if np.all(deficit <= 0):
        return LpSolution(np.zeros(k), 0.0, True)
    gain = 1.0 - np.asarray(inst.Phat, dtype=float).T  # gain[i, q] = 1 - Phat[q, i]
    np.fill_diagonal(gain, 0.0)
    res = optimize.linprog(
        np.ones(k), A_ub=-gain, b_ub=-deficit,
        bounds=list(zip(np.zeros(k), Y)), method="highs",
    )
    if res.status == 2:
        raise Infeasible("some vehicle's deficit exceeds what its peers can deliver")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return LpSolution(res.x, float(res.fun), True)


# -- rank distribution estimate ---------------------------------------------

def _batched(a: np.ndarray, M: int) -> np.ndarray:
    """Reshape trailing packet axis (N) into (J, M)."""
    J = a.shape[-1] // M
    return a[..., : J * M].reshape(a.shape[:-1] + (J, M))


def innovative_set_size(i: int, j: int, q: int, profile: LossProfile) -> float:
    """Expected number of batch-j packets held by i but missed by q."""
    if i == q:
        raise ValueError("i and q must differ")
    sl = slice(j * profile.M, (j + 1) * profile.M)
    return float(((1.0 - profile.P_in[i, sl]) * profile.P_in[q, sl]).sum())


def innovative_sizes(profile: LossProfile) -> np.ndarray:
    """(k, k, J) array of |I_{i,j}(q)| with zero diagonal in (i, q)."""
    P = _batched(profile.P_in, profile.M)  # (k, J, M)
    out = np.einsum("ijm,qjm->iqj", 1.0 - P, P)
    idx = np.arange(profile.k)
    out[idx, idx] = 0.0
    return out


def batch_selection_prob(profile: LossProfile, sizes: np.ndarray | None = None):
    """(k, J) probability each vehicle picks each batch for one transmission.

    Returns ``(rho, degenerate)``; a vehicle that can offer nothing gets a
    uniform row and is listed in ``degenerate``.
    """
    if sizes is None:
        sizes = innovative_sizes(profile)
    w = sizes.sum(axis=1)  # (k, J)
    tot = w.sum(axis=1, keepdims=True)
    degenerate = np.flatnonzero(tot[:, 0] <= 0).tolist()
    J = w.shape[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(tot > 0, w / tot, 1.0 / J)
    return rho, degenerate


def batch_selection_row(i: int, profile: LossProfile) -> np.ndarray:
    rho, degenerate = batch_selection_prob(profile)
    if i in degenerate:
        raise DegenerateProfile(f"vehicle {i} has nothing to offer")
    return rho[i]


def map_w(s: int, b: int, k: int | None = None) -> int:
    """Vehicle index of the s-th non-bottleneck peer (0-based)."""
    if s < 0 or (k is not None and s > k - 2):
        raise IndexOutOfRange(f"peer slot {s} out of range")
    return s if s < b else s + 1


def intersection_size(us, j: int, b: int, profile: LossProfile) -> float:
    """Expected batch-j packets held by every peer w(u) for u in ``us`` and missed by b."""
    sl = slice(j * profile.M, (j + 1) * profile.M)
    held = np.ones(profile.M)
    for u in us:
        held = held * (1.0 - profile.P_in[map_w(u, b, profile.k), sl])
    return float((held * profile.P_in[b, sl]).sum())


def innovative_content(b: int, profile: LossProfile, rho: np.ndarray) -> np.ndarray:
    """(J,) expected innovative content one transmission brings the bottleneck.

    Inclusion-exclusion over peer subsets with each intersection weighted by
    the smallest selection probability in the subset.  Sorting the peers of
    each batch by selection probability, the subsets whose minimum is peer s
    telescope to  a_s * prod_{l after s} (1 - a_l)  per packet, so the
    alternating sum costs O(k) per packet instead of O(2^k).
    """
    k = profile.k
    if k == 1:
        return np.zeros(profile.J)
    peers = np.array([map_w(s, b) for s in range(k - 1)])
    held = 1.0 - _batched(profile.P_in[peers], profile.M)  # (k-1, J, M)
    miss_b = _batched(profile.P_in[b], profile.M)  # (J, M)
    r = rho[peers]  # (k-1, J)
    order = np.argsort(r, axis=0, kind="stable")  # ascending per batch
    J = profile.J
    cols = np.arange(J)
    out = np.zeros(J)
    # walk from the largest rho down, keeping prod of (1 - a) over peers already passed
    tail = np.ones((J, profile.M))
    for pos in range(k - 2, -1, -1):
        s = order[pos, :]
        a = held[s, cols]  # (J, M)
        out += r[s, cols] * (a * tail * miss_b).sum(axis=1)
        tail *= 1.0 - a
    return out


@dataclass
class RankEstimate:
    b: int
    c: int
    p_e: np.ndarray
    F_e: np.ndarray
    f_e: np.ndarray
    clamped: int
    I: np.ndarray
    K: np.ndarray | None = None  # expected RSU receptions per batch

    def at_cutoff(self, c: float) -> np.ndarray:
        """Rank pmf the bottleneck would have after ``c`` sharing rounds."""
        p = np.minimum((self.K + c * self.I) / (len(self.F_e) - 1), 1.0)
        return _pmf_from_p(p, len(self.F_e) - 1)

    def write_csv(self, path, empirical_f=None) -> None:
        write_rank_csv(path, self.f_e, self.F_e, empirical_f)


def rank_cdf(p_e: np.ndarray, M: int) -> np.ndarray:
    """Mean over batches of the Binomial(M, p_e) CDF at r = 0..M."""
    r = np.arange(M + 1)
    return stats.binom.cdf(r[:, None], M, p_e[None, :]).mean(axis=1)


def cutoff_and_ranks(b: int, profile: LossProfile, F: int, rho: np.ndarray | None = None) -> RankEstimate:
    """Estimated rank distribution of bottleneck vehicle b at its decode time."""
    M = profile.M
    K_bj = M * (1.0 - profile.batch_loss()[b])
    delta = F - K_bj.sum()
    if rho is None:
        rho, _ = batch_selection_prob(profile)
    I = innovative_content(b, profile, rho)
    total = I.sum()
    if delta <= 0:
        c = 0
    elif total <= 0:
        raise NoProgress("peers cannot supply the bottleneck's deficit")
    else:
        c = int(math.ceil(delta / total))
    raw = (K_bj + c * I) / M
    clamped = int((raw > 1.0).sum())
    p_e = np.minimum(raw, 1.0)
    F_e = rank_cdf(p_e, M)
    F_e[-1] = 1.0
    f_e = np.diff(np.concatenate([[0.0], F_e]))
    return RankEstimate(b, c, p_e, F_e, f_e, clamped, I, K_bj)


def _pmf_from_p(p: np.ndarray, M: int) -> np.ndarray:
    F_ = rank_cdf(p, M)
    F_[-1] = 1.0
    return np.diff(np.concatenate([[0.0], F_]))


def pick_bottleneck(profile: LossProfile) -> int:
    """Vehicle with the fewest expected RSU receptions (lowest index on ties)."""
    K = (profile.M * (1.0 - profile.batch_loss())).sum(axis=1)
    return int(np.flatnonzero(K == K.min())[0])


def estimate_rank_distribution(profile: LossProfile, F: int) -> RankEstimate:
    return cutoff_and_ranks(pick_bottleneck(profile), profile, F)


def empirical_rank_cdf(ranks: np.ndarray, M: int) -> np.ndarray:
    ranks = np.asarray(ranks).ravel()
    counts = np.bincount(ranks, minlength=M + 1)[: M + 1]
    return np.cumsum(counts) / ranks.size


def write_rank_csv(path, f_e, F_e, empirical_f=None) -> None:
    M = len(f_e) - 1
    if empirical_f is None:
        emp_f = [""] * (M + 1)
        emp_F = [""] * (M + 1)
    else:
        emp_f = list(empirical_f)
        emp_F = list(np.cumsum(empirical_f))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "f_e", "F_e", "empirical_f", "empirical_F"])
        for r in range(M + 1):
            w.writerow([r, f"{f_e[r]:.10g}", f"{F_e[r]:.10g}", _fmt(emp_f[r]), _fmt(emp_F[r])])


def _fmt(x):
    return x if x == "" else f"{float(x):.10g}"
