"""
Distributed V2V sharing: utilities, static schedules and the contention loop.

Every vehicle ranks its (batch, transmission-count) pairs by the expected
number of peers still helped, using only its own reception counts and the
loss statistics it knows, and then broadcasts recoded packets in that order
whenever it wins the backoff contention.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import gf256
from .codec import DecoderState

KAPPA = 1e6
JITTER_MAX = 10.0


def pr_y_given_Y(y, Y, P, M: int | None = None):
    """Probability that y of the Y held packets are missing at the peer.

    Binomial(Y, P) mass at y, zero when y > Y.  ``P`` is the peer's RSU loss
    for the batch.
    """
    y = np.asarray(y)
    Y = np.asarray(Y)
    if M is not None and (np.any(y < 0) or np.any(y > M) or np.any(Y > M)):
        raise ValueError("need 0 <= y, Y <= M")
    return np.where(y <= Y, stats.binom.pmf(y, Y, P), 0.0)


def _y_pmf(Y: np.ndarray, Pq: np.ndarray, M: int) -> np.ndarray:
    """(J, M + 1) matrix of Pr(y | Y_j) for y = 0..M."""
    y = np.arange(M + 1)
    return stats.binom.pmf(y[None, :], Y[:, None], Pq[:, None])


def _e1_weights(Phat: float, M: int) -> np.ndarray:
    """(M, M + 1) weights W[t, y] = Pr[Binomial(t, 1 - Phat) <= y - 1] for 1 <= y <= t."""
    t = np.arange(M)[:, None]
    y = np.arange(M + 1)[None, :]
    w = stats.binom.cdf(y - 1, t, 1.0 - Phat)
    return np.where((y >= 1) & (y <= t), w, 0.0)


def event_probs(t: int, Y: int, Pq: float, Phat: float, M: int) -> tuple[float, float]:
    """(Pr(E1), Pr(E2)) for the (t+1)-th transmission of a batch to one peer."""
    if not 0 <= t <= M - 1:
        raise ValueError("t must lie in 0..M-1")
    pmf = _y_pmf(np.array([Y]), np.array([Pq]), M)[0]
    e1 = float(pmf @ _e1_weights(Phat, M)[t])
    e2 = float(pmf[t + 1 :].sum())
    return e1, e2


def innovation_matrix(Y: np.ndarray, Pq: np.ndarray, Phat: float, M: int) -> np.ndarray:
    """(J, M) Pr(E1) + Pr(E2) for every batch and t = 0..M-1, clipped to [0, 1]."""
    pmf = _y_pmf(np.asarray(Y), np.asarray(Pq, dtype=float), M)
    e1 = pmf @ _e1_weights(Phat, M).T
    tail = 1.0 - np.cumsum(pmf, axis=1)[:, :M]  # sum over y > t
    return np.clip(e1 + tail, 0.0, 1.0)


def pr_innovative(t: int, Y: int, Pq: float, Phat: float, M: int) -> float:
    e1, e2 = event_probs(t, Y, Pq, Phat, M)
    return min(1.0, max(0.0, e1 + e2))


def mean_utility(
    i: int,
    Y: np.ndarray,
    batch_loss: np.ndarray,
    Phat: np.ndarray,
    M: int,
    peers=None,
    link_weighted: bool = False,
) -> np.ndarray:
    """(J, M) total expected utility U-bar of vehicle i over all peers.

    ``Y`` is vehicle i's per-batch reception count, ``batch_loss`` the (k, J)
    RSU batch losses and ``Phat[i, q]`` the loss from i to q.  With
    ``link_weighted`` each peer's term is also multiplied by the chance it
    hears this transmission (an ablation; off reproduces the original rule).
    """
    k = batch_loss.shape[0]
    peers = [q for q in range(k) if q != i] if peers is None else [q for q in peers if q != i]
    out = np.zeros((len(Y), M))
    for q in peers:
        w = 1.0 - Phat[i, q] if link_weighted else 1.0
        out += w * innovation_matrix(Y, batch_loss[q], Phat[i, q], M)
    return out


def total_utility(ubar, rng: np.random.Generator, kappa: float = KAPPA) -> np.ndarray:
    """kappa * U-bar plus a uniform (0, 10) tie-breaking jitter."""
    ubar = np.asarray(ubar, dtype=float)
    jitter = rng.uniform(0.0, JITTER_MAX, size=ubar.shape)
    # the open interval excludes 0
    jitter[jitter == 0.0] = JITTER_MAX / 2
    return kappa * ubar + jitter


@dataclass
class TransmissionSchedule:
    batches: np.ndarray  # batch index per slot of this vehicle, length J * M
    utility: np.ndarray  # matching U values, descending

    def __len__(self) -> int:
        return self.batches.size


def build_schedule(
    i: int,
    Y: np.ndarray,
    batch_loss: np.ndarray,
    Phat: np.ndarray,
    M: int,
    rng: np.random.Generator,
    kappa: float = KAPPA,
    peers=None,
    link_weighted: bool = False,
) -> TransmissionSchedule:
    u = total_utility(mean_utility(i, Y, batch_loss, Phat, M, peers, link_weighted), rng, kappa)
    order = np.argsort(-u, axis=None, kind="stable")
    return TransmissionSchedule(order // M, u.ravel()[order])


def build_schedules(counts: np.ndarray, batch_loss: np.ndarray, Phat: np.ndarray, M: int, rng, kappa: float = KAPPA):
    return [build_schedule(i, counts[i], batch_loss, Phat, M, rng, kappa) for i in range(counts.shape[0])]


@dataclass(frozen=True)
class Timing:
    """Slot accounting: every slot lasts the maximum backoff plus one packet airtime."""

    dt_max: float = 50e-6
    packet_bits: int = (1500 + 16 + 4) * 8
    rate_bps: float = 6e6

    @property
    def slot(self) -> float:
        return self.dt_max + self.packet_bits / self.rate_bps


@dataclass
class SharingStats:
    tx: list = field(default_factory=list)
    batch: list = field(default_factory=list)
    accepts: list = field(default_factory=list)  # per slot: receiver ids that accepted
    decode_slot: np.ndarray = None  # 1-based slot at which each vehicle decoded; 0 if before sharing, -1 never
    slot_duration: float = 0.0
    exhausted: bool = False
    incomplete: bool = False

    @property
    def transmissions(self) -> int:
        return len(self.tx)

    @property
    def delay(self) -> float:
        return self.transmissions * self.slot_duration

    def write_trace(self, path, k: int) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "tx", "batch"] + [f"acc{i}" for i in range(k)])
            for s, (tx, b, acc) in enumerate(zip(self.tx, self.batch, self.accepts), start=1):
                bits = [0] * k
                for r in acc:
                    bits[r] = 1
                w.writerow([s, tx, b] + bits)


def _contend(n: int, dt_max: float, rng: np.random.Generator) -> int:
    """Index of the backoff winner among n contenders; exact ties are redrawn."""
    cand = np.arange(n)
    while True:
        draws = rng.uniform(0.0, dt_max, size=cand.size)
        best = draws.min()
        tied = cand[draws == best]
        if tied.size == 1:
            return int(tied[0])
        cand = tied


STALL_CHECK = 1000  # idle slots between saturation checks


def _group_saturated(states: list[DecoderState]) -> bool:
    """True when every vehicle already spans the group's union of every batch.

    Recoded packets never leave that union, so no further packet can be
    innovative to anyone.
    """
    J = len(states[0].codebook)
    M = states[0].M
    for j in range(J):
        ranks = [st.rank(j) for st in states]
        if min(ranks) == M:
            continue
        held = [st.rows(j)[:, :M] for st in states if st.rank(j)]
        if not held:
            continue
        if gf256.rank(np.vstack(held)) > min(ranks):
            return False
    return True


def run_sharing(
    states: list[DecoderState],
    schedules: list[TransmissionSchedule],
    Phat: np.ndarray,
    rng: np.random.Generator,
    timing: Timing = Timing(),
    max_slots: int | None = None,
    on_slot=None,
) -> SharingStats:
    """Contention loop until every vehicle decodes.

    Each slot, every vehicle that still has an undecoded peer draws a backoff
    in [0, dt_max]; the earliest broadcasts a recoded packet of the next batch
    in its schedule that it holds.  Receivers draw reception independently
    and keep innovative packets.  A vehicle that runs off the end of its
    schedule starts over from the top (flagged as ``exhausted``).
    ``on_slot(stats)`` runs after every slot; a true return ends the loop.
    """
    k = len(states)
    stats_ = SharingStats(slot_duration=timing.slot)
    decoded = np.array([st.complete for st in states])
    stats_.decode_slot = np.where(decoded, 0, -1)
    pos = [0] * k
    if max_slots is None:
        max_slots = 20 * states[0].F + 1000
    idle = 0
    while not decoded.all():
        if stats_.transmissions >= max_slots:
            stats_.incomplete = True
            break
        if idle >= STALL_CHECK:
            if _group_saturated(states):
                stats_.incomplete = True
                break
            idle = 0
        n_undec = int((~decoded).sum())
        contenders = [
            i for i in range(k)
            if states[i].total_rank > 0 and (n_undec > 1 or decoded[i])
        ]
        if not contenders:
            stats_.incomplete = True
            break
        tx = contenders[_contend(len(contenders), timing.dt_max, rng)]
        sched = schedules[tx].batches
        while True:
            if pos[tx] >= sched.size:
                pos[tx] = 0
                stats_.exhausted = True
            j = int(sched[pos[tx]])
            pos[tx] += 1
            if states[tx].rank(j) > 0:
                break
        pkt = states[tx].recode(j, rng)
        heard = rng.random(k) >= Phat[tx]
        acc = []
        for rx in np.flatnonzero(heard):
            if rx == tx:
                continue
            if states[rx].absorb(pkt):
                acc.append(int(rx))
                if not decoded[rx]:
                    states[rx].peel()
                    if states[rx].complete:
                        decoded[rx] = True
                        stats_.decode_slot[rx] = stats_.transmissions + 1
        idle = 0 if acc else idle + 1
        stats_.tx.append(int(tx))
        stats_.batch.append(j)
        stats_.accepts.append(acc)
        if on_slot is not None and on_slot(stats_):
            break
    return stats_
