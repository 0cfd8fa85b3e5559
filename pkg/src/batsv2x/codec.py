"""
BATS outer code, inner recoding and belief-propagation decoding over GF(256).

The RSU's k-th coded packet of a batch carries the unit coefficient vector
e_k, so every coefficient vector on the air has length M regardless of the
batch degree.  A packet with coefficient row ``c`` carries the payload
``c @ G.T @ S`` where ``G`` is the batch's d x M generator and ``S`` the
d contributing source packets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from . import gf256
from .errors import EmptyBatchBuffer, InconsistentState, InfeasibleLP

_MUL = gf256.MUL
_INV = gf256.INV


@dataclass
class SourceFile:
    """F packets of ``ell`` bytes each, stored as an (F, ell) uint8 array."""

    packets: np.ndarray

    def __post_init__(self):
        self.packets = np.ascontiguousarray(self.packets, dtype=np.uint8)
        if self.packets.ndim != 2 or self.packets.shape[0] < 1:
            raise ValueError("a source file needs at least one packet")

    @property
    def F(self) -> int:
        return self.packets.shape[0]

    @property
    def ell(self) -> int:
        return self.packets.shape[1]

    @classmethod
    def random(cls, F: int, ell: int, rng: np.random.Generator) -> "SourceFile":
        return cls(rng.integers(0, 256, size=(F, ell), dtype=np.uint8))

    @classmethod
    def from_bytes(cls, data: bytes, ell: int) -> "SourceFile":
        """Split ``data`` into ell-byte packets, zero-padding the last one."""
        F = max(1, -(-len(data) // ell))
        buf = np.zeros(F * ell, dtype=np.uint8)
        buf[: len(data)] = np.frombuffer(data, dtype=np.uint8)
        return cls(buf.reshape(F, ell))


@dataclass
class DegreeDistribution:
    """Probability of each batch degree; ``psi[d - 1]`` is Pr(degree = d)."""

    psi: np.ndarray

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float)
        if self.psi.ndim != 1 or self.psi.size == 0:
            raise ValueError("psi must be a non-empty vector")
        if (self.psi < 0).any() or abs(self.psi.sum() - 1.0) > 1e-9:
            raise ValueError("psi must be nonnegative and sum to 1")

    @property
    def d_max(self) -> int:
        return self.psi.size

    @classmethod
    def point_mass(cls, d: int) -> "DegreeDistribution":
        psi = np.zeros(d)
        psi[d - 1] = 1.0
        return cls(psi)

    def mean(self) -> float:
        return float(np.dot(np.arange(1, self.d_max + 1), self.psi))


@dataclass
class RankDistribution:
    """Probability ``h[r]`` that a batch ends with rank r, r = 0..M."""

    h: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        if (self.h < -1e-15).any() or abs(self.h.sum() - 1.0) > 1e-9:
            raise ValueError("h must be nonnegative and sum to 1")
        self.h = np.clip(self.h, 0.0, None)

    @property
    def M(self) -> int:
        return self.h.size - 1

    def mean(self) -> float:
        return float(np.dot(np.arange(self.M + 1), self.h))


@dataclass
class Batch:
    index: int
    contributors: np.ndarray  # distinct source indices, 0-based
    generator: np.ndarray  # (d, M) over GF(256)

    @property
    def degree(self) -> int:
        return self.contributors.size


@dataclass
class CodedPacket:
    batch_id: int
    coeff: np.ndarray
    payload: np.ndarray

    def to_bytes(self) -> bytes:
        """Wire format: batch id (uint32 LE), M coefficient bytes, payload bytes."""
        return struct.pack("<I", self.batch_id) + self.coeff.tobytes() + self.payload.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, M: int) -> "CodedPacket":
        if len(data) < 4 + M:
            raise ValueError("truncated coded packet")
        (batch_id,) = struct.unpack_from("<I", data)
        raw = np.frombuffer(data, dtype=np.uint8, offset=4)
        return cls(batch_id, raw[:M].copy(), raw[M:].copy())


def sample_degree(psi: DegreeDistribution, rng: np.random.Generator) -> int:
    return int(rng.choice(psi.d_max, p=psi.psi)) + 1


class Codebook:
    """Batch metadata shared by the encoder and every decoder.

    In a deployed BATS code the degree, contributor set and generator are
    regenerated from a seed in the packet header; the simulator shares them
    directly.
    """

    def __init__(self, F: int, M: int):
        self.F = F
        self.M = M
        self.batches: list[Batch] = []
        self.containing: list[list[int]] = [[] for _ in range(F)]

    def add(self, batch: Batch) -> None:
        if batch.index != len(self.batches):
            raise ValueError("batches must be added in index order")
        self.batches.append(batch)
        for s in batch.contributors:
            self.containing[s].append(batch.index)

    def __len__(self) -> int:
        return len(self.batches)


def encode_batch(
    file: SourceFile,
    j: int,
    psi: DegreeDistribution,
    M: int,
    rng: np.random.Generator,
) -> tuple[Batch, list[CodedPacket]]:
    """Form batch ``j`` and its M coded packets (unit coefficient vectors)."""
    if M < 1:
        raise ValueError("M must be >= 1")
    d = min(sample_degree(psi, rng), file.F)
    contributors = np.sort(rng.choice(file.F, size=d, replace=False))
    generator = gf256.random_elements(rng, (d, M))
    coded = gf256.matmul(generator.T, file.packets[contributors])
    eye = np.eye(M, dtype=np.uint8)
    packets = [CodedPacket(j, eye[k].copy(), coded[k]) for k in range(M)]
    return Batch(j, contributors, generator), packets


class BatsEncoder:
    """Rateless RSU encoder: emits batches 0, 1, 2, ... on demand."""

    def __init__(self, file: SourceFile, psi: DegreeDistribution, M: int, rng: np.random.Generator):
        self.file = file
        self.psi = psi
        self.M = M
        self.rng = rng
        self.codebook = Codebook(file.F, M)

    def next_batch(self) -> list[CodedPacket]:
        batch, packets = encode_batch(self.file, len(self.codebook), self.psi, self.M, self.rng)
        self.codebook.add(batch)
        return packets


def _combine(rows: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random nonzero GF(256) combination of ``rows``; returns (weights, row)."""
    while True:
        w = gf256.random_elements(rng, rows.shape[0])
        if w.any():
            break
    nz = w != 0
    return w, np.bitwise_xor.reduce(_MUL[w[nz][:, None], rows[nz]], axis=0)


def recode(received: list[CodedPacket], rng: np.random.Generator) -> CodedPacket:
    """Random linear combination of packets from one batch (all-zero weights redrawn)."""
    if not received:
        raise EmptyBatchBuffer("cannot recode an empty batch buffer")
    j = received[0].batch_id
    if any(p.batch_id != j for p in received):
        raise ValueError("recode inputs must share a batch id")
    M = received[0].coeff.size
    rows = np.stack([np.concatenate([p.coeff, p.payload]) for p in received])
    _, out = _combine(rows, rng)
    return CodedPacket(j, out[:M], out[M:])


class DecoderState:
    """Per-vehicle decoding state.

    Each batch keeps its innovative rows ``[coeff | payload]`` in reduced
    row-echelon form on the coefficient columns, which makes the innovation
    test a single reduction.  Decoding is incremental: ``absorb`` marks the
    batch dirty and ``bp_decode`` peels from the dirty set to a fixpoint.
    """

    def __init__(self, codebook: Codebook, payload_len: int):
        self.codebook = codebook
        self.M = codebook.M
        self.F = codebook.F
        self.payload_len = payload_len
        self._buf: dict[int, np.ndarray] = {}  # (M, M + payload) rows, first rank(j) used
        self._piv: dict[int, np.ndarray] = {}  # pivot column of each used row
        self._rank: dict[int, int] = {}
        self._unresolved: dict[int, int] = {}
        self._dirty: set[int] = set()
        self.recovered = np.zeros(self.F, dtype=bool)
        self.sources = np.zeros((self.F, payload_len), dtype=np.uint8)
        self.n_recovered = 0
        self.total_rank = 0
        # per-batch ranks when the total rank first reaches F
        self.ranks_at_rank_F: np.ndarray | None = None
        # snapshot taken the first time decoding completes
        self.rank_at_completion: int | None = None
        self.ranks_at_completion: np.ndarray | None = None

    # -- storage ----------------------------------------------------------
    def rank(self, j: int) -> int:
        return self._rank.get(j, 0)

    def ranks(self, J: int) -> np.ndarray:
        get = self._rank.get
        return np.array([get(j, 0) for j in range(J)], dtype=int)

    def rows(self, j: int) -> np.ndarray:
        """Copy of the stored ``[coeff | payload]`` rows of batch ``j``."""
        r = self._rank.get(j, 0)
        if r == 0:
            return np.zeros((0, self.M + self.payload_len), dtype=np.uint8)
        return self._buf[j][:r].copy()

    def _reduce(self, j: int, vec: np.ndarray) -> np.ndarray:
        """``vec`` minus its projection on the stored rows (same width as ``vec``)."""
        r = self._rank.get(j, 0)
        if r == 0:
            return vec
        f = vec[self._piv[j][:r]]
        nz = f.nonzero()[0]
        if nz.size == 0:
            return vec
        rows = self._buf[j]
        return vec ^ np.bitwise_xor.reduce(_MUL[f[nz, None], rows[nz, : vec.size]], axis=0)

    def is_innovative(self, p: CodedPacket) -> bool:
        if self.rank(p.batch_id) >= self.M:
            return False
        return bool(self._reduce(p.batch_id, p.coeff).any())

    def absorb(self, p: CodedPacket) -> bool:
        j = p.batch_id
        M = self.M
        r = self._rank.get(j, 0)
        if r >= M:
            return False
        # payloads are short, so one pass over the full row is as cheap as a
        # coefficient-only pre-check
        v = self._reduce(j, np.concatenate((p.coeff, p.payload)))
        coeff = v[:M]
        if not coeff.any():
            return False
        lead = int((coeff != 0).argmax())
        v = _MUL[_INV[v[lead]]][v]
        if r == 0:
            buf = self._buf[j] = np.zeros((M, v.size), dtype=np.uint8)
            piv = self._piv[j] = np.zeros(M, dtype=np.intp)
            self._unresolved[j] = int((~self.recovered[self.codebook.batches[j].contributors]).sum())
        else:
            buf = self._buf[j]
            piv = self._piv[j]
            col = buf[:r, lead]
            hit = col.nonzero()[0]
            if hit.size:
                buf[hit] ^= _MUL[col[hit, None], v[None, :]]
        buf[r] = v
        piv[r] = lead
        self._rank[j] = r + 1
        self.total_rank += 1
        if self.total_rank == self.F:
            self.ranks_at_rank_F = self.ranks(len(self.codebook))
        self._dirty.add(j)
        return True

    def recode(self, j: int, rng: np.random.Generator) -> CodedPacket | None:
        """Recode from this vehicle's rows of batch ``j``; None when it holds none."""
        r = self._rank.get(j, 0)
        if r == 0:
            return None
        _, out = _combine(self._buf[j][:r], rng)
        return CodedPacket(j, out[: self.M], out[self.M :])

    # -- decoding ---------------------------------------------------------
    @property
    def complete(self) -> bool:
        return self.n_recovered == self.F

    def _try_solve(self, j: int) -> np.ndarray:
        batch = self.codebook.batches[j]
        contrib = batch.contributors
        known = self.recovered[contrib]
        unknown = contrib[~known]
        rows = self._buf[j][: self._rank[j]]
        coeff = rows[:, : self.M]
        # A = H G^T on the unknown columns; known sources fold into the rhs
        a = gf256.matmul(coeff, batch.generator[~known].T)
        rhs = rows[:, self.M :].copy()
        if known.any():
            mixed = gf256.matmul(batch.generator[known].T, self.sources[contrib[known]])
            rhs ^= gf256.matmul(coeff, mixed)
        try:
            x = gf256.solve(a, rhs)
        except ValueError as exc:
            raise InconsistentState(f"batch {j}: {exc}") from None
        if x is None:
            return np.empty(0, dtype=int)
        self.sources[unknown] = x
        self.recovered[unknown] = True
        self.n_recovered += unknown.size
        return unknown

    def bp_decode(self) -> set[int]:
        """Peel to a fixpoint; returns the set of recovered source indices."""
        self.peel()
        return set(np.flatnonzero(self.recovered).tolist())

    def peel(self) -> int:
        """Peel to a fixpoint; returns how many sources this call recovered."""
        before = self.n_recovered
        if not self._dirty:
            return 0
        unresolved = self._unresolved
        rank = self._rank
        containing = self.codebook.containing
        queue = sorted(self._dirty)
        self._dirty.clear()
        while queue:
            j = queue.pop()
            left = unresolved.get(j, 0)
            if left == 0 or left > rank.get(j, 0):
                continue
            for s in self._try_solve(j).tolist():
                for j2 in containing[s]:
                    u = unresolved.get(j2)
                    if u is None:
                        continue
                    unresolved[j2] = u - 1
                    # only batches that just became solvable need another look
                    if j2 != j and 0 < u - 1 <= rank.get(j2, 0):
                        queue.append(j2)
        if self.complete and self.rank_at_completion is None:
            self.rank_at_completion = self.total_rank
            self.ranks_at_completion = self.ranks(len(self.codebook))
        return self.n_recovered - before


def bp_decode(state: DecoderState) -> set[int]:
    return state.bp_decode()


def decode_complete(state: DecoderState) -> bool:
    state.peel()
    return state.complete


def is_innovative(state: DecoderState, p: CodedPacket) -> bool:
    return state.is_innovative(p)


def absorb(state: DecoderState, p: CodedPacket) -> bool:
    return state.absorb(p)


# -- degree distribution design ------------------------------------------

def _candidate_degrees(M: int, d_max: int, n_tail: int = 48) -> np.ndarray:
    dense = np.arange(1, min(4 * M, d_max) + 1)
    if d_max <= 4 * M:
        return dense
    tail = np.unique(np.geomspace(4 * M + 1, d_max, n_tail).round().astype(int))
    return np.union1d(dense, tail)


def omega_matrix(h: np.ndarray, degrees: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-degree BP progress terms, shape (len(x), len(degrees)).

    Entry (x, d) is ``d * sum_r h_r * Pr[Binomial(d - 1, 1 - x) <= r - 1]``: a
    batch edge of degree d and rank r releases its source once at most r - 1
    of the other d - 1 contributors are still unknown.
    """
    out = np.zeros((x.size, degrees.size))
    for r in range(1, h.size):
        if h[r] == 0:
            continue
        out += h[r] * stats.binom.cdf(r - 1, degrees[None, :] - 1, 1.0 - x[:, None])
    return out * degrees[None, :]


def optimize_degree_distribution(
    h: RankDistribution,
    M: int,
    F: int,
    d_max: int | None = None,
    eta: float | None = None,
    ripple: float = 1.0,
    n_grid: int = 400,
    extra: tuple = (),
) -> DegreeDistribution:
    """Degree distribution maximising the BP-decodable rate for rank law ``h``.

    Solves  max theta  s.t.  Omega(x) + theta * ln((1 - x)(1 - delta(x))) >= 0
    on a grid of x in [0, 1 - eta],  sum(psi) = 1,  psi >= 0.  ``eta`` is the
    fraction of source packets BP may leave unrecovered in the asymptotic
    analysis; without a precode it defaults to 1 / (2F).  ``delta(x)`` keeps a
    finite-length ripple of about ``ripple * sqrt(F (1 - x))`` decodable
    packets in reserve (capped at half the unrecovered mass).

    ``extra`` holds further rank laws the decoder will pass through later
    (e.g. as relays keep adding rank).  Each must satisfy the same
    constraint with theta scaled by its mean rank over that of ``h``, which
    keeps BP from stalling when ranks end up higher than designed for.
    """
    hv = np.asarray(h.h, dtype=float)
    if hv.size != M + 1:
        raise ValueError("rank distribution length must be M + 1")
    if hv[1:].sum() <= 1e-12:
        raise InfeasibleLP("rank distribution has no mass above rank 0")
    if d_max is None:
        d_max = F
    if eta is None:
        eta = 1.0 / (2.0 * F)
    degrees = _candidate_degrees(M, d_max)
    x = 1.0 - np.geomspace(1.0, eta, n_grid)
    x[0] = 0.0
    n = degrees.size
    # variables: psi over candidate degrees, then theta; minimise -theta
    c = np.zeros(n + 1)
    c[-1] = -1.0
    unknown = 1.0 - x
    delta = np.minimum(ripple / np.sqrt(F * unknown), 0.5)
    decay = (np.log(unknown) + np.log1p(-delta))[:, None]
    base_mean = float(hv @ np.arange(M + 1))
    blocks = []
    for law in (hv, *(np.asarray(getattr(e, "h", e), dtype=float) for e in extra)):
        if law.size != M + 1:
            raise ValueError("rank distribution length must be M + 1")
        scale = float(law @ np.arange(M + 1)) / base_mean
        blocks.append(np.hstack([-omega_matrix(law, degrees, x), -scale * decay]))
    a_ub = np.vstack(blocks)
    b_ub = np.zeros(a_ub.shape[0])
    a_eq = np.zeros((1, n + 1))
    a_eq[0, :n] = 1.0
    # rows scaled to unit max-norm; the dual simplex occasionally stalls on
    # the steep tail of the grid, where the interior-point solver still copes
    a_ub /= np.abs(a_ub).max(axis=1, keepdims=True)
    for method in ("highs-ds", "highs-ipm"):
        res = optimize.linprog(
            c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
            bounds=[(0, None)] * (n + 1), method=method,
        )
        if res.status == 0:
            break
    if res.status != 0 or res.x[-1] <= 1e-9:
        raise InfeasibleLP(f"degree LP failed: {res.message}")
    psi = np.zeros(d_max)
    weights = np.clip(res.x[:n], 0.0, None)
    psi[degrees - 1] = weights / weights.sum()
    return DegreeDistribution(psi)
