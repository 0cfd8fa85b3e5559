"""
GF(2^8) arithmetic and dense linear algebra.

Elements are ints (or uint8 arrays) in [0, 255].  The reduction polynomial is
x^8 + x^4 + x^3 + x + 1 (0x11B).  Multiplication goes through log/antilog
tables built once at import; 0x03 generates the multiplicative group.
"""

from __future__ import annotations

import numpy as np

POLY = 0x11B
GENERATOR = 0x03


def _schoolbook_mul(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= POLY
    return r


def _build_tables():
    exp = np.zeros(512, dtype=np.int32)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = _schoolbook_mul(x, GENERATOR)
    exp[255:510] = exp[:255]
    mul = np.zeros((256, 256), dtype=np.uint8)
    nz = np.arange(1, 256)
    mul[1:, 1:] = exp[log[nz][:, None] + log[nz][None, :]]
    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[255 - log[nz]]
    return exp, log, mul, inv


EXP, LOG, MUL, INV = _build_tables()


def add(a: int, b: int) -> int:
    return a ^ b


def mul(a: int, b: int) -> int:
    return int(MUL[a, b])


def inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return int(INV[a])


def scale(c: int, row: np.ndarray) -> np.ndarray:
    """Multiply every entry of ``row`` by the scalar ``c``."""
    return MUL[c][row]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over GF(256) for uint8 arrays of shape (r, m) @ (m, c)."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.ndim == 1:
        return matmul(a[None, :], b)[0]
    r, m = a.shape
    c = b.shape[1]
    out = np.zeros((r, c), dtype=np.uint8)
    if r == 0 or m == 0 or c == 0:
        return out
    # products of a chunk of the inner dimension at once, then XOR them down
    step = max(1, _CHUNK // (r * c))
    for k0 in range(0, m, step):
        prod = MUL[a[:, k0 : k0 + step, None], b[None, k0 : k0 + step, :]]
        out ^= np.bitwise_xor.reduce(prod, axis=1)
    return out


_CHUNK = 1 << 20


def row_reduce(m: np.ndarray, ncols: int | None = None) -> tuple[np.ndarray, list[int]]:
    """Reduced row-echelon form over GF(256).

    Pivots are searched only in the first ``ncols`` columns (all by default);
    row operations always act on the full width, so augmented systems work.

    Returns:
        (R, pivots) with R the same shape as ``m`` and ``len(pivots)`` the rank.
    """
    r = np.array(m, dtype=np.uint8, copy=True)
    if r.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    rows, cols = r.shape
    if ncols is None:
        ncols = cols
    pivots: list[int] = []
    prow = 0
    for col in range(ncols):
        if prow == rows:
            break
        nz = np.flatnonzero(r[prow:, col])
        if nz.size == 0:
            continue
        found = prow + int(nz[0])
        if found != prow:
            r[[prow, found]] = r[[found, prow]]
        r[prow] = MUL[INV[r[prow, col]]][r[prow]]
        others = np.flatnonzero(r[:, col])
        others = others[others != prow]
        if others.size:
            r[others] ^= MUL[r[others, col][:, None], r[prow][None, :]]
        pivots.append(col)
        prow += 1
    return r, pivots


def rank(m: np.ndarray) -> int:
    m = np.asarray(m, dtype=np.uint8)
    if m.size == 0:
        return 0
    return len(row_reduce(m)[1])


def solve(a: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    """Solve ``a @ x = b`` for full-column-rank ``a``; None if rank-deficient.

    ``b`` may hold several right-hand sides as columns.  Raises ValueError if
    the system is inconsistent.
    """
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    n = a.shape[1]
    r, pivots = row_reduce(np.hstack([a, b]), ncols=n)
    if len(pivots) < n:
        return None
    if r[n:, n:].any():
        raise ValueError("inconsistent linear system")
    return r[:n, n:]


def random_elements(rng: np.random.Generator, shape, nonzero: bool = False) -> np.ndarray:
    if nonzero:
        return rng.integers(1, 256, size=shape, dtype=np.uint8)
    return rng.integers(0, 256, size=shape, dtype=np.uint8)
