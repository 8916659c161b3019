"""Greedy cross approximation, SVD recompression and factored matrices.

The engine never forms a dense residual: every entry, row or column of the
residual is computed as the oracle value minus the current factored
reconstruction.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla


class ACAError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


class EntryOracle:
    """Matrix accessed only through entries, rows and columns.

    Subclasses implement :meth:`entries` (pairwise evaluation) and usually
    override :meth:`row` / :meth:`col` with faster vectorized versions.
    """

    shape: tuple[int, int]

    def entries(self, rows, cols) -> np.ndarray:
        raise NotImplementedError

    def entry(self, i: int, j: int) -> float:
        return float(self.entries(np.array([i]), np.array([j]))[0])

    def row(self, i: int) -> np.ndarray:
        nv = self.shape[1]
        return self.entries(np.full(nv, i), np.arange(nv))

    def col(self, j: int) -> np.ndarray:
        nx = self.shape[0]
        return self.entries(np.arange(nx), np.full(nx, j))


class DenseOracle(EntryOracle):
    def __init__(self, a):
        self.a = np.asarray(a, dtype=float)
        self.shape = self.a.shape

    def entries(self, rows, cols):
        return self.a[np.asarray(rows), np.asarray(cols)]

    def row(self, i):
        return self.a[i].copy()

    def col(self, j):
        return self.a[:, j].copy()


class FunctionOracle(EntryOracle):
    """Oracle from a vectorized callable ``func(rows, cols) -> values``."""

    def __init__(self, func, shape):
        self.func = func
        self.shape = tuple(shape)

    def entries(self, rows, cols):
        return np.asarray(self.func(np.asarray(rows), np.asarray(cols)), dtype=float)


@dataclass
class RankDiagnostics:
    cur_rank: int = 0
    svd_rank: int = 0
    pivots: list = field(default_factory=list)
    timestamps: list = field(default_factory=list)
    last_term_norm: float = 0.0
    approx_norm: float = 0.0
    tolerance_stop: bool = False
    rank_cap_reached: bool = False
    stalled: bool = False


@dataclass
class CurFactors:
    """Cross approximation ``A_k = col_factors @ diag(1/pivots) @ row_factors``."""

    rows: np.ndarray
    cols: np.ndarray
    col_factors: np.ndarray   # nx x k
    row_factors: np.ndarray   # k x nv
    pivots: np.ndarray
    shape: tuple[int, int]
    diagnostics: RankDiagnostics = field(default_factory=RankDiagnostics)

    @property
    def rank(self) -> int:
        return len(self.pivots)

    def to_dense(self) -> np.ndarray:
        if self.rank == 0:
            return np.zeros(self.shape)
        return (self.col_factors / self.pivots) @ self.row_factors


@dataclass(frozen=True)
class SvdMatrix:
    """Factored matrix ``u @ diag(sigma) @ v.T`` with orthonormal u, v."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def r(self) -> int:
        return len(self.sigma)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.u.shape[0], self.v.shape[0])

    @classmethod
    def zeros(cls, nx: int, nv: int) -> "SvdMatrix":
        return cls(np.zeros((nx, 0)), np.zeros(0), np.zeros((nv, 0)))

    def to_dense(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T

    def row(self, i: int) -> np.ndarray:
        return self.v @ (self.sigma * self.u[i])

    def col(self, j: int) -> np.ndarray:
        return self.u @ (self.sigma * self.v[j])

    def scaled(self, alpha: float) -> "SvdMatrix":
        """Multiply by a scalar; a negative factor flips the sign of ``u``."""
        if alpha == 0:
            return SvdMatrix.zeros(*self.shape)
        sign = 1.0 if alpha > 0 else -1.0
        return SvdMatrix(sign * self.u, abs(alpha) * self.sigma, self.v)

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.sigma))


def evaluate_entries(m: SvdMatrix, pairs) -> np.ndarray:
    """Entries ``sum_l u[i,l] sigma[l] v[j,l]`` for each (i, j) pair."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros(0)
    nx, nv = m.shape
    i, j = pairs[:, 0], pairs[:, 1]
    if i.min() < 0 or j.min() < 0 or i.max() >= nx or j.max() >= nv:
        raise IndexError(f"entry index out of range for shape {m.shape}")
    return np.einsum("kl,l,kl->k", m.u[i], m.sigma, m.v[j])


def aca_decompose(oracle: EntryOracle, eps_c: float, max_rank: int,
                  rng_seed=0, n_candidates: int = 12) -> CurFactors:
    """Adaptive cross approximation with random candidates and greedy refinement.

    Each step samples ``n_candidates`` unselected (row, col) pairs, starts at
    the largest residual among them, then takes the largest residual entry in
    that column and finally in the chosen row. The rank-one term is accepted
    unless its Frobenius norm is below ``eps_c`` times the norm of the current
    approximation, in which case the iteration stops without it.
    """
    nx, nv = oracle.shape
    if nx < 1 or nv < 1:
        raise ShapeError("oracle must have at least one entry")
    if not 0 < eps_c < 1:
        raise ValueError("eps_c must lie in (0, 1)")
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    kmax = min(int(max_rank), nx, nv)
    rng = np.random.default_rng(rng_seed)
    diag = RankDiagnostics()

    C = np.empty((nx, kmax))
    R = np.empty((kmax, nv))
    piv = np.empty(kmax)
    rows, cols = [], []
    row_free = np.ones(nx, dtype=bool)
    col_free = np.ones(nv, dtype=bool)
    norm2 = 0.0
    k = 0
    t0 = time.perf_counter()

    while k < kmax:
        fr = np.flatnonzero(row_free)
        fc = np.flatnonzero(col_free)
        best = None
        for _ in range(2):
            ci = fr[rng.integers(0, len(fr), n_candidates)]
            cj = fc[rng.integers(0, len(fc), n_candidates)]
            vals = oracle.entries(ci, cj)
            if k:
                vals = vals - np.einsum("kl,lk->k", C[ci, :k] / piv[:k], R[:k, cj])
            m = int(np.argmax(np.abs(vals)))
            if abs(vals[m]) > 0:
                best = (ci[m], cj[m])
                break
        if best is None:
            diag.stalled = True
            break
        jstar = best[1]

        col = np.array(oracle.col(jstar), dtype=float)
        if k:
            col -= C[:, :k] @ (R[:k, jstar] / piv[:k])
        ik = int(np.argmax(np.where(row_free, np.abs(col), -1.0)))
        row = np.array(oracle.row(ik), dtype=float)
        if k:
            row -= (C[ik, :k] / piv[:k]) @ R[:k]
        jk = int(np.argmax(np.where(col_free, np.abs(row), -1.0)))
        pivot = row[jk]
        if abs(pivot) < 1e-300:
            if k == 0:
                raise ACAError(f"degenerate pivot {pivot!r} at ({ik}, {jk})")
            diag.stalled = True
            break
        if jk != jstar:
            col = np.array(oracle.col(jk), dtype=float)
            if k:
                col -= C[:, :k] @ (R[:k, jk] / piv[:k])

        cn2 = col @ col
        rn2 = row @ row
        term2 = cn2 * rn2 / pivot**2
        cross = 0.0
        if k:
            cross = 2.0 * np.sum((C[:, :k].T @ col) * (R[:k] @ row) / (piv[:k] * pivot))
        new_norm2 = max(norm2 + cross + term2, 0.0)
        diag.last_term_norm = float(np.sqrt(term2))
        if k and term2 <= eps_c**2 * new_norm2:
            diag.tolerance_stop = True
            break

        C[:, k] = col
        R[k] = row
        piv[k] = pivot
        norm2 = new_norm2
        rows.append(ik)
        cols.append(jk)
        row_free[ik] = False
        col_free[jk] = False
        diag.pivots.append(float(pivot))
        diag.timestamps.append(time.perf_counter() - t0)
        k += 1
    else:
        diag.rank_cap_reached = True

    diag.cur_rank = k
    diag.approx_norm = float(np.sqrt(norm2))
    return CurFactors(np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                      C[:, :k].copy(), R[:k].copy(), piv[:k].copy(), (nx, nv), diag)


def _truncate_core(qa, core, qb, eps_s, floor=0.0) -> SvdMatrix:
    ut, s, vt = np.linalg.svd(core)
    if len(s) == 0 or s[0] <= floor:
        return SvdMatrix.zeros(qa.shape[0], qb.shape[0])
    r = int(np.count_nonzero((s >= eps_s * s[0]) & (s > floor)))
    return SvdMatrix(qa @ ut[:, :r], s[:r].copy(), qb @ vt[:r].T)


def svd_truncate(cur: CurFactors, eps_s: float) -> SvdMatrix:
    """QR both factor blocks, SVD the small core, drop sigma < eps_s * sigma_1."""
    if not 0 < eps_s < 1:
        raise ValueError("eps_s must lie in (0, 1)")
    nx, nv = cur.shape
    if cur.rank == 0:
        cur.diagnostics.svd_rank = 0
        return SvdMatrix.zeros(nx, nv)
    q1, r1 = sla.qr(cur.col_factors, mode="economic")
    q2, r2 = sla.qr(cur.row_factors.T, mode="economic")
    out = _truncate_core(q1, (r1 / cur.pivots) @ r2.T, q2, eps_s)
    cur.diagnostics.svd_rank = out.r
    return out


def add_lowrank(a: SvdMatrix, b: SvdMatrix, eps_s: float) -> SvdMatrix:
    """Recompressed sum ``a + b``.

    Singular values below roundoff of the inputs' scale are dropped as
    well, so exact cancellation gives rank 0.
    """
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.r + b.r == 0:
        return SvdMatrix.zeros(*a.shape)
    ua = np.hstack([a.u * a.sigma, b.u * b.sigma])
    va = np.hstack([a.v, b.v])
    q1, r1 = sla.qr(ua, mode="economic")
    q2, r2 = sla.qr(va, mode="economic")
    scale = (a.sigma[0] if a.r else 0.0) + (b.sigma[0] if b.r else 0.0)
    floor = 64 * np.finfo(float).eps * scale
    return _truncate_core(q1, r1 @ r2.T, q2, eps_s, floor)


def compress(oracle: EntryOracle, eps_c: float, eps_s: float, max_rank: int,
             rng_seed=0, n_candidates: int = 12) -> tuple[SvdMatrix, RankDiagnostics]:
    """ACA followed by SVD truncation; returns the matrix and its rank data."""
    cur = aca_decompose(oracle, eps_c, max_rank, rng_seed, n_candidates)
    return svd_truncate(cur, eps_s), cur.diagnostics


_HEADER = struct.Struct("<qqq")


def save_svd(m: SvdMatrix, path) -> None:
    """Little-endian dump: int64 nx, nv, r, then U, sigma, V in column-major order."""
    nx, nv = m.shape
    with open(Path(path), "wb") as fh:
        fh.write(_HEADER.pack(nx, nv, m.r))
        for arr in (m.u, m.sigma, m.v):
            fh.write(np.asarray(arr, dtype="<f8").ravel(order="F").tobytes())


def load_svd(path) -> SvdMatrix:
    data = Path(path).read_bytes()
    nx, nv, r = _HEADER.unpack_from(data)
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    expected = nx * r + r + nv * r
    if body.size != expected:
        raise ValueError(f"{path}: expected {expected} float64 values, found {body.size}")
    u = body[:nx * r].reshape((nx, r), order="F")
    s = body[nx * r:nx * r + r]
    v = body[nx * r + r:].reshape((nv, r), order="F")
    return SvdMatrix(u.astype(float), s.astype(float), v.astype(float))
