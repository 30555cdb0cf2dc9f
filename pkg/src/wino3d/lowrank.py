"""SVD of Winograd-domain weights, low-rank initialisation and spectrum reports.

The SVD is a one-sided (Hestenes) Jacobi iteration with a fixed round-robin
pair ordering, run on the ``R`` factor of a QR decomposition when the matrix is
tall. It is accurate for tiny singular values, which the rank-bound checks on
inherited weights rely on, and it is bit-reproducible.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, NumericError, RankError, ShapeError

_TOL = 1e-15
_MAX_SWEEPS = 60


@dataclass
class SvdResult:
    sigma: np.ndarray  # (k,), k = min(rows, cols), non-increasing
    U: np.ndarray      # (rows, k)
    Vt: np.ndarray     # (k, cols)
    sigma_full: np.ndarray  # (cols,), padded with zeros
    Vt_full: np.ndarray     # (cols, cols) orthogonal

    def reconstruct(self, s: int | None = None) -> np.ndarray:
        s = len(self.sigma) if s is None else min(s, len(self.sigma))
        return (self.U[:, :s] * self.sigma[:s]) @ self.Vt[:s]


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Circle-method schedule: n-1 rounds of n/2 disjoint pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _hestenes(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalise the columns of A by plane rotations; returns (A V, V)."""
    A = np.array(A, dtype=np.float64)
    n = A.shape[1]
    padded = n + (n % 2)
    if padded != n:
        A = np.hstack([A, np.zeros((A.shape[0], 1))])
    V = np.eye(padded)
    rounds = _round_robin(padded)
    # pairs of columns both at rounding-noise level are left alone
    floor = (padded * np.finfo(float).eps) ** 2 * np.einsum("ij,ij->", A, A)
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for p, q in rounds:
            ap, aq = A[:, p], A[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            scale = np.sqrt(alpha * beta)
            active = (np.abs(gamma) > _TOL * scale) & (scale > floor)
            if not active.any():
                continue
            rotated = True
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            tan = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            cos = 1.0 / np.sqrt(1.0 + tan * tan)
            sin = cos * tan
            cos = np.where(active, cos, 1.0)
            sin = np.where(active, sin, 0.0)
            A[:, p], A[:, q] = cos * ap - sin * aq, sin * ap + cos * aq
            vp, vq = V[:, p], V[:, q]
            V[:, p], V[:, q] = cos * vp - sin * vq, sin * vp + cos * vq
        if not rotated:
            break
    else:
        raise NumericError("Jacobi SVD did not converge")
    # the zero pad column has norm zero, so it is never rotated into real columns
    return A[:, :n], V[:n, :n]


def _complete_basis(U: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns not flagged ``good`` with an orthonormal completion."""
    U = U.copy()
    basis = [U[:, j] for j in np.flatnonzero(good)]
    e = 0
    for j in np.flatnonzero(~good):
        while True:
            cand = np.zeros(U.shape[0])
            cand[e % U.shape[0]] = 1.0
            e += 1
            for b in basis:
                cand -= (b @ cand) * b
            for b in basis:
                cand -= (b @ cand) * b
            nrm = np.linalg.norm(cand)
            if nrm > 1e-6:
                break
            if e > 2 * U.shape[0]:
                raise NumericError("could not complete orthonormal basis")
        U[:, j] = cand / nrm
        basis.append(U[:, j])
    return U


def svd(GW: np.ndarray) -> SvdResult:
    """Thin SVD with deterministic signs (first non-negligible entry of each v_i positive)."""
    GW = np.asarray(GW, dtype=np.float64)
    if GW.ndim != 2:
        raise ShapeError(f"svd expects a matrix, got shape {GW.shape}")
    if not np.isfinite(GW).all():
        raise NumericError("matrix has non-finite entries")
    rows, cols = GW.shape
    if rows > cols:
        Q, R = np.linalg.qr(GW)
        work = R
    else:
        Q, work = None, GW
    AV, V = _hestenes(work)
    norms = np.sqrt(np.einsum("ij,ij->j", AV, AV))
    order = np.argsort(-norms, kind="stable")
    norms, AV, V = norms[order], AV[:, order], V[:, order]
    for j in range(cols):
        v = V[:, j]
        lead = np.flatnonzero(np.abs(v) > 1e-12)
        if lead.size and v[lead[0]] < 0:
            V[:, j] = -v
            AV[:, j] = -AV[:, j]
    k = min(rows, cols)
    good = norms[:k] > max(rows, cols) * np.finfo(float).eps * norms[0]
    Uw = np.zeros((work.shape[0], k))
    Uw[:, good] = AV[:, :k][:, good] / norms[:k][good]
    Uw = _complete_basis(Uw, good)
    U = Q @ Uw if Q is not None else Uw
    Vt_full = np.ascontiguousarray(V.T)
    return SvdResult(norms[:k].copy(), U, Vt_full[:k].copy(), norms.copy(), Vt_full)


def init_lowrank(GW: np.ndarray, s: int, alpha: float = 0.1, res: SvdResult | None = None):
    """``G_r[:, i] = alpha * sigma_i * u_i`` and ``G_c[i, :] = v_i``."""
    t3 = GW.shape[1]
    if not 1 <= s <= t3:
        raise RankError(f"rank must be in [1, {t3}], got {s}")
    res = res or svd(GW)
    k = len(res.sigma)
    G_r = np.zeros((GW.shape[0], s))
    kk = min(s, k)
    G_r[:, :kk] = alpha * res.U[:, :kk] * res.sigma[:kk]
    G_c = res.Vt_full[:s].copy()
    return G_r.astype(GW.dtype), G_c.astype(GW.dtype)


@dataclass
class Spectrum:
    sigma: np.ndarray
    individual: np.ndarray
    cumulative: np.ndarray


def spectrum_report(GW: np.ndarray) -> Spectrum:
    res = svd(GW)
    sig = res.sigma_full
    total = sig.sum()
    if total == 0:
        raise DegenerateError("all singular values are zero")
    return Spectrum(sig, sig / total, np.cumsum(sig) / total)


def spectrum_csv(spectra: dict[str, Spectrum]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer", "i", "sigma", "individual_fraction", "cumulative_fraction"])
    for name, sp in spectra.items():
        for i, (s, a, c) in enumerate(zip(sp.sigma, sp.individual, sp.cumulative)):
            w.writerow([name, i, repr(float(s)), repr(float(a)), repr(float(c))])
    return buf.getvalue()


def truncated_update_eval(GW: np.ndarray, dGW: np.ndarray, s: int) -> np.ndarray:
    """``GW`` plus the top-``s`` singular triplets of the update ``dGW``."""
    if GW.shape != dGW.shape:
        raise ShapeError(f"shape mismatch {GW.shape} vs {dGW.shape}")
    if not 0 <= s <= GW.shape[1]:
        raise RankError(f"s must be in [0, {GW.shape[1]}], got {s}")
    if s == 0:
        return GW.copy()
    return GW + svd(dGW).reconstruct(s)
