"""Weighted-least-squares state estimation and chi-squared bad-data detection."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc

from .gridcore import UnobservableError

DEFAULT_CONFIDENCE = 0.95


@dataclass(frozen=True)
class EstimationResult:
    x_hat: np.ndarray
    residual: np.ndarray
    J: float
    dof: int


@dataclass(frozen=True)
class BddVerdict:
    J: float
    threshold: float
    flagged: bool
    p: float

    def __bool__(self):
        return self.flagged


def _check_inputs(H, z, sigmas):
    H = np.asarray(H, dtype=float)
    z = np.asarray(z, dtype=float)
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), (H.shape[0],))
    if z.shape[-1] != H.shape[0]:
        raise ValueError(f"measurement vector has length {z.shape[-1]}, H has {H.shape[0]} rows")
    if np.any(sigmas <= 0):
        raise ValueError("all measurement sigmas must be positive")
    return H, z, sigmas


def wls_estimate(H, z, sigmas) -> EstimationResult:
    """Closed-form WLS estimate for the linear model ``z = H x + e``.

    W = diag(sigma_i**2), so the weights applied are 1/sigma_i**2 and
    ``J = sum(r_i**2 / sigma_i**2)``.
    """
    H, z, sigmas = _check_inputs(H, z, sigmas)
    m, n = H.shape
    Hw = H / sigmas[:, None]
    if np.linalg.matrix_rank(Hw) < n:
        raise UnobservableError(f"measurement matrix has rank < {n}")
    # QR of the whitened system is the numerically stable form of the normal equations.
    x_hat = np.linalg.lstsq(Hw, z / sigmas, rcond=None)[0]
    r = z - H @ x_hat
    J = float(np.sum((r / sigmas) ** 2))
    return EstimationResult(x_hat, r, J, m - n)


def chi2_cdf(x: float, dof: int) -> float:
    if x <= 0:
        return 0.0
    return float(gammainc(dof / 2.0, x / 2.0))


def chi2_threshold(dof: int, p: float = DEFAULT_CONFIDENCE) -> float:
    """Quantile ``tau`` with ``P[chi2(dof) <= tau] = p``."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if int(dof) != dof or dof < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {dof}")
    hi = max(1.0, float(dof))
    while chi2_cdf(hi, dof) < p:
        hi *= 2.0
    return brentq(lambda t: chi2_cdf(t, dof) - p, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                  maxiter=500)


def bdd(H, z, sigmas, p: float = DEFAULT_CONFIDENCE) -> BddVerdict:
    """Chi-squared test on the WLS performance index."""
    H = np.asarray(H, dtype=float)
    m, n = H.shape
    if m <= n:
        raise ValueError("no redundancy; BDD undefined (m must exceed n)")
    est = wls_estimate(H, z, sigmas)
    tau = chi2_threshold(m - n, p)
    return BddVerdict(est.J, tau, est.J > tau, p)


class ResidualTester:
    """Batched BDD for Monte Carlo: precomputes the weighted residual projector once.

    ``J(z) = || (I - P) W^{-1/2} z ||^2`` where ``P`` projects onto the column space
    of the whitened measurement matrix.
    """

    def __init__(self, H, sigmas, p: float = DEFAULT_CONFIDENCE):
        H = np.asarray(H, dtype=float)
        m, n = H.shape
        if m <= n:
            raise ValueError("no redundancy; BDD undefined (m must exceed n)")
        self.sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), (m,)).copy()
        Hw = H / self.sigmas[:, None]
        if np.linalg.matrix_rank(Hw) < n:
            raise UnobservableError(f"measurement matrix has rank < {n}")
        Q, _ = np.linalg.qr(Hw)
        self._Q = Q
        self.p = p
        self.threshold = chi2_threshold(m - n, p)

    def J(self, Z) -> np.ndarray:
        Zw = np.atleast_2d(np.asarray(Z, dtype=float)) / self.sigmas
        r = Zw - (Zw @ self._Q) @ self._Q.T
        return np.sum(r * r, axis=1)

    def flags(self, Z) -> np.ndarray:
        return self.J(Z) > self.threshold


# -- CSV interfaces -----------------------------------------------------------

def read_measurement_csv(stream: TextIO, m: int | None = None) -> np.ndarray:
    """Read measurement snapshots, one row per snapshot.

    A first row that does not parse as numbers is treated as a header.
    """
    rows = []
    first = True
    for lineno, row in enumerate(csv.reader(stream), start=1):
        if not row or row[0].startswith("#"):
            continue
        try:
            values = [float(v) for v in row]
        except ValueError:
            if first:
                first = False
                continue
            raise ValueError(f"line {lineno}: non-numeric measurement value") from None
        first = False
        if m is not None and len(values) != m:
            raise ValueError(f"line {lineno}: expected {m} measurements, got {len(values)}")
        rows.append(values)
    if not rows:
        return np.zeros((0, m or 0))
    return np.array(rows, dtype=float)


def write_verdicts_csv(verdicts: Iterable[BddVerdict], stream: TextIO | None = None) -> str:
    buf = stream or io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["J", "tau", "flagged"])
    for v in verdicts:
        w.writerow([repr(v.J), repr(v.threshold), int(v.flagged)])
    return buf.getvalue() if stream is None else ""


def bdd_stream(H, Z: Sequence[Sequence[float]], sigmas, p: float = DEFAULT_CONFIDENCE) -> list[BddVerdict]:
    tester = ResidualTester(H, sigmas, p)
    return [BddVerdict(float(j), tester.threshold, bool(j > tester.threshold), p) for j in tester.J(Z)]
