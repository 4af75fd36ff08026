"""MVDR beamforming against a spherically isotropic noise covariance built
from steering vectors by spherical quadrature, plus beampatterns and a
white-noise-gain probe.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError
from .geom import Direction


def quadrature_weight(colatitude: float, n_phi: int, n_theta: int) -> float:
    """Equiangular-grid quadrature weight at one colatitude."""
    if n_theta % 2 != 0:
        raise ValueError("the colatitude count must be even")
    if n_phi < 1:
        raise ValueError("need at least one azimuth")
    m = np.arange(n_theta // 2)
    series = np.sum(np.sin((2 * m + 1) * colatitude) / (2 * m + 1))
    return float(2.0 * math.sin(colatitude) / (n_phi * n_theta) * series)


def equiangular_grid(n_phi: int, n_theta: int) -> list[Direction]:
    """Pole-free midpoint grid of n_phi x n_theta directions."""
    if n_theta % 2 != 0:
        raise ValueError("the colatitude count must be even")
    out = []
    for t in range(n_theta):
        col = math.pi * (t + 0.5) / n_theta
        for p in range(n_phi):
            out.append(Direction(2.0 * math.pi * p / n_phi, col))
    return out


def iso_scm(svecs: np.ndarray, colatitudes, n_phi: int, n_theta: int, loading: float = 1e-6) -> np.ndarray:
    """Quadrature-weighted sum of steering-vector outer products.

    ``svecs`` is (Nd, I). Hermitian symmetry is enforced and relative
    diagonal loading added so the matrix inverts robustly.
    """
    svecs = np.asarray(svecs, dtype=complex)
    colatitudes = np.asarray(colatitudes, dtype=float).reshape(-1)
    if svecs.ndim != 2 or svecs.shape[0] != colatitudes.shape[0] or svecs.shape[0] < 1:
        raise ValueError("need (Nd, I) steering vectors with matching colatitudes")
    weights = np.array([quadrature_weight(c, n_phi, n_theta) for c in colatitudes])
    r = (svecs.T * weights) @ svecs.conj()  # sum_j w_j a_j a_j^H
    r = 0.5 * (r + r.conj().T)
    n = r.shape[0]
    return r + loading * np.real(np.trace(r)) / n * np.eye(n)


def mvdr_weights(d: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Distortionless w = R^{-1} d / (d^H R^{-1} d)."""
    d = np.asarray(d, dtype=complex).reshape(-1)
    if np.all(d == 0):
        raise ValueError("steering vector must be non-zero")
    try:
        tilde = np.linalg.solve(np.asarray(r, dtype=complex), d)
    except np.linalg.LinAlgError as exc:
        raise NumericError("noise covariance is singular; add diagonal loading") from exc
    denom = np.vdot(d, tilde)
    if denom == 0:
        raise NumericError("degenerate steering vector / covariance pair")
    return tilde / denom


def beampattern(w: np.ndarray, svecs: np.ndarray, look_vec: np.ndarray) -> np.ndarray:
    """20 log10 |w^H a(Omega)| normalized to 0 dB at the look vector."""
    w = np.asarray(w, dtype=complex).reshape(-1)
    svecs = np.atleast_2d(np.asarray(svecs, dtype=complex))
    response = np.abs(svecs @ w.conj())
    ref = abs(np.vdot(w, np.asarray(look_vec, dtype=complex)))
    floor = 1e-300
    return 20.0 * np.log10(np.maximum(response, floor) / max(ref, floor))


def white_noise_gain(w: np.ndarray, d: np.ndarray) -> float:
    """10 log10(|w^H d|^2 / (w^H w)), the array's robustness figure."""
    w = np.asarray(w, dtype=complex).reshape(-1)
    if np.all(w == 0):
        raise ValueError("weights must be non-zero")
    d = np.asarray(d, dtype=complex).reshape(-1)
    num = abs(np.vdot(w, d)) ** 2
    den = float(np.real(np.vdot(w, w)))
    return float(10.0 * math.log10(max(num, 1e-300) / den))
