"""Associated Legendre functions, complex spherical harmonics, SH spectra
and the SH ridge-regression interpolator.

The harmonics follow the standard orthonormal convention
Y_l^m = (-1)^m N_lm P_l^m(cos colat) e^{j m az} for m >= 0 together with
Y_l^{-m} = (-1)^m conj(Y_l^m), which keeps the Legendre recurrences free of
the Condon-Shortley factor (it is applied exactly once here).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, SpatialAliasingWarning
from .geom import Direction


@dataclass
class ShCoefficients:
    """Order-L complex coefficient vector in l-major (l, m) ordering."""

    order: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex).reshape(-1)
        n = (self.order + 1) ** 2
        if self.order < 0 or self.values.shape[0] != n:
            raise ValueError(f"expected {n} coefficients for order {self.order}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("coefficients must be finite")


def lm_index(l: int, m: int) -> int:
    """Position of degree l, order m in the l-major layout."""
    if abs(m) > l:
        raise ValueError(f"|m|={abs(m)} exceeds l={l}")
    return l * l + l + m


def assoc_legendre(l: int, m: int, x):
    """P_l^m(x) without the Condon-Shortley factor, by upward recurrence."""
    if not (0 <= m <= l):
        raise ValueError(f"need 0 <= m <= l, got l={l}, m={m}")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("argument outside [-1, 1]")
    # P_m^m = (2m-1)!! (1-x^2)^{m/2}, then climb in degree
    pmm = np.ones_like(x)
    if m > 0:
        somx2 = np.sqrt(np.maximum(0.0, (1.0 - x) * (1.0 + x)))
        fact = 1.0
        for _ in range(m):
            pmm = pmm * fact * somx2
            fact += 2.0
    if l == m:
        return pmm if pmm.ndim else float(pmm)
    pmmp1 = x * (2.0 * m + 1.0) * pmm
    if l == m + 1:
        return pmmp1 if pmmp1.ndim else float(pmmp1)
    for ll in range(m + 2, l + 1):
        pll = (x * (2.0 * ll - 1.0) * pmmp1 - (ll + m - 1.0) * pmm) / (ll - m)
        pmm, pmmp1 = pmmp1, pll
    return pmmp1 if pmmp1.ndim else float(pmmp1)


def _legendre_table(L: int, x: np.ndarray) -> np.ndarray:
    """All P_l^m(x) for 0 <= m <= l <= L; shape (L+1, L+1, len(x))."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((L + 1, L + 1) + x.shape)
    somx2 = np.sqrt(np.maximum(0.0, (1.0 - x) * (1.0 + x)))
    pmm = np.ones_like(x)
    for m in range(L + 1):
        out[m, m] = pmm
        if m < L:
            out[m + 1, m] = x * (2.0 * m + 1.0) * pmm
            for l in range(m + 2, L + 1):
                out[l, m] = (
                    x * (2.0 * l - 1.0) * out[l - 1, m] - (l + m - 1.0) * out[l - 2, m]
                ) / (l - m)
        pmm = pmm * (2.0 * m + 1.0) * somx2
    return out


def sh_basis_matrix(L: int, dirs) -> np.ndarray:
    """(N, (L+1)^2) matrix of Y_l^m evaluated at each direction."""
    dirs = list(dirs)
    az = np.array([d.azimuth for d in dirs])
    col = np.array([d.colatitude for d in dirs])
    return sh_basis_angles(L, az, col)


def sh_basis_angles(L: int, az: np.ndarray, col: np.ndarray) -> np.ndarray:
    """Basis matrix from azimuth/colatitude arrays (radians)."""
    if L < 0:
        raise ValueError("order must be non-negative")
    az = np.asarray(az, dtype=float).reshape(-1)
    col = np.asarray(col, dtype=float).reshape(-1)
    p = _legendre_table(L, np.cos(col))
    out = np.zeros((az.shape[0], (L + 1) ** 2), dtype=complex)
    for l in range(L + 1):
        for m in range(0, l + 1):
            norm = math.sqrt(
                (2.0 * l + 1.0) / (4.0 * math.pi) * math.factorial(l - m) / math.factorial(l + m)
            )
            base = norm * p[l, m] * np.exp(1j * m * az)
            out[:, lm_index(l, m)] = ((-1.0) ** m) * base
            if m > 0:
                out[:, lm_index(l, -m)] = np.conj(base)
    return out


def sh_basis(L: int, d: Direction) -> np.ndarray:
    """Complex basis vector of length (L+1)^2 at one direction."""
    return sh_basis_matrix(L, [d])[0]


def sh_eval(c: ShCoefficients, d: Direction) -> complex:
    """Evaluate the expansion sum_lm c_lm Y_l^m(d)."""
    return complex(np.dot(c.values, sh_basis(c.order, d)))


def sh_spectrum(c: ShCoefficients) -> np.ndarray:
    """Per-degree root mean energy, length L+1, non-negative."""
    out = np.empty(c.order + 1)
    for l in range(c.order + 1):
        block = c.values[l * l : (l + 1) * (l + 1)]
        out[l] = math.sqrt(float(np.sum(np.abs(block) ** 2)) / (2 * l + 1))
    return out


def sh_ridge_fit(dirs, values, L: int, lam: float) -> ShCoefficients:
    """Regularized least-squares SH coefficients via Hermitian normal equations."""
    dirs = list(dirs)
    values = np.asarray(values, dtype=complex).reshape(-1)
    if len(dirs) == 0 or len(dirs) != values.shape[0]:
        raise ValueError("dirs and values must be non-empty and matched")
    if lam < 0:
        raise ValueError("ridge parameter must be non-negative")
    n_coeff = (L + 1) ** 2
    if len(dirs) < n_coeff:
        warnings.warn(
            f"{len(dirs)} directions resolve fewer than (L+1)^2={n_coeff} coefficients; "
            "expect spatial aliasing",
            SpatialAliasingWarning,
        )
    psi = sh_basis_matrix(L, dirs)
    a = psi.conj().T @ psi + lam * np.eye(n_coeff)
    b = psi.conj().T @ values
    try:
        lo = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"normal equations are rank deficient at lambda={lam!r}; "
            "increase lambda or supply more directions"
        ) from exc
    coeffs = _cho_solve(lo, b)
    return ShCoefficients(L, coeffs)


def _cho_solve(lo: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.linalg.solve(lo, b)
    return np.linalg.solve(lo.conj().T, y)


def sh_coeff_freq_interp(freqs, tables, f_query: float) -> np.ndarray:
    """Entrywise linear interpolation of coefficient vectors over frequency.

    ``tables`` is a (K, D) complex array of coefficient rows at the
    strictly increasing frequency knots ``freqs``.
    """
    freqs = np.asarray(freqs, dtype=float).reshape(-1)
    tables = np.asarray(tables, dtype=complex)
    if freqs.shape[0] < 2:
        raise ValueError("need at least two frequency knots")
    if np.any(np.diff(freqs) <= 0):
        raise ValueError("frequency knots must be strictly increasing")
    if f_query < freqs[0] or f_query > freqs[-1]:
        raise ValueError(
            f"query frequency {f_query!r} outside knot range [{freqs[0]!r}, {freqs[-1]!r}]"
        )
    k = int(np.searchsorted(freqs, f_query, side="right")) - 1
    if k == freqs.shape[0] - 1:
        return tables[-1].copy()
    t = (f_query - freqs[k]) / (freqs[k + 1] - freqs[k])
    if t == 0.0:
        return tables[k].copy()
    return (1.0 - t) * tables[k] + t * tables[k + 1]
