"""Covariance functions over collocation points and Gram-matrix assembly.

The steering-field kernel is a product of three factors: an
inverse-quadratic spectral kernel over frequency, a rank-1 free-field
directional kernel, and a rank-1 scattering kernel whose per-point field
value is a spherical-harmonics expansion with coefficients supplied by the
coordinate network plus precomputed low-order tables. Gram assembly
evaluates the per-point factors once (never per pair), which keeps the
rank-1 structure exact and the cost at O(N^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericError
from .geom import CollocationPoint, Direction, PointSet, cart_to_sph, chordal_distance
from .nfield import NfParams, nf_forward_cached
from .physics import AIR, MediumParams, free_field, free_field_batch
from .sphharm import sh_basis_angles, sh_coeff_freq_interp


@dataclass
class CoeffTable:
    """Low-order SH coefficients per (frequency knot, microphone).

    Lookup interpolates linearly over frequency and snaps to the nearest
    stored microphone position.
    """

    omegas: np.ndarray  # (K,), rad/s, strictly increasing
    mic_positions: np.ndarray  # (I, 3)
    degree: int
    coeffs: np.ndarray  # (K, I, (degree+1)^2)

    def __post_init__(self):
        self.omegas = np.asarray(self.omegas, dtype=float).reshape(-1)
        self.mic_positions = np.asarray(self.mic_positions, dtype=float).reshape(-1, 3)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        k, i = self.omegas.shape[0], self.mic_positions.shape[0]
        d = (self.degree + 1) ** 2
        if self.coeffs.shape != (k, i, d):
            raise ValueError(f"coefficient array must be (K, I, D) = ({k}, {i}, {d})")
        if k >= 2 and np.any(np.diff(self.omegas) <= 0):
            raise ValueError("table frequencies must be strictly increasing")

    def lookup(self, omegas, mics) -> np.ndarray:
        """(N, (degree+1)^2) coefficients at each query point."""
        omegas = np.asarray(omegas, dtype=float).reshape(-1)
        mics = np.asarray(mics, dtype=float).reshape(-1, 3)
        d2 = ((mics[:, None, :] - self.mic_positions[None, :, :]) ** 2).sum(axis=2)
        mic_idx = np.argmin(d2, axis=1)
        out = np.empty((omegas.shape[0], self.coeffs.shape[2]), dtype=complex)
        if self.omegas.shape[0] == 1:
            if np.any(np.abs(omegas - self.omegas[0]) > 1e-9 * max(1.0, abs(self.omegas[0]))):
                raise ValueError("query frequency outside single-knot table")
            for n in range(omegas.shape[0]):
                out[n] = self.coeffs[0, mic_idx[n]]
            return out
        for n in range(omegas.shape[0]):
            out[n] = sh_coeff_freq_interp(self.omegas, self.coeffs[:, mic_idx[n], :], omegas[n])
        return out


@dataclass
class CompositeKernelParams:
    """Everything the steering-field kernel needs to evaluate."""

    log_alpha: float
    log_ell: float
    log_noise: float
    sh_order: int
    nf: NfParams
    q0: np.ndarray
    bounds: tuple
    table: CoeffTable | None = None
    medium: MediumParams = AIR

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float).reshape(3)
        if self.nf.n_outputs != (self.sh_order + 1) ** 2:
            raise ValueError(
                f"network must emit {(self.sh_order + 1) ** 2} complex coefficients"
            )
        if self.table is not None and self.table.degree > self.sh_order:
            raise ValueError("table degree exceeds the kernel SH order")

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    @property
    def ell(self) -> float:
        return math.exp(self.log_ell)

    @property
    def noise_var(self) -> float:
        return math.exp(self.log_noise)

    def with_tree(self, tree) -> "CompositeKernelParams":
        return replace(
            self,
            log_alpha=float(tree["log_alpha"]),
            log_ell=float(tree["log_ell"]),
            log_noise=float(tree["log_noise"]),
            nf=NfParams.from_tree(tree),
        )

    def to_tree(self):
        tree = self.nf.to_tree()
        tree["log_alpha"] = np.asarray(self.log_alpha, dtype=float)
        tree["log_ell"] = np.asarray(self.log_ell, dtype=float)
        tree["log_noise"] = np.asarray(self.log_noise, dtype=float)
        return tree


@dataclass
class ChmatKernelParams:
    """Spectral x chordal-Matern baseline kernel (per-channel use)."""

    log_alpha: float
    log_ell: float
    log_ell_d: float
    log_noise: float
    q0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    medium: MediumParams = AIR

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float).reshape(3)

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    @property
    def ell(self) -> float:
        return math.exp(self.log_ell)

    @property
    def ell_d(self) -> float:
        return math.exp(self.log_ell_d)

    @property
    def noise_var(self) -> float:
        return math.exp(self.log_noise)

    def with_tree(self, tree) -> "ChmatKernelParams":
        return replace(
            self,
            log_alpha=float(tree["log_alpha"]),
            log_ell=float(tree["log_ell"]),
            log_ell_d=float(tree["log_ell_d"]),
            log_noise=float(tree["log_noise"]),
        )

    def to_tree(self):
        return {
            "log_alpha": np.asarray(self.log_alpha, dtype=float),
            "log_ell": np.asarray(self.log_ell, dtype=float),
            "log_ell_d": np.asarray(self.log_ell_d, dtype=float),
            "log_noise": np.asarray(self.log_noise, dtype=float),
        }


def spectral_kernel(omega_a, omega_b, alpha: float, ell: float):
    """Inverse-quadratic kernel alpha / (ell^2 + (w - w')^2)."""
    if alpha <= 0.0 or ell <= 0.0:
        raise ValueError("alpha and ell must be positive")
    delta = np.asarray(omega_a, dtype=float) - np.asarray(omega_b, dtype=float)
    return alpha / (ell * ell + delta * delta)


def spectral_gram(omega_a, omega_b, alpha: float, ell: float) -> np.ndarray:
    return spectral_kernel(
        np.asarray(omega_a, float)[:, None], np.asarray(omega_b, float)[None, :], alpha, ell
    )


def directional_kernel(
    z_a: CollocationPoint, z_b: CollocationPoint, medium: MediumParams = AIR
) -> complex:
    """Rank-1 free-field kernel h_d(z) conj(h_d(z'))."""
    return free_field(z_a.omega, z_a.mic, z_a.src, medium) * np.conj(
        free_field(z_b.omega, z_b.mic, z_b.src, medium)
    )


def source_angles(ps: PointSet, q0) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth/colatitude of each source seen from the reference center."""
    rel = ps.src - np.asarray(q0, dtype=float).reshape(1, 3)
    r = np.linalg.norm(rel, axis=1)
    if np.any(r == 0.0):
        raise ValueError("source coincides with the reference center")
    col = np.arccos(np.clip(rel[:, 2] / r, -1.0, 1.0))
    az = np.mod(np.arctan2(rel[:, 1], rel[:, 0]), 2.0 * math.pi)
    return az, col


def hybrid_coeffs_batch(ps: PointSet, params: CompositeKernelParams):
    """Coefficients = network output + interpolated low-order table.

    Returns (coeffs (N, D), nf_cache) so training can reuse the forward
    pass; the table part is constant with respect to the network.
    """
    nf_out, cache = nf_forward_cached(params.nf, ps.as_matrix(), params.bounds)
    coeffs = nf_out.astype(complex)
    if params.table is not None:
        low = params.table.lookup(ps.omega, ps.mic)
        coeffs[:, : low.shape[1]] += low
    return coeffs, cache


def scattering_factors(ps: PointSet, params: CompositeKernelParams):
    """Per-point scattering field values and intermediates.

    Returns (psi (N,), coeffs (N, D), basis (N, D), nf_cache).
    """
    az, col = source_angles(ps, params.q0)
    basis = sh_basis_angles(params.sh_order, az, col)
    coeffs, cache = hybrid_coeffs_batch(ps, params)
    psi = np.sum(coeffs * basis, axis=1)
    return psi, coeffs, basis, cache


def scattering_field_psi(z: CollocationPoint, params: CompositeKernelParams) -> complex:
    psi, _, _, _ = scattering_factors(PointSet.single(z), params)
    return complex(psi[0])


def scattering_kernel(
    z_a: CollocationPoint, z_b: CollocationPoint, params: CompositeKernelParams
) -> complex:
    """Rank-1 kernel Psi(z) conj(Psi(z'))."""
    return scattering_field_psi(z_a, params) * np.conj(scattering_field_psi(z_b, params))


def composite_kernel(
    z_a: CollocationPoint, z_b: CollocationPoint, params: CompositeKernelParams
) -> complex:
    """Spectral x directional x scattering covariance."""
    spec = spectral_kernel(z_a.omega, z_b.omega, params.alpha, params.ell)
    return complex(spec * directional_kernel(z_a, z_b, params.medium) * scattering_kernel(z_a, z_b, params))


def chordal_matern_kernel(d_a: Direction, d_b: Direction, ell_d: float) -> float:
    """Matern-3/2 correlation of the chordal distance between directions."""
    if ell_d <= 0.0:
        raise ValueError("length scale must be positive")
    u = math.sqrt(3.0) * chordal_distance(d_a, d_b) / ell_d
    return (1.0 + u) * math.exp(-u)


def chmat_kernel(
    z_a: CollocationPoint,
    z_b: CollocationPoint,
    params: ChmatKernelParams,
) -> float:
    """Spectral kernel times the chordal-Matern kernel of source directions.

    Carries no microphone dependence; the baseline is fitted per channel.
    """
    da, _ = cart_to_sph(z_a.src - params.q0)
    db, _ = cart_to_sph(z_b.src - params.q0)
    spec = spectral_kernel(z_a.omega, z_b.omega, params.alpha, params.ell)
    return float(spec * chordal_matern_kernel(da, db, params.ell_d))


def default_jitter(k: np.ndarray) -> float:
    n = k.shape[0]
    return 1e-10 * float(np.real(np.trace(k))) / max(n, 1)


def gram(points, kernel, jitter: float | None = None) -> np.ndarray:
    """Pairwise Gram matrix, Hermitized, with jitter on the diagonal.

    ``kernel`` is any callable of two collocation points. The default
    jitter is 1e-10 * trace / N so it tracks the kernel's scale.
    """
    pts = list(points)
    n = len(pts)
    if n < 1:
        raise ValueError("need at least one point")
    k = np.empty((n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            val = complex(kernel(pts[a], pts[b]))
            if not (math.isfinite(val.real) and math.isfinite(val.imag)):
                raise NumericError(f"kernel value not finite at point pair ({a}, {b})")
            k[a, b] = val
    k = 0.5 * (k + k.conj().T)
    jit = default_jitter(k) if jitter is None else float(jitter)
    return k + jit * np.eye(n)


def composite_gram_factors(ps: PointSet, params: CompositeKernelParams):
    """Per-point factors for the fast composite Gram: (hd, psi, coeffs, basis, cache)."""
    hd = free_field_batch(ps.omega, ps.mic, ps.src, params.medium)
    psi, coeffs, basis, cache = scattering_factors(ps, params)
    return hd, psi, coeffs, basis, cache


def composite_gram(ps: PointSet, params: CompositeKernelParams, jitter: float | None = None):
    """Gram built from per-point factors; exact rank-1 structure per factor."""
    hd, psi, _, _, _ = composite_gram_factors(ps, params)
    v = hd * psi
    k = spectral_gram(ps.omega, ps.omega, params.alpha, params.ell) * np.outer(v, v.conj())
    k = 0.5 * (k + k.conj().T)
    if not np.all(np.isfinite(k)):
        bad = np.argwhere(~np.isfinite(k))[0]
        raise NumericError(f"kernel value not finite at point pair ({bad[0]}, {bad[1]})")
    jit = default_jitter(k) if jitter is None else float(jitter)
    return k + jit * np.eye(len(ps))


def composite_cross(
    ps_query: PointSet, ps_train: PointSet, params: CompositeKernelParams
) -> np.ndarray:
    """Cross covariance k(z_query, z_train), shape (Nq, Nt)."""
    hd_q, psi_q, _, _, _ = composite_gram_factors(ps_query, params)
    hd_t, psi_t, _, _, _ = composite_gram_factors(ps_train, params)
    vq = hd_q * psi_q
    vt = hd_t * psi_t
    return spectral_gram(ps_query.omega, ps_train.omega, params.alpha, params.ell) * np.outer(
        vq, vt.conj()
    )


def _chmat_direction_matrix(ps: PointSet, q0) -> np.ndarray:
    rel = ps.src - np.asarray(q0, float).reshape(1, 3)
    return rel / np.linalg.norm(rel, axis=1, keepdims=True)


def chmat_gram(ps: PointSet, params: ChmatKernelParams, jitter: float | None = None) -> np.ndarray:
    k = chmat_cross(ps, ps, params)
    k = 0.5 * (k + k.conj().T)
    jit = default_jitter(k) if jitter is None else float(jitter)
    return k + jit * np.eye(len(ps))


def chmat_cross(ps_a: PointSet, ps_b: PointSet, params: ChmatKernelParams) -> np.ndarray:
    ua = _chmat_direction_matrix(ps_a, params.q0)
    ub = _chmat_direction_matrix(ps_b, params.q0)
    cos = np.clip(ua @ ub.T, -1.0, 1.0)
    chord = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * cos))
    u = math.sqrt(3.0) * chord / params.ell_d
    matern = (1.0 + u) * np.exp(-u)
    return spectral_gram(ps_a.omega, ps_b.omega, params.alpha, params.ell) * matern
