"""Interpolation quality metrics: per-frequency normalized error in dB and
per-direction time-domain cosine similarity.
"""

from __future__ import annotations

import numpy as np

NMSE_FLOOR_DB = -300.0


def nmse_per_freq(target: np.ndarray, estimate: np.ndarray) -> np.ndarray:
    """Mean over mics and directions of 10 log10(|h - hhat|^2 / |h|^2).

    Exact matches contribute the -300 dB floor instead of -inf.
    """
    target = np.asarray(target, dtype=complex)
    estimate = np.asarray(estimate, dtype=complex)
    if target.shape != estimate.shape or target.ndim != 3:
        raise ValueError("target and estimate must both be (F, I, J)")
    tpow = np.abs(target) ** 2
    if np.any(tpow == 0.0):
        raise ValueError("target contains zero entries; nMSE is undefined")
    err = np.abs(target - estimate) ** 2
    ratio_db = np.where(err > 0.0, 10.0 * np.log10(np.maximum(err, 1e-320) / tpow), NMSE_FLOOR_DB)
    ratio_db = np.maximum(ratio_db, NMSE_FLOOR_DB)
    return ratio_db.mean(axis=(1, 2))


def to_time_domain(one_sided: np.ndarray) -> np.ndarray:
    """Inverse DFT of the Hermitian-symmetric extension; length 2(F-1).

    The imaginary parts of the first (DC) and last (Nyquist) bins are
    discarded so the result is real.
    """
    spec = np.asarray(one_sided, dtype=complex).reshape(-1)
    f = spec.shape[0]
    if f < 2:
        raise ValueError("need at least two frequency bins")
    full = np.concatenate(
        [
            [spec[0].real],
            spec[1 : f - 1],
            [spec[f - 1].real],
            np.conj(spec[f - 2 : 0 : -1]),
        ]
    )
    signal = np.fft.ifft(full)
    return signal.real


def csim_per_dir(target: np.ndarray, estimate: np.ndarray) -> np.ndarray:
    """Channel-averaged cosine similarity of time-domain filters, per direction."""
    target = np.asarray(target, dtype=complex)
    estimate = np.asarray(estimate, dtype=complex)
    if target.shape != estimate.shape or target.ndim != 3:
        raise ValueError("target and estimate must both be (F, I, J)")
    f_n, i_n, j_n = target.shape
    out = np.empty(j_n)
    for j in range(j_n):
        acc = 0.0
        for i in range(i_n):
            h = to_time_domain(target[:, i, j])
            h_hat = to_time_domain(estimate[:, i, j])
            nh = np.linalg.norm(h)
            ne = np.linalg.norm(h_hat)
            if nh == 0.0 or ne == 0.0:
                raise ValueError(f"zero-energy channel at (i={i}, j={j})")
            acc += float(np.dot(h, h_hat) / (nh * ne))
        out[j] = acc / i_n
    return out
