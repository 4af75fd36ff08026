"""Sphere geometry: directions, distances, Fibonacci grids and the
observation / validation sampling protocols.

All angles are radians. Azimuth is measured from +x in the xy-plane,
colatitude from +z (standard physics convention).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0

# Default always-observed direction: facing +x on the equator.
FRONTAL = None  # set below, Direction must exist first


@dataclass(frozen=True)
class Direction:
    """A point on the unit sphere."""

    azimuth: float
    colatitude: float

    def __post_init__(self):
        if not (math.isfinite(self.azimuth) and math.isfinite(self.colatitude)):
            raise ValueError("direction angles must be finite")
        az = self.azimuth % (2.0 * math.pi)
        col = float(self.colatitude)
        if col < 0.0 or col > math.pi:
            # tolerate float dust from upstream trig, reject anything else
            if -1e-12 <= col < 0.0:
                col = 0.0
            elif math.pi < col <= math.pi + 1e-12:
                col = math.pi
            else:
                raise ValueError(f"colatitude {col!r} outside [0, pi]")
        object.__setattr__(self, "azimuth", float(az))
        object.__setattr__(self, "colatitude", col)

    def unit_vector(self) -> np.ndarray:
        return sph_to_cart(self, 1.0)


FRONTAL = Direction(0.0, math.pi / 2.0)


@dataclass(frozen=True)
class CollocationPoint:
    """One GP input coordinate: angular frequency, mic and source position."""

    omega: float
    mic: np.ndarray
    src: np.ndarray

    def __post_init__(self):
        mic = np.asarray(self.mic, dtype=float)
        src = np.asarray(self.src, dtype=float)
        if mic.shape != (3,) or src.shape != (3,):
            raise ValueError("mic and src must be 3-vectors")
        if not (math.isfinite(self.omega) and np.all(np.isfinite(mic)) and np.all(np.isfinite(src))):
            raise ValueError("collocation coordinates must be finite")
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "mic", mic)
        object.__setattr__(self, "src", src)


class PointSet:
    """A batch of collocation points stored as flat arrays."""

    def __init__(self, omega, mic, src):
        self.omega = np.asarray(omega, dtype=float).reshape(-1)
        self.mic = np.asarray(mic, dtype=float).reshape(-1, 3)
        self.src = np.asarray(src, dtype=float).reshape(-1, 3)
        n = self.omega.shape[0]
        if self.mic.shape[0] != n or self.src.shape[0] != n:
            raise ValueError("omega, mic, src must have matching lengths")

    def __len__(self) -> int:
        return self.omega.shape[0]

    def take(self, idx) -> "PointSet":
        idx = np.asarray(idx)
        return PointSet(self.omega[idx], self.mic[idx], self.src[idx])

    def as_matrix(self) -> np.ndarray:
        """(N, 7) rows of [omega, src_xyz, mic_xyz], the coordinate layout
        used by the coordinate network."""
        return np.concatenate(
            [self.omega[:, None], self.src, self.mic], axis=1
        )

    @staticmethod
    def from_points(points) -> "PointSet":
        pts = list(points)
        return PointSet(
            np.array([p.omega for p in pts]),
            np.array([p.mic for p in pts]),
            np.array([p.src for p in pts]),
        )

    @staticmethod
    def single(point: CollocationPoint) -> "PointSet":
        return PointSet.from_points([point])


def sph_to_cart(d: Direction, radius: float) -> np.ndarray:
    """Spherical (azimuth, colatitude, radius) to Cartesian xyz."""
    if not (math.isfinite(radius) and radius > 0.0):
        raise ValueError(f"radius must be finite and positive, got {radius!r}")
    st = math.sin(d.colatitude)
    return np.array(
        [
            radius * st * math.cos(d.azimuth),
            radius * st * math.sin(d.azimuth),
            radius * math.cos(d.colatitude),
        ]
    )


def cart_to_sph(v) -> tuple[Direction, float]:
    """Inverse of :func:`sph_to_cart`. At the poles azimuth collapses to 0."""
    v = np.asarray(v, dtype=float)
    r = float(np.linalg.norm(v))
    if not (r > 0.0 and np.all(np.isfinite(v))):
        raise ValueError("cannot convert zero or non-finite vector")
    col = math.atan2(math.hypot(v[0], v[1]), v[2])  # stable at the poles
    az = math.atan2(v[1], v[0]) % (2.0 * math.pi)
    return Direction(az, col), r


def chordal_distance(a: Direction, b: Direction) -> float:
    """Length of the chord between two unit vectors, in [0, 2]."""
    s_col = math.sin(0.5 * (b.colatitude - a.colatitude))
    s_az = math.sin(0.5 * (a.azimuth - b.azimuth))
    inner = s_col * s_col + math.sin(a.colatitude) * math.sin(b.colatitude) * s_az * s_az
    return 2.0 * math.sqrt(max(0.0, inner))


def angular_distance(a: Direction, b: Direction) -> float:
    """Great-circle angle 2*arcsin(chord/2), in [0, pi]."""
    half = 0.5 * chordal_distance(a, b)
    return 2.0 * math.asin(min(1.0, half))


def fibonacci_sphere(n: int) -> list[Direction]:
    """Deterministic golden-angle spiral grid, pole-free offset variant."""
    if n < 1:
        raise ValueError(f"need at least one point, got n={n}")
    step = 2.0 * math.pi * (1.0 - 1.0 / GOLDEN_RATIO)
    out = []
    for k in range(n):
        z = 1.0 - (2.0 * k + 1.0) / n
        out.append(Direction((k * step) % (2.0 * math.pi), math.acos(z)))
    return out


def _unit_matrix(dirs) -> np.ndarray:
    return np.array([d.unit_vector() for d in dirs])


def cluster_sample(eval_dirs, n_obs: int, forced: Direction | None = None, seed: int = 0) -> np.ndarray:
    """Pick one evaluation direction per Fibonacci-centroid cluster.

    Every eval direction is assigned to its nearest of ``n_obs`` Fibonacci
    centroids (ties broken by lowest centroid index). One uniformly random
    member is returned per non-empty cluster, except the cluster that
    contains the eval direction nearest to ``forced``, which always returns
    that nearest index. Deterministic given ``seed``.
    """
    eval_dirs = list(eval_dirs)
    if len(eval_dirs) == 0:
        raise ValueError("eval_dirs must be non-empty")
    if n_obs < 1 or n_obs > len(eval_dirs):
        raise ValueError(f"n_obs={n_obs} outside [1, {len(eval_dirs)}]")
    if forced is None:
        forced = FRONTAL

    units = _unit_matrix(eval_dirs)
    centroids = _unit_matrix(fibonacci_sphere(n_obs))
    # cos is monotone in angular distance; argmax returns the lowest index on ties
    assign = np.argmax(units @ centroids.T, axis=1)
    forced_idx = int(np.argmax(units @ forced.unit_vector()))
    forced_cluster = assign[forced_idx]

    rng = np.random.default_rng(seed)
    picked = []
    for c in range(n_obs):
        members = np.flatnonzero(assign == c)
        if members.size == 0:
            continue
        if c == forced_cluster:
            picked.append(forced_idx)
        else:
            picked.append(int(members[rng.integers(members.size)]))
    return np.array(sorted(picked), dtype=int)


def validation_split(indices, shape, fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Split grid point indices into training and validation sets.

    ``indices`` are linear indices on an F x I x J grid following the
    contract n = (f*I + i)*J + j. The frequency axis is first subsampled by
    a factor of two (even f retained). Per (mic, direction) pair the
    retained frequencies form eight contiguous blocks, from which
    ``round(fraction * count)`` validation points are drawn without
    replacement, cycling the blocks in random order so the draw is spread
    across blocks. Returns (train, valid); their union is the retained set.
    """
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must lie strictly in (0, 1), got {fraction!r}")
    F, I, J = shape
    idx = np.asarray(indices, dtype=int).reshape(-1)
    if idx.size == 0:
        raise ValueError("no points to split")
    f = idx // (I * J)
    rem = idx % (I * J)
    i = rem // J
    j = rem % J

    keep = f % 2 == 0
    idx, f, i, j = idx[keep], f[keep], i[keep], j[keep]

    rng = np.random.default_rng(seed)
    valid_parts = []
    train_parts = []
    group_key = i * J + j
    for key in np.unique(group_key):
        sel = np.flatnonzero(group_key == key)
        order = np.argsort(f[sel], kind="stable")
        group = idx[sel][order]
        blocks = [b for b in np.array_split(group, 8) if b.size > 0]
        n_valid = int(round(fraction * group.size))
        shuffled = [b[rng.permutation(b.size)] for b in blocks]
        block_order = rng.permutation(len(shuffled))
        chosen = []
        depth = 0
        while len(chosen) < n_valid:
            progressed = False
            for b in block_order:
                if len(chosen) >= n_valid:
                    break
                if depth < shuffled[b].size:
                    chosen.append(shuffled[b][depth])
                    progressed = True
            if not progressed:
                break
            depth += 1
        chosen = np.array(sorted(int(c) for c in chosen), dtype=int)
        valid_parts.append(chosen)
        train_parts.append(np.setdiff1d(group, chosen))
    valid = np.sort(np.concatenate(valid_parts)) if valid_parts else np.array([], dtype=int)
    train = np.sort(np.concatenate(train_parts)) if train_parts else np.array([], dtype=int)
    return train, valid
