"""Synthetic scenes, measurement noise, observation splits and dataset I/O.

Datasets are gridded complex fields over F frequencies x I microphones x J
source directions with the linear index contract n = (f*I + i)*J + j. Two
generators are provided: an SH scene that is exactly representable by the
composite kernel's generative structure (free field times a band-limited
scattering expansion), and a rigid-sphere scene as a physically mismatched
testbed.
"""

from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError
from .geom import Direction, PointSet, cluster_sample, fibonacci_sphere, sph_to_cart
from .physics import AIR, MediumParams, free_field_batch, rigid_sphere_field_batch
from .sphharm import sh_basis_matrix

DATASET_SCHEMA_VERSION = 1


@dataclass
class FieldDataset:
    frequencies: np.ndarray  # (F,) Hz, strictly increasing
    mic_positions: np.ndarray  # (I, 3) meters
    source_directions: list  # J Directions
    source_radius: float  # meters, shared by all directions
    values: np.ndarray  # (F, I, J) complex
    noise_var: float = 0.0
    medium: MediumParams = AIR
    q0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float).reshape(-1)
        self.mic_positions = np.asarray(self.mic_positions, dtype=float).reshape(-1, 3)
        self.values = np.asarray(self.values, dtype=complex)
        self.q0 = np.asarray(self.q0, dtype=float).reshape(3)
        f, i, j = self.frequencies.shape[0], self.mic_positions.shape[0], len(self.source_directions)
        if min(f, i, j) < 1:
            raise ValueError("dataset axes must be non-empty")
        if self.values.shape != (f, i, j):
            raise ValueError(f"values must have shape {(f, i, j)}, got {self.values.shape}")
        if f >= 2 and np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if self.noise_var < 0 or self.source_radius <= 0:
            raise ValueError("noise variance must be >= 0 and radius positive")

    @property
    def shape(self):
        return self.values.shape

    def source_positions(self) -> np.ndarray:
        return np.array([self.q0 + sph_to_cart(d, self.source_radius) for d in self.source_directions])

    def point_set(self) -> PointSet:
        f, i, j = self.shape
        omegas = 2.0 * math.pi * np.repeat(self.frequencies, i * j)
        mic = np.tile(np.repeat(self.mic_positions, j, axis=0), (f, 1))
        src = np.tile(self.source_positions(), (f * i, 1))
        return PointSet(omegas, mic, src)

    def subset_directions(self, idx) -> "FieldDataset":
        idx = np.asarray(idx, dtype=int)
        prov = dict(self.provenance)
        prov["direction_subset"] = [int(k) for k in idx]
        return FieldDataset(
            frequencies=self.frequencies.copy(),
            mic_positions=self.mic_positions.copy(),
            source_directions=[self.source_directions[k] for k in idx],
            source_radius=self.source_radius,
            values=self.values[:, :, idx].copy(),
            noise_var=self.noise_var,
            medium=self.medium,
            q0=self.q0.copy(),
            provenance=prov,
        )

    def subsample_freq(self, factor: int) -> "FieldDataset":
        """Every factor-th frequency, always retaining the band edge so a
        model trained on the coarse grid still covers the full range."""
        if factor < 1:
            raise ValueError("subsample factor must be >= 1")
        keep = np.arange(0, self.frequencies.shape[0], factor)
        if keep[-1] != self.frequencies.shape[0] - 1:
            keep = np.append(keep, self.frequencies.shape[0] - 1)
        prov = dict(self.provenance)
        prov["freq_subsample"] = int(factor)
        return FieldDataset(
            frequencies=self.frequencies[keep].copy(),
            mic_positions=self.mic_positions.copy(),
            source_directions=list(self.source_directions),
            source_radius=self.source_radius,
            values=self.values[keep].copy(),
            noise_var=self.noise_var,
            medium=self.medium,
            q0=self.q0.copy(),
            provenance=prov,
        )


@dataclass
class SceneConfig:
    kind: str = "sh-scene"  # or "sphere-scene"
    n_freqs: int = 128
    n_mics: int = 4
    n_dirs: int = 240
    f_min_hz: float = 62.5
    f_max_hz: float = 8000.0
    source_radius: float = 1.5
    sphere_radius: float = 0.09
    order: int = 4
    smoothness: float = 0.9  # AR(1) coefficient of the SH coefficients over frequency
    seed: int = 0
    mic_frame_half_width: float = 0.08  # glasses-like frame across the face, meters
    mic_forward_offset: float = 0.095  # frame distance in front of the head center

    def __post_init__(self):
        if self.kind not in ("sh-scene", "sphere-scene"):
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if min(self.n_freqs, self.n_mics, self.n_dirs) < 1:
            raise ValueError("axis counts must be positive")
        if not (0.0 < self.f_min_hz < self.f_max_hz):
            raise ValueError("need 0 < f_min < f_max")
        if self.order < 0 or not (0.0 <= self.smoothness <= 1.0):
            raise ValueError("order must be >= 0 and smoothness in [0, 1]")
        if self.source_radius <= 0 or self.sphere_radius <= 0:
            raise ValueError("radii must be positive")


def default_mic_positions(
    n_mics: int, half_width: float = 0.08, forward_offset: float = 0.095
) -> np.ndarray:
    """Head-worn frame: mics on a 2*half_width wide line across the face,
    offset toward the frontal (+x) direction so they clear the head."""
    if n_mics == 1:
        y = np.zeros(1)
    else:
        y = np.linspace(-half_width, half_width, n_mics)
    return np.stack([np.full(n_mics, forward_offset), y, np.zeros(n_mics)], axis=1)


def _scene_grid(cfg: SceneConfig):
    freqs = np.linspace(cfg.f_min_hz, cfg.f_max_hz, cfg.n_freqs)
    mics = default_mic_positions(cfg.n_mics, cfg.mic_frame_half_width, cfg.mic_forward_offset)
    dirs = fibonacci_sphere(cfg.n_dirs)
    return freqs, mics, dirs


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def draw_sh_coefficients(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """(F, I, (L+1)^2) AR(1)-over-frequency coefficients.

    Degree-l standard deviation is proportional to 1/(2l+1), globally scaled
    so the expected scattering power E|Psi|^2 is one.
    """
    degrees = np.concatenate([[l] * (2 * l + 1) for l in range(cfg.order + 1)])
    harm = sum(1.0 / (2 * l + 1) for l in range(cfg.order + 1))
    base = math.sqrt(4.0 * math.pi / harm)
    scale = base / (2.0 * degrees + 1.0)
    d = scale.shape[0]
    xi = _complex_normal(rng, (cfg.n_freqs, cfg.n_mics, d))
    coeffs = np.empty_like(xi)
    rho = cfg.smoothness
    coeffs[0] = scale * xi[0]
    innov = math.sqrt(max(0.0, 1.0 - rho * rho))
    for f in range(1, cfg.n_freqs):
        coeffs[f] = rho * coeffs[f - 1] + innov * scale * xi[f]
    return coeffs


def synthesize_sh_scene(freqs, mics, dirs, coeffs, source_radius, q0=None, medium=AIR, provenance=None):
    """Field values h = free_field * SH expansion from explicit coefficients."""
    q0 = np.zeros(3) if q0 is None else np.asarray(q0, dtype=float)
    coeffs = np.asarray(coeffs, dtype=complex)
    order = int(round(math.sqrt(coeffs.shape[2]))) - 1
    basis = sh_basis_matrix(order, dirs)  # (J, D)
    src = np.array([q0 + sph_to_cart(d, source_radius) for d in dirs])
    f_n, i_n = len(freqs), len(mics)
    values = np.empty((f_n, i_n, len(dirs)), dtype=complex)
    omegas = 2.0 * math.pi * np.asarray(freqs, dtype=float)
    for i in range(i_n):
        hd = free_field_batch(omegas[:, None], np.asarray(mics)[i][None, None, :], src[None, :, :], medium)
        psi = coeffs[:, i, :] @ basis.T  # (F, J)
        values[:, i, :] = hd * psi
    return FieldDataset(
        frequencies=freqs,
        mic_positions=mics,
        source_directions=list(dirs),
        source_radius=source_radius,
        values=values,
        medium=medium,
        q0=q0,
        provenance=provenance or {},
    )


def gen_sh_scene(cfg: SceneConfig) -> FieldDataset:
    """Model-matched scene: free field times a random band-limited expansion."""
    freqs, mics, dirs = _scene_grid(cfg)
    rng = np.random.default_rng(cfg.seed)
    coeffs = draw_sh_coefficients(cfg, rng)
    omega_span = 2.0 * math.pi * (cfg.f_max_hz - cfg.f_min_hz)
    oracle_ell = 4.0 * max(omega_span, 1.0)
    provenance = {
        "generator": "sh-scene",
        "seed": cfg.seed,
        "order": cfg.order,
        "smoothness": cfg.smoothness,
        "truth_coeffs": _complex_array_to_json(coeffs),
        "oracle_log_ell": math.log(oracle_ell),
        "oracle_log_alpha": 2.0 * math.log(oracle_ell),
    }
    return synthesize_sh_scene(freqs, mics, dirs, coeffs, cfg.source_radius, provenance=provenance)


def truth_coefficients(ds: FieldDataset) -> np.ndarray:
    """(F, I, D) generator coefficients stored by gen_sh_scene."""
    if "truth_coeffs" not in ds.provenance:
        raise ValueError("dataset carries no ground-truth coefficients")
    f, i, _ = ds.shape
    return _complex_array_from_json(ds.provenance["truth_coeffs"], (f, i, -1))


def gen_sphere_scene(cfg: SceneConfig) -> FieldDataset:
    """Plane waves scattered by a rigid sphere centered at the origin.

    The recorded source radius is nominal; sources are treated as infinitely
    distant so the far-field assumption holds regardless of sphere size.
    """
    freqs, mics, dirs = _scene_grid(cfg)
    a = cfg.sphere_radius
    radii = np.linalg.norm(mics, axis=1)
    if np.any(radii < a):
        raise ValueError(
            f"microphone at radius {radii.min():.4f} m lies inside the sphere of radius {a} m"
        )
    units = np.array([d.unit_vector() for d in dirs])
    cos_inc = (mics @ units.T) / radii[:, None]  # (I, J)
    values = np.empty((cfg.n_freqs, cfg.n_mics, cfg.n_dirs), dtype=complex)
    for f, fr in enumerate(freqs):
        omega = 2.0 * math.pi * fr
        for i in range(cfg.n_mics):
            values[f, i, :] = rigid_sphere_field_batch(omega, a, radii[i], cos_inc[i])
    return FieldDataset(
        frequencies=freqs,
        mic_positions=mics,
        source_directions=dirs,
        source_radius=cfg.source_radius,
        values=values,
        provenance={"generator": "sphere-scene", "seed": cfg.seed, "sphere_radius": a},
    )


def add_noise(ds: FieldDataset, noise_var: float, seed: int = 0) -> FieldDataset:
    """Add circularly-symmetric complex Gaussian noise of the given variance."""
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    if noise_var == 0:
        return ds
    rng = np.random.default_rng(seed)
    noise = math.sqrt(noise_var) * _complex_normal(rng, ds.values.shape)
    prov = dict(ds.provenance)
    prov["noise_seed"] = int(seed)
    return FieldDataset(
        frequencies=ds.frequencies.copy(),
        mic_positions=ds.mic_positions.copy(),
        source_directions=list(ds.source_directions),
        source_radius=ds.source_radius,
        values=ds.values + noise,
        noise_var=ds.noise_var + noise_var,
        medium=ds.medium,
        q0=ds.q0.copy(),
        provenance=prov,
    )


def split_observed(ds: FieldDataset, n_obs: int, seed: int = 0, forced: Direction | None = None):
    """(train, test): clustered direction subset vs the full direction set."""
    sel = cluster_sample(ds.source_directions, n_obs, forced=forced, seed=seed)
    return ds.subset_directions(sel), ds


def _complex_array_to_json(arr: np.ndarray):
    flat = np.asarray(arr, dtype=complex).reshape(-1)
    return [[float(v.real), float(v.imag)] for v in flat]


def _complex_array_from_json(data, shape):
    flat = np.array([complex(re, im) for re, im in data], dtype=complex)
    return flat.reshape(shape)


def write_dataset(ds: FieldDataset, path: str) -> None:
    """Serialize to JSON (gzip when the path ends in .gz); full precision."""
    doc = {
        "schema_version": DATASET_SCHEMA_VERSION,
        "frequencies_hz": [float(v) for v in ds.frequencies],
        "mic_positions": [[float(c) for c in row] for row in ds.mic_positions],
        "source_directions": [
            {"azimuth": float(d.azimuth), "colatitude": float(d.colatitude), "radius": float(ds.source_radius)}
            for d in ds.source_directions
        ],
        "values": _complex_array_to_json(ds.values),
        "noise_var": float(ds.noise_var),
        "speed_of_sound": float(ds.medium.speed_of_sound),
        "head_center": [float(c) for c in ds.q0],
        "provenance": ds.provenance,
    }
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    if str(path).endswith(".gz"):
        # fixed mtime so identical datasets produce identical bytes
        with gzip.GzipFile(filename="", mode="wb", fileobj=open(path, "wb"), mtime=0) as fh:
            fh.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)


def _expect(cond: bool, pointer: str, message: str):
    if not cond:
        raise SchemaError(f"{pointer}: {message}")


def read_dataset(path: str) -> FieldDataset:
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as fh:
            doc = json.loads(fh.read().decode())
    except OSError as exc:
        raise SchemaError(f"/: cannot read {path!r} ({exc})") from exc
    except ValueError as exc:
        raise SchemaError(f"/: not valid JSON ({exc})") from exc
    _expect(isinstance(doc, dict), "/", "expected a JSON object")
    version = doc.get("schema_version")
    _expect(
        version == DATASET_SCHEMA_VERSION,
        "/schema_version",
        f"unsupported version {version!r}, expected {DATASET_SCHEMA_VERSION}",
    )
    for key in (
        "frequencies_hz",
        "mic_positions",
        "source_directions",
        "values",
        "noise_var",
        "speed_of_sound",
        "head_center",
        "provenance",
    ):
        _expect(key in doc, f"/{key}", "missing required field")
    freqs = doc["frequencies_hz"]
    _expect(isinstance(freqs, list) and len(freqs) >= 1, "/frequencies_hz", "need a non-empty list")
    mics = doc["mic_positions"]
    _expect(
        isinstance(mics, list) and all(isinstance(r, list) and len(r) == 3 for r in mics),
        "/mic_positions",
        "need a list of [x, y, z] rows",
    )
    sdirs = doc["source_directions"]
    _expect(isinstance(sdirs, list) and len(sdirs) >= 1, "/source_directions", "need a non-empty list")
    radii = set()
    dirs = []
    for n, entry in enumerate(sdirs):
        _expect(
            isinstance(entry, dict) and {"azimuth", "colatitude", "radius"} <= set(entry),
            f"/source_directions/{n}",
            "need azimuth, colatitude, radius",
        )
        try:
            dirs.append(Direction(float(entry["azimuth"]), float(entry["colatitude"])))
        except ValueError as exc:
            raise SchemaError(f"/source_directions/{n}: {exc}") from exc
        radii.add(float(entry["radius"]))
    _expect(len(radii) == 1, "/source_directions", "all directions must share one radius")
    f_n, i_n, j_n = len(freqs), len(mics), len(dirs)
    vals = doc["values"]
    _expect(
        isinstance(vals, list) and len(vals) == f_n * i_n * j_n,
        "/values",
        f"expected F*I*J = {f_n * i_n * j_n} entries, got {len(vals) if isinstance(vals, list) else 'non-list'}",
    )
    _expect(
        all(isinstance(v, list) and len(v) == 2 for v in vals),
        "/values",
        "entries must be [re, im] pairs",
    )
    values = _complex_array_from_json(vals, (f_n, i_n, j_n))
    try:
        return FieldDataset(
            frequencies=np.array(freqs, dtype=float),
            mic_positions=np.array(mics, dtype=float),
            source_directions=dirs,
            source_radius=radii.pop(),
            values=values,
            noise_var=float(doc["noise_var"]),
            medium=MediumParams(float(doc["speed_of_sound"])),
            q0=np.array(doc["head_center"], dtype=float),
            provenance=doc["provenance"],
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"/: {exc}") from exc
