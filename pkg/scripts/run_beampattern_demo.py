#!/usr/bin/env python3
"""Isotropic-noise MVDR beampatterns from interpolated steering vectors.

Fits an interpolator on a sparse subset of a rigid-sphere scene, builds the
isotropic spatial covariance from its predicted steering vectors, and scans
azimuthal beampatterns at the requested look directions against the
closed-form oracle vectors.
"""

import argparse
import math
import os

import numpy as np

from svfield.beamform import beampattern, equiangular_grid, iso_scm, mvdr_weights, white_noise_gain
from svfield.datagen import SceneConfig, add_noise, gen_sphere_scene, split_observed
from svfield.geom import Direction
from svfield.gpr import FitConfig, fit
from svfield.modelio import predict_directions
from svfield.physics import rigid_sphere_field_batch


def oracle_svecs(dirs, mics, omega, sphere_radius):
    radii = np.linalg.norm(mics, axis=1)
    units = np.array([d.unit_vector() for d in dirs])
    out = np.empty((len(dirs), mics.shape[0]), dtype=complex)
    for i in range(mics.shape[0]):
        out[:, i] = rigid_sphere_field_batch(
            omega, sphere_radius, radii[i], (units @ mics[i]) / radii[i]
        )
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results/beampatterns")
    parser.add_argument("--n-obs", type=int, default=16)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--freq-hz", type=float, default=2000.0)
    parser.add_argument("--look-azimuths-deg", type=float, nargs="+", default=[0.0, 30.0, 90.0])
    parser.add_argument("--iterations", type=int, default=300)
    args = parser.parse_args()

    scene = gen_sphere_scene(
        SceneConfig(kind="sphere-scene", n_freqs=64, n_mics=4, n_dirs=240,
                    f_min_hz=125.0, f_max_hz=8000.0, sphere_radius=0.09,
                    source_radius=2.0, seed=args.seed)
    )
    train, _ = split_observed(scene, args.n_obs, seed=args.seed)
    train = add_noise(train, 1e-4, seed=args.seed + 1000)
    model = fit(train, FitConfig(iterations=args.iterations, pretrain_iterations=40,
                                 batch_size=384, eval_every=50, warmup_steps=100,
                                 seed=args.seed))

    f_idx = int(np.argmin(np.abs(scene.frequencies - args.freq_hz)))
    omega = 2 * math.pi * scene.frequencies[f_idx]
    grid = equiangular_grid(36, 18)
    cols = np.array([d.colatitude for d in grid])
    mics = scene.mic_positions

    sources = {
        "oracle": lambda dirs: oracle_svecs(dirs, mics, omega, 0.09),
        "model": lambda dirs: predict_directions(model, scene, dirs, [f_idx])[0].T,
    }
    os.makedirs(args.out, exist_ok=True)
    scan_az = np.arange(360) * math.pi / 180.0
    for name, svec_fn in sources.items():
        r = iso_scm(svec_fn(grid), cols, 36, 18)
        for look_deg in args.look_azimuths_deg:
            look = Direction(math.radians(look_deg), math.pi / 2)
            d = svec_fn([look])[0]
            w = mvdr_weights(d, r)
            scan = svec_fn([Direction(a, math.pi / 2) for a in scan_az])
            gains = beampattern(w, scan, d)
            path = os.path.join(args.out, f"pattern_{name}_az{int(look_deg)}.csv")
            with open(path, "w") as fh:
                fh.write("freq_hz,azimuth_deg,gain_db\n")
                for a, g in zip(scan_az, gains):
                    fh.write(f"{scene.frequencies[f_idx]!r},{math.degrees(a)!r},{float(g)!r}\n")
            print(
                f"{name} look {look_deg:5.1f} deg: WNG {white_noise_gain(w, d):6.2f} dB, "
                f"suppression at +-90: {gains[(int(look_deg) + 90) % 360]:.1f} / "
                f"{gains[(int(look_deg) - 90) % 360]:.1f} dB -> {path}"
            )


if __name__ == "__main__":
    main()
