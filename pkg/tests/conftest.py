import math

import numpy as np
import pytest
from hypothesis import strategies as st

from svfield.geom import Direction, PointSet
from svfield.kernels import CompositeKernelParams
from svfield.nfield import compute_bounds, init_nf_params


def directions(min_col=0.0, max_col=math.pi):
    return st.builds(
        Direction,
        st.floats(0.0, 2.0 * math.pi, exclude_max=True, allow_nan=False),
        st.floats(min_col, max_col, allow_nan=False),
    )


def random_direction(rng: np.random.Generator) -> Direction:
    z = rng.uniform(-1.0, 1.0)
    return Direction(rng.uniform(0.0, 2.0 * math.pi), math.acos(z))


def random_points(rng: np.random.Generator, n: int, src_radius: float = 1.5) -> PointSet:
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return PointSet(
        rng.uniform(2.0 * math.pi * 100.0, 2.0 * math.pi * 2000.0, n),
        rng.uniform(-0.1, 0.1, (n, 3)),
        src_radius * u,
    )


def random_composite_params(
    rng: np.random.Generator,
    ps: PointSet,
    order: int = 1,
    encoding: int = 6,
    widths=(5, 4),
    head_scale: float = 0.5,
) -> CompositeKernelParams:
    nf = init_nf_params(rng, encoding, widths, (order + 1) ** 2, np.ones(7))
    nf.head_w[:] = head_scale * rng.standard_normal(nf.head_w.shape)
    return CompositeKernelParams(
        log_alpha=float(rng.uniform(-1.0, 1.0)),
        log_ell=float(np.log(rng.uniform(200.0, 2000.0))),
        log_noise=float(np.log(rng.uniform(1e-4, 1e-1))),
        sh_order=order,
        nf=nf,
        q0=np.zeros(3),
        bounds=compute_bounds(ps.as_matrix()),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
