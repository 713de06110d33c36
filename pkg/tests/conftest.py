from __future__ import annotations

import numpy as np
import pytest

from bsglm.lattice import build_lattice, build_ugl
from bsglm.model import GlmDataset, GmrfPriors, precompute
from bsglm.synth import SynthConfig, simulate


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture(scope="session")
def lattice_333():
    return build_lattice((3, 3, 3), np.ones((3, 3, 3), bool), "3d")


@pytest.fixture(scope="session")
def ugl_333(lattice_333):
    return build_ugl(lattice_333)


@pytest.fixture(scope="session")
def lattice_666():
    return build_lattice((6, 6, 6), np.ones((6, 6, 6), bool), "3d")


@pytest.fixture(scope="session")
def ugl_666(lattice_666):
    return build_ugl(lattice_666)


@pytest.fixture(scope="session")
def small_ar_dataset():
    """T=60, K=3, P=1 dataset on a 4x4x2 lattice with its structures."""
    rng = np.random.default_rng(99)
    t, k = 60, 3
    lat = build_lattice((4, 4, 2), np.ones((4, 4, 2), bool))
    x = np.column_stack([rng.standard_normal((t, k - 1)), np.ones(t)])
    n = lat.n_voxels
    w = rng.standard_normal((k, n))
    e = rng.standard_normal((t, n))
    y = x @ w + 0.5 * e
    ds = GlmDataset(y=y, x=x, p=1, lattice=lat)
    return ds, GmrfPriors(d_w=build_ugl(lat)), precompute(ds)


@pytest.fixture(scope="session")
def synth_small():
    """Appendix-style synthetic on a small block (fast, deterministic)."""
    cfg = SynthConfig(block_dims=(12, 12, 8), mask_dims=(8, 8, 4), t=100, seed=7)
    return simulate(cfg)
