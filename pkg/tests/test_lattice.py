import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsglm.lattice import adjacent_pairs, build_lattice, build_ugl, build_wgl


def brute_force_pairs(mask, mode):
    nx, ny, nz = mask.shape
    lat = build_lattice((nx, ny, nz), mask, mode)
    g2v = lat.grid_to_voxel.reshape(nz, ny, nx)
    pairs = set()
    offsets = [(1, 0, 0), (0, 1, 0)] if mode == "2d" else [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if g2v[z, y, x] < 0:
                    continue
                for dx, dy, dz in offsets:
                    X, Y, Z = x + dx, y + dy, z + dz
                    if X < nx and Y < ny and Z < nz and g2v[Z, Y, X] >= 0:
                        pairs.add((g2v[z, y, x], g2v[Z, Y, X]))
    return pairs


def test_two_voxel_lattice():
    lat = build_lattice((2, 1, 1), np.ones((2, 1, 1), bool))
    assert lat.n_voxels == 2
    g = build_ugl(lat)
    assert g.n_pairs == 1
    np.testing.assert_array_equal(g.d.to_dense(), [[1.0, -1.0], [-1.0, 1.0]])
    np.testing.assert_array_equal(g.g.toarray(), [[1.0, -1.0]])


def test_333_pair_count(lattice_333, ugl_333):
    assert lattice_333.n_voxels == 27
    assert ugl_333.n_pairs == 54  # 3 axes x 18 pairs each
    pairs = adjacent_pairs(lattice_333)
    per_axis = {}
    for i, j in pairs:
        d = lattice_333.voxel_to_grid[j] - lattice_333.voxel_to_grid[i]
        per_axis[tuple(d)] = per_axis.get(tuple(d), 0) + 1
    assert per_axis == {(1, 0, 0): 18, (0, 1, 0): 18, (0, 0, 1): 18}


def test_checkerboard_corners_no_pairs():
    mask = np.zeros((2, 2, 1), bool)
    mask[0, 0, 0] = mask[1, 1, 0] = True
    lat = build_lattice((2, 2, 1), mask)
    assert lat.n_voxels == 2
    assert build_ugl(lat).n_pairs == 0


def test_empty_mask_errors():
    with pytest.raises(ValueError, match="no voxels"):
        build_lattice((2, 2, 2), np.zeros((2, 2, 2), bool))


def test_scan_order_x_fastest():
    lat = build_lattice((3, 2, 2), np.ones((3, 2, 2), bool))
    # voxel index increases x-fastest, then y, then z
    np.testing.assert_array_equal(lat.voxel_to_grid[0], [0, 0, 0])
    np.testing.assert_array_equal(lat.voxel_to_grid[1], [1, 0, 0])
    np.testing.assert_array_equal(lat.voxel_to_grid[3], [0, 1, 0])
    np.testing.assert_array_equal(lat.voxel_to_grid[6], [0, 0, 1])


def test_interior_diagonal_3d(lattice_333, ugl_333):
    center = lattice_333.grid_to_voxel.reshape(3, 3, 3)[1, 1, 1]
    assert ugl_333.d.to_dense()[center, center] == 6.0


def test_interior_diagonal_2d():
    lat = build_lattice((3, 3, 2), np.ones((3, 3, 2), bool), mode="2d")
    g = build_ugl(lat)
    d = g.d.to_dense()
    center = lat.grid_to_voxel.reshape(2, 3, 3)[0, 1, 1]
    assert d[center, center] == 4.0
    # block diagonal across slices: no coupling between z=0 and z=1
    z = lat.voxel_to_grid[:, 2]
    cross = d[np.ix_(z == 0, z == 1)]
    assert np.all(cross == 0.0)


def test_gtg_equals_d_exactly(ugl_333):
    gtg = (ugl_333.g.T @ ugl_333.g).toarray()
    np.testing.assert_array_equal(gtg, ugl_333.d.to_dense())


def test_laplacian_null_vector(ugl_333):
    d = ugl_333.d.to_dense()
    np.testing.assert_array_equal(d @ np.ones(27), np.zeros(27))
    eigvals = np.linalg.eigvalsh(d)
    assert eigvals[0] > -1e-12  # positive semidefinite


@settings(max_examples=25, deadline=None)
@given(
    bits=st.integers(min_value=1, max_value=2**27 - 1),
    mode=st.sampled_from(["2d", "3d"]),
)
def test_pair_count_matches_brute_force(bits, mode):
    mask = np.array([(bits >> i) & 1 for i in range(27)], dtype=bool).reshape(3, 3, 3)
    if not mask.any():
        return
    lat = build_lattice((3, 3, 3), mask, mode)
    g = build_ugl(lat)
    expected = brute_force_pairs(mask, mode)
    assert g.n_pairs == len(expected)
    got = {(int(i), int(j)) for i, j in g.pairs}
    assert got == expected
    np.testing.assert_array_equal((g.g.T @ g.g).toarray(), g.d.to_dense())
    np.testing.assert_allclose(g.d.to_dense().sum(axis=1), 0.0, atol=0)


def test_wgl_isotropic_matches_scaled_ugl(lattice_333, ugl_333):
    lat = build_lattice((3, 3, 3), np.ones((3, 3, 3), bool), voxel_size=(2.0, 2.0, 2.0))
    w = build_wgl(lat)
    np.testing.assert_allclose(w.d.to_dense(), ugl_333.d.to_dense() / 4.0, atol=1e-14)


def test_wgl_two_voxels_2mm():
    lat = build_lattice((2, 1, 1), np.ones((2, 1, 1), bool), voxel_size=(2.0, 1.0, 1.0))
    w = build_wgl(lat)
    np.testing.assert_allclose(w.d.to_dense(), [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)


def test_wgl_anisotropic_weights():
    lat = build_lattice((2, 2, 2), np.ones((2, 2, 2), bool), voxel_size=(3.0, 3.0, 4.0))
    w = build_wgl(lat)
    axis = w.pairs
    for (i, j), weight in zip(axis, w.weights):
        d = (lat.voxel_to_grid[j] - lat.voxel_to_grid[i]) * np.array([3.0, 3.0, 4.0])
        expected = 1.0 / np.sum(d**2)
        assert weight == pytest.approx(expected)
    z_pairs = [w is not None for w in w.weights]
    dz = lat.voxel_to_grid[w.pairs[:, 1], 2] - lat.voxel_to_grid[w.pairs[:, 0], 2]
    np.testing.assert_allclose(w.weights[dz == 1], 1.0 / 16.0)
    np.testing.assert_allclose(w.weights[dz == 0], 1.0 / 9.0)
    # weighted identity G' C G = D via the sqrt-scaled incidence rows
    np.testing.assert_allclose((w.g.T @ w.g).toarray(), w.d.to_dense(), atol=1e-14)


def test_wgl_explicit_and_errors():
    lat = build_lattice((2, 1, 1), np.ones((2, 1, 1), bool))
    w = build_wgl(lat, weight_rule="explicit", weights=np.array([2.0]))
    np.testing.assert_allclose(w.d.to_dense(), [[2.0, -2.0], [-2.0, 2.0]])
    with pytest.raises(ValueError):
        build_wgl(lat, weight_rule="explicit", weights=np.array([-1.0]))
    with pytest.raises(ValueError):
        build_wgl(lat, weight_rule="nope")
