import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage
from scipy.sparse.csgraph import connected_components

from ensemble_reach import _kernels_py, kernels

IMPLS = [_kernels_py]
try:
    from ensemble_reach import _kernels as _kc
    IMPLS.append(_kc)
except ImportError:  # pragma: no cover
    pass


def _label_oracle(points, radius):
    d = np.abs(points[:, None] - points[None, :])
    _, lab = connected_components(d <= radius, directed=False)
    # canonical relabel by first appearance
    remap, out = {}, []
    for x in lab:
        remap.setdefault(x, len(remap))
        out.append(remap[x])
    return np.array(out)


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=40),
       st.floats(0.01, 1.5))
def test_cluster_matches_graph_oracle(impl, pts, radius):
    z = np.array([complex(a, b) for a, b in pts])
    got = kernels.cluster_radius(z, radius, impl=impl)
    assert np.array_equal(got, _label_oracle(z, radius))


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.5))
def test_flood_matches_ndimage_oracle(impl, seed, density):
    rng = np.random.default_rng(seed)
    blocked = (rng.random((23, 17)) < density).astype(np.uint8)
    got = kernels.flood_reach(blocked, impl=impl)
    lab, _ = ndimage.label(blocked == 0)  # default structure is 4-connected
    border = np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))
    border = border[border > 0]
    want = np.isin(lab, border) & (blocked == 0)
    assert np.array_equal(got.astype(bool), want)


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_rasterize_marks_cells_touching_disk(impl, rng):
    xs, ys = rng.uniform(0, 1, 7), rng.uniform(0, 1, 7)
    h, n, r = 0.05, 20, 0.08
    got = kernels.rasterize_disks(xs, ys, 0.0, 0.0, h, h, n, n, r, impl=impl)
    # oracle: distance from each point to each cell rectangle
    cx = np.arange(n) * h
    want = np.zeros((n, n), bool)
    for x, y in zip(xs, ys):
        dx = np.maximum(np.maximum(cx - x, x - (cx + h)), 0)
        dy = np.maximum(np.maximum(cx - y, y - (cx + h)), 0)
        want |= dx[:, None] ** 2 + dy[None, :] ** 2 <= r * r
    assert np.array_equal(got.astype(bool), want)


def test_backends_agree_on_large_input(rng):
    if len(IMPLS) < 2:
        pytest.skip("compiled kernels not built")
    z = rng.normal(size=500) + 1j * rng.normal(size=500)
    a = kernels.cluster_radius(z, 0.1, impl=IMPLS[0])
    b = kernels.cluster_radius(z, 0.1, impl=IMPLS[1])
    assert np.array_equal(a, b)
    blk = (rng.random((128, 128)) < 0.4).astype(np.uint8)
    assert np.array_equal(kernels.flood_reach(blk, impl=IMPLS[0]), kernels.flood_reach(blk, impl=IMPLS[1]))


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
