import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from combraman import _kernels as K


def _data(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(2e15, 3e15, n), rng.uniform(0, 1, n), rng.uniform(-3, 3, n)


@settings(max_examples=100)
@given(arrays(np.float64, st.integers(0, 300), elements=st.floats(-1e6, 1e6)))
def test_tree_sum_close_to_fsum(x):
    assert float(K.tree_sum_numpy(x)) == pytest.approx(math.fsum(x), abs=1e-6)


@pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba unavailable")
@pytest.mark.parametrize("n", [0, 1, 2, 3, 1000, 100001])
def test_backends_bit_identical(n):
    w, e, d = _data(n)
    assert K.raman_pair_sum(w, e, d, 1e15, backend="numba") == K.raman_pair_sum(w, e, d, 1e15, backend="numpy")
    assert K.stark_sum(w, e, 1e15, 1.0, backend="numba") == K.stark_sum(w, e, 1e15, 1.0, backend="numpy")
    assert K.tree_sum(e, backend="numba") == K.tree_sum(e, backend="numpy")


@pytest.mark.parametrize("workers", [2, 3, 7])
def test_numpy_workers_bit_identical(workers):
    w, e, d = _data(50001, 3)
    ref = K.raman_pair_sum(w, e, d, 1e15, backend="numpy")
    assert K.raman_pair_sum(w, e, d, 1e15, workers=workers, backend="numpy") == ref
    assert K.stark_sum(w, e, 1e15, -1.0, workers=workers, backend="numpy") == K.stark_sum(w, e, 1e15, -1.0,
                                                                                       backend="numpy")


def test_raman_sum_matches_direct_formula():
    w, e, d = _data(101, 5)
    direct = np.sum(e / (2 * (w - 1e15)) * np.exp(1j * d))
    assert K.raman_pair_sum(w, e, d, 1e15) == pytest.approx(direct, rel=1e-13)


def test_stark_sum_matches_direct_formula():
    w, e, _ = _data(101, 6)
    direct = np.sum(e * (0.25 / (w - 1e15) + 0.25 / (w + 1e15)))
    assert K.stark_sum(w, e, 1e15, 1.0) == pytest.approx(direct, rel=1e-13)
