"""Hot tooth-sum kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``COMBRAMAN_BACKEND`` (``numba`` or
``numpy``); ``numba`` is the default when the package imports cleanly.

Both paths evaluate every term into its own slot (indexed by tooth position)
and then combine the slots with the same fixed pairwise tree, so results do not
depend on evaluation order or thread count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_requested = os.environ.get("COMBRAMAN_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"COMBRAMAN_BACKEND must be 'numba' or 'numpy', not {_requested!r}")

HAVE_NUMBA = False
if _requested == "numba":
    try:
        import numba
        from numba import njit, prange

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - depends on environment
        HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# --- numpy reference path ---------------------------------------------------


def tree_sum_numpy(x: np.ndarray):
    """Pairwise sum with a fixed tree: adjacent pairs, odd tail carried up."""
    x = np.asarray(x)
    if x.size == 0:
        return x.dtype.type(0)
    while x.size > 1:
        if x.size % 2:
            head = x[:-1:2] + x[1::2]
            x = np.concatenate((head, x[-1:]))
        else:
            x = x[0::2] + x[1::2]
    return x[0]


def _chunked(fn, n, workers, *arrays):
    if workers <= 1 or n < 2 * workers:
        return fn(*arrays)
    edges = np.linspace(0, n, workers + 1).astype(np.int64)
    with ThreadPoolExecutor(workers) as ex:
        parts = list(
            ex.map(lambda ab: fn(*(a[ab[0] : ab[1]] for a in arrays)), zip(edges[:-1], edges[1:]))
        )
    return np.concatenate(parts)


def _raman_terms_numpy(w_hi, e_prod, dphi, w_res):
    return e_prod / (2.0 * (w_hi - w_res)) * np.exp(1j * dphi)


def _stark_terms_numpy(w, e_sq, w_res, cr_sign):
    return e_sq * (0.25 / (w - w_res) + cr_sign * 0.25 / (w + w_res))


def raman_pair_sum_numpy(w_hi, e_prod, dphi, w_res, workers=1):
    terms = _chunked(
        lambda a, b, d: _raman_terms_numpy(a, b, d, w_res), len(w_hi), workers, w_hi, e_prod, dphi
    )
    return complex(tree_sum_numpy(terms))


def stark_sum_numpy(w, e_sq, w_res, cr_sign, workers=1):
    terms = _chunked(lambda a, b: _stark_terms_numpy(a, b, w_res, cr_sign), len(w), workers, w, e_sq)
    return float(tree_sum_numpy(terms))


# --- numba path -------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _tree_sum_real(x):
        n = x.size
        if n == 0:
            return 0.0
        buf = x.copy()
        while n > 1:
            half = n // 2
            for k in range(half):
                buf[k] = buf[2 * k] + buf[2 * k + 1]
            if n % 2:
                buf[half] = buf[n - 1]
                n = half + 1
            else:
                n = half
        return buf[0]

    @njit(cache=True)
    def _tree_sum_complex(x):
        n = x.size
        if n == 0:
            return 0j
        buf = x.copy()
        while n > 1:
            half = n // 2
            for k in range(half):
                buf[k] = buf[2 * k] + buf[2 * k + 1]
            if n % 2:
                buf[half] = buf[n - 1]
                n = half + 1
            else:
                n = half
        return buf[0]

    @njit(parallel=True, cache=True)
    def _raman_terms_numba(w_hi, e_prod, dphi, w_res):
        n = w_hi.size
        out = np.empty(n, dtype=np.complex128)
        for k in prange(n):
            out[k] = e_prod[k] / (2.0 * (w_hi[k] - w_res)) * (np.cos(dphi[k]) + 1j * np.sin(dphi[k]))
        return out

    @njit(parallel=True, cache=True)
    def _stark_terms_numba(w, e_sq, w_res, cr_sign):
        n = w.size
        out = np.empty(n, dtype=np.float64)
        for k in prange(n):
            out[k] = e_sq[k] * (0.25 / (w[k] - w_res) + cr_sign * 0.25 / (w[k] + w_res))
        return out

    def raman_pair_sum_numba(w_hi, e_prod, dphi, w_res, workers=1):
        return complex(_tree_sum_complex(_raman_terms_numba(w_hi, e_prod, dphi, float(w_res))))

    def stark_sum_numba(w, e_sq, w_res, cr_sign, workers=1):
        return float(_tree_sum_real(_stark_terms_numba(w, e_sq, float(w_res), float(cr_sign))))

    def tree_sum_numba(x):
        x = np.ascontiguousarray(x)
        if np.iscomplexobj(x):
            return _tree_sum_complex(x.astype(np.complex128))
        return _tree_sum_real(x.astype(np.float64))

    def set_threads(n: int) -> None:
        numba.set_num_threads(n)

else:

    def set_threads(n: int) -> None:  # numpy path is single-threaded per chunk
        if n < 1:
            raise ValueError("thread count must be positive")


def raman_pair_sum(w_hi, e_prod, dphi, w_res, workers=1, backend=None):
    """Sum of E_n E_{n-q} exp(i dphi_n) / (2 (w_n - w_res)) over pairs."""
    args = (
        np.ascontiguousarray(w_hi, dtype=np.float64),
        np.ascontiguousarray(e_prod, dtype=np.float64),
        np.ascontiguousarray(dphi, dtype=np.float64),
        float(w_res),
    )
    if (backend or BACKEND) == "numba":
        return raman_pair_sum_numba(*args, workers)
    return raman_pair_sum_numpy(*args, workers)


def stark_sum(w, e_sq, w_res, cr_sign, workers=1, backend=None):
    """Sum of E_n^2 [1/(4 (w_n - w_res)) + s/(4 (w_n + w_res))]."""
    args = (
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(e_sq, dtype=np.float64),
        float(w_res),
        float(cr_sign),
    )
    if (backend or BACKEND) == "numba":
        return stark_sum_numba(*args, workers)
    return stark_sum_numpy(*args, workers)


def tree_sum(x, backend=None):
    if (backend or BACKEND) == "numba":
        return tree_sum_numba(x)
    return tree_sum_numpy(x)
