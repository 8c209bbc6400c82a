import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dannte import kernels

py = kernels.get_backend("python")
needs_ext = pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="extension not built")


def problem(seed, B=3, W=5, F=4, H=6):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=(B, W, F)), rng.normal(scale=0.5, size=(4 * H, F)),
            rng.normal(scale=0.5, size=(4 * H, H)), rng.normal(scale=0.1, size=4 * H),
            rng.normal(size=(B, H)))


def test_default_backend_prefers_extension():
    expected = "cython" if "cython" in kernels.BACKENDS else "python"
    if not os.environ.get("DANNTE_KERNELS"):
        assert kernels.BACKEND == expected


def test_environment_forces_fallback():
    code = "import dannte.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, DANNTE_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend_fails_import():
    env = dict(os.environ, DANNTE_KERNELS="fortran")
    out = subprocess.run([sys.executable, "-c", "import dannte"], env=env, capture_output=True,
                         text=True)
    assert out.returncode != 0 and "fortran" in out.stderr


def test_fallback_final_state_matches_full_forward():
    x, w, u, b, _ = problem(0)
    h_seq, _, _ = py.lstm_forward(x, w, u, b)
    np.testing.assert_array_equal(py.lstm_final(x, w, u, b), h_seq[-1])


@needs_ext
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), B=st.integers(1, 9), W=st.integers(1, 12),
       F=st.integers(1, 7), H=st.integers(1, 10))
def test_extension_matches_fallback(seed, B, W, F, H):
    cy = kernels.get_backend("cython")
    x, w, u, b, dh = problem(seed, B, W, F, H)
    ref = py.lstm_forward(x, w, u, b)
    got = cy.lstm_forward(x, w, u, b)
    for r, g in zip(ref, got):
        np.testing.assert_allclose(g, r, rtol=0, atol=1e-12)
    np.testing.assert_allclose(cy.lstm_final(x, w, u, b), ref[0][-1], rtol=0, atol=1e-12)
    for r, g in zip(py.lstm_backward(x, w, u, *ref, dh), cy.lstm_backward(x, w, u, *got, dh)):
        np.testing.assert_allclose(g, r, rtol=0, atol=1e-11)


@needs_ext
def test_extension_is_deterministic():
    cy = kernels.get_backend("cython")
    x, w, u, b, dh = problem(5, B=16, W=16, F=6, H=32)
    a = cy.lstm_backward(x, w, u, *cy.lstm_forward(x, w, u, b), dh)
    c = cy.lstm_backward(x, w, u, *cy.lstm_forward(x, w, u, b), dh)
    for p, q in zip(a, c):
        assert p.tobytes() == q.tobytes()
