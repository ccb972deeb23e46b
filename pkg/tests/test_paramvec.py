"""Flat parameter-vector algebra: exact examples plus algebraic properties."""

import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from weiavg.paramvec import (
    ZERO_NORM_THRESHOLD,
    DegenerateGlobalUpdate,
    add,
    dot,
    norm,
    paramvec,
    projection_norm,
    scale,
    zeros,
)

finite = st.floats(min_value=-100.0, max_value=100.0, allow_nan=False)


def vectors(length):
    return st.lists(finite, min_size=length, max_size=length).map(paramvec)


def test_add_example():
    assert np.array_equal(add(paramvec([1.0, 2.0]), paramvec([3.0, 4.0])), [4.0, 6.0])


def test_scale_example():
    assert np.array_equal(scale(paramvec([1.0, 2.0]), 0.5), [0.5, 1.0])


def test_dot_example():
    assert dot(paramvec([2.0, 0.0]), paramvec([1.0, 1.0])) == 2.0


def test_norm_example():
    assert norm(paramvec([3.0, 4.0])) == 5.0


def test_projection_norm_example():
    p = projection_norm(paramvec([2.0, 0.0]), paramvec([1.0, 1.0]))
    assert p == pytest.approx(math.sqrt(2.0), rel=1e-12)


def test_projection_is_signed():
    p = projection_norm(paramvec([-2.0, 0.0]), paramvec([1.0, 0.0]))
    assert p == -2.0


def test_zeros():
    z = zeros(3)
    assert np.array_equal(z, [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        zeros(0)


def test_degenerate_reference_raises():
    u = paramvec([1.0, 2.0])
    with pytest.raises(DegenerateGlobalUpdate):
        projection_norm(u, zeros(2))
    # Threshold is on the norm of the reference, not its coordinates.
    tiny = paramvec([ZERO_NORM_THRESHOLD / 2.0, 0.0])
    with pytest.raises(DegenerateGlobalUpdate):
        projection_norm(u, tiny)
    ok = paramvec([ZERO_NORM_THRESHOLD * 10.0, 0.0])
    assert math.isfinite(projection_norm(u, ok))


def test_validation_rejects_bad_input():
    with pytest.raises(ValueError):
        paramvec([[1.0, 2.0]])
    with pytest.raises(ValueError):
        paramvec([])
    with pytest.raises(ValueError):
        paramvec([1.0, float("nan")])
    with pytest.raises(ValueError):
        paramvec([float("inf")])


def test_overflow_is_rejected_not_propagated():
    huge = paramvec([1e308, 0.0])
    with pytest.raises(ValueError):
        add(huge, huge)
    with pytest.raises(ValueError):
        scale(huge, 1e308)


def test_results_are_frozen_and_inputs_untouched():
    a = paramvec([1.0, 2.0])
    b = paramvec([3.0, 4.0])
    c = add(a, b)
    with pytest.raises(ValueError):
        c[0] = 9.0
    with pytest.raises(ValueError):
        a[0] = 9.0
    assert np.array_equal(a, [1.0, 2.0]) and np.array_equal(b, [3.0, 4.0])


def test_paramvec_does_not_freeze_caller_array():
    # A writable float64 array passed in stays writable: the vector is a copy.
    buf = np.array([1.0, 2.0, 3.0])
    v = paramvec(buf)
    buf[0] = 99.0
    assert buf.flags.writeable
    assert v[0] == 1.0
    # An already-frozen vector may be aliased; nothing to protect there.
    w = paramvec(v)
    assert not w.flags.writeable


@given(vectors(5), vectors(5))
def test_dot_symmetry(u, v):
    assert dot(u, v) == pytest.approx(dot(v, u), rel=1e-12, abs=1e-12)


@given(vectors(4), st.floats(min_value=-10.0, max_value=10.0, allow_nan=False))
def test_norm_homogeneity(v, c):
    assert norm(scale(v, c)) == pytest.approx(abs(c) * norm(v), rel=1e-9, abs=1e-9)


@given(vectors(6), vectors(6), vectors(6), finite, finite)
def test_projection_linearity(u, v, g, a, b):
    assume(norm(g) > 1e-6)
    lhs = projection_norm(add(scale(u, a), scale(v, b)), g)
    rhs = a * projection_norm(u, g) + b * projection_norm(v, g)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@given(st.lists(vectors(5), min_size=1, max_size=8))
def test_mean_projection_identity(updates):
    """Projections onto the simple average always average to its norm."""
    g = scale(updates[0], 0.0)
    for u in updates:
        g = add(g, u)
    g = scale(g, 1.0 / len(updates))
    assume(norm(g) > 1e-6)
    mean_proj = sum(projection_norm(u, g) for u in updates) / len(updates)
    assert mean_proj == pytest.approx(norm(g), rel=1e-9, abs=1e-9)
