import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgeoffload.utility import UtilitySpec


@given(st.floats(-5, 20), st.floats(-5, 20), st.floats(0.1, 5), st.sampled_from(["log1p", "linear"]))
def test_concave_nondecreasing(x, y, w, kind):
    g = UtilitySpec(kind, w)
    lo, hi = min(x, y), max(x, y)
    assert g.value(hi) >= g.value(lo) - 1e-12
    mid = 0.5 * (lo + hi)
    assert g.value(mid) >= 0.5 * (g.value(lo) + g.value(hi)) - 1e-9


def test_values_and_beta():
    g = UtilitySpec("log1p", 2.0)
    assert g.value(0.0) == 0.0
    assert g.value(np.e - 1) == pytest.approx(2.0)
    assert g.value(-1.0) == -2.0
    assert g.beta == 2.0
    assert UtilitySpec("linear", np.array([1.0, 3.0])).beta == 3.0


def test_inverse_derivative():
    g = UtilitySpec("log1p", 1.0)
    assert g.inverse_derivative(0.5) == pytest.approx(1.0)
    assert np.isnan(g.inverse_derivative(0.0))
    assert np.isnan(g.inverse_derivative(1.5))
    assert np.isnan(UtilitySpec("linear", 1.0).inverse_derivative(0.5))
    x = 3.2
    assert g.inverse_derivative(g.derivative(x)) == pytest.approx(x)


def test_rejects_bad_specs():
    with pytest.raises(ValueError):
        UtilitySpec("sqrt")
    with pytest.raises(ValueError):
        UtilitySpec("log1p", 0.0)
