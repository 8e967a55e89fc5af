"""Randomised geometric and statistical identities, 200 cases per property and manifold."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

import checks
from rfda.mean import FrechetOptions

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@pytest.mark.parametrize("kind", checks.KINDS)
@pytest.mark.parametrize("name", list(checks.PROP2))
@given(seed=seeds)
def test_transport_identities(kind, name, seed):
    fn, tol = checks.PROP2[name]
    assert fn(kind, np.random.default_rng(seed)) <= tol


@pytest.mark.parametrize("kind", checks.KINDS)
@given(seed=seeds)
def test_exp_log_round_trip(kind, seed):
    assert checks.check_exp_log(kind, np.random.default_rng(seed)) <= 1e-9


@pytest.mark.parametrize("kind", checks.KINDS)
@given(seed=seeds)
def test_frechet_stationarity(kind, seed):
    assert checks.check_stationarity(kind, np.random.default_rng(seed)) <= FrechetOptions().grad_tol


@pytest.mark.parametrize("kind", checks.KINDS)
@given(seed=seeds)
def test_frame_invariance(kind, seed):
    ev, sc, pred = checks.check_frame_invariance(kind, np.random.default_rng(seed))
    assert ev <= 1e-9
    assert sc <= 1e-8
    assert pred <= 1e-8


@given(seed=seeds)
def test_truncation_bound_on_sphere(seed):
    # curvature >= 0: the geodesic ISE of a truncated reconstruction never exceeds
    # the tangent-space residual
    assert checks.check_truncation_bound(np.random.default_rng(seed)) <= 1e-12
