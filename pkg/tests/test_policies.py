import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from brpg.policies import (PolicyParams, log_policy_grad, project_w, to_table)
from oracles import central_diff

finite = st.floats(-30, 30, allow_nan=False)


def test_softmax_closed_forms():
    np.testing.assert_allclose(to_table(np.zeros((1, 2))), [[0.5, 0.5]])
    np.testing.assert_allclose(to_table(np.array([[np.log(3.0), 0.0]])), [[0.75, 0.25]])
    with np.errstate(over="raise", invalid="raise"):
        pi = to_table(np.array([[1000.0, 0.0]]))
    assert pi[0, 0] == pytest.approx(1.0) and 0 <= pi[0, 1] < 1e-300 + 1e-12


def test_non_finite_logits_rejected():
    with pytest.raises(ValueError):
        to_table(np.array([[np.inf, 0.0]]))


@settings(max_examples=100, deadline=None)
@given(arrays(float, (4, 3), elements=finite))
def test_rows_are_strictly_positive_distributions(alpha):
    pi = to_table(PolicyParams(alpha))
    assert np.all(pi > 0)
    np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-12)


def test_score_closed_forms():
    g = log_policy_grad(np.zeros((2, 2)), 1, 0)
    np.testing.assert_allclose(g, [[0, 0], [0.5, -0.5]])
    g = log_policy_grad(np.array([[40.0, 0.0]]), 0, 0)
    np.testing.assert_allclose(g, 0.0, atol=1e-12)


def test_score_matches_finite_differences_seed3():
    alpha = np.random.default_rng(3).normal(size=(3, 4))
    for s in range(3):
        for a in range(4):
            fd = central_diff(lambda x: np.log(to_table(x)[s, a]), alpha)
            np.testing.assert_allclose(log_policy_grad(alpha, s, a), fd, atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(arrays(float, (3, 3), elements=finite))
def test_score_function_identity(alpha):
    pi = to_table(alpha)
    for s in range(3):
        total = sum(pi[s, a] * log_policy_grad(alpha, s, a) for a in range(3))
        np.testing.assert_allclose(total, 0.0, atol=1e-10)


def test_projection_examples():
    rng = np.random.default_rng(0)
    d = rng.normal(size=(5, 4))
    d /= np.linalg.norm(d)
    inside = PolicyParams(25.0 * d)
    assert project_w(inside).alpha is inside.alpha or np.array_equal(project_w(inside).alpha, inside.alpha)
    out = project_w(PolicyParams(100.0 * d))
    assert np.linalg.norm(out.alpha) == pytest.approx(50.0)
    np.testing.assert_allclose(out.alpha / 50.0, d)
    assert np.all(project_w(PolicyParams.uniform(5, 4)).alpha == 0)


@settings(max_examples=100, deadline=None)
@given(arrays(float, (3, 2), elements=st.floats(-1e3, 1e3)), st.floats(0.1, 100))
def test_projection_bound_and_idempotence(alpha, bound):
    once = project_w(PolicyParams(alpha, bound))
    assert np.linalg.norm(once.alpha) <= bound * (1 + 1e-12)
    np.testing.assert_array_equal(project_w(once).alpha, once.alpha)


def test_bound_must_be_positive():
    with pytest.raises(ValueError):
        PolicyParams(np.zeros((1, 1)), 0.0)
