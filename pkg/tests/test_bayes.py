import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brpg.bayes import (BetaBelief, DataError, MLEFallbackWarning, Posterior, TransitionDataset,
                        mle, posterior_update, sample_theta)

NAMES = ("theta_s", "theta_e")


def test_conjugate_update():
    post = posterior_update(Posterior.uniform(["x"]), TransitionDataset([("x", 3, 5)]))
    assert (post["x"].a, post["x"].b) == (4, 3)
    assert post.n_observations == (5,)


def test_empty_dataset_is_identity():
    prior = Posterior.uniform(NAMES)
    assert posterior_update(prior, TransitionDataset()) == prior


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(NAMES), st.integers(0, 20), st.integers(0, 20)),
                max_size=8), st.integers(0, 8))
def test_sequential_updates_equal_batch(raw, cut):
    recs = [(n, min(s, t), t) for n, s, t in raw]
    prior = Posterior.uniform(NAMES)
    a, b = TransitionDataset(recs[:cut]), TransitionDataset(recs[cut:])
    assert posterior_update(posterior_update(prior, a), b) == posterior_update(prior, a + b)
    full = posterior_update(prior, a + b)
    for name in NAMES:
        s = sum(r[1] for r in recs if r[0] == name)
        n = sum(r[2] for r in recs if r[0] == name)
        assert full[name].mean == pytest.approx((1 + s) / (2 + n))


def test_unknown_component_and_bad_counts():
    with pytest.raises(DataError):
        posterior_update(Posterior.uniform(NAMES), TransitionDataset([("other", 1, 2)]))
    with pytest.raises(DataError):
        TransitionDataset([("x", 3, 2)])
    with pytest.raises(ValueError):
        BetaBelief(0.0, 1.0)
    with pytest.raises(ValueError):
        Posterior(("x", "x"), (BetaBelief(1, 1), BetaBelief(1, 1)))


def test_sampling_contracts():
    post = Posterior(("x", "y"), (BetaBelief(1e9, 1.0), BetaBelief(2.0, 2.0)))
    th = sample_theta(post, 100, 0)
    assert th.shape == (100, 2)
    assert np.all(np.abs(th[:, 0] - 1.0) <= 1e-3)
    np.testing.assert_array_equal(th, sample_theta(post, 100, 0))
    with pytest.raises(ValueError):
        sample_theta(post, 0, 0)


def test_beta_moment():
    th = sample_theta(Posterior(("x",), (BetaBelief(2.0, 2.0),)), 10**5, 1)[:, 0]
    se = np.sqrt(0.05 / 10**5)  # Beta(2,2) variance is 1/20
    assert abs(th.mean() - 0.5) <= 3 * se


def test_posterior_concentrates():
    p, eps = 0.3, 0.05
    for n, bound in [(10, 1.0), (10**4, 1e-3)]:
        post = posterior_update(Posterior.uniform(["x"]),
                                TransitionDataset([("x", int(p * n), n)]))
        th = sample_theta(post, 10**4, 2)[:, 0]
        outside = np.mean(np.abs(th - p) > eps)
        assert outside <= bound
    assert outside == 0.0


def test_mle():
    data = TransitionDataset([("theta_s", 3, 5), ("theta_e", 0, 4)])
    np.testing.assert_allclose(mle(data, NAMES), [0.6, 0.0])
    with pytest.warns(MLEFallbackWarning):
        out = mle(TransitionDataset([("theta_s", 0, 0)]), NAMES)
    np.testing.assert_allclose(out, [0.5, 0.5])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        mle(data, NAMES)


def test_csv_round_trip(tmp_path):
    data = TransitionDataset([("theta_s", 2, 7), ("theta_e", 1, 3)])
    path = tmp_path / "d.csv"
    text = data.to_csv(path)
    assert text.splitlines()[0] == "component,successes,trials"
    assert TransitionDataset.from_csv(path) == data


def test_point_mass_posterior():
    post = Posterior.point_mass(NAMES, [0.3, 0.0])
    th = sample_theta(post, 50, 3)
    np.testing.assert_allclose(th, np.broadcast_to([0.3, 0.0], th.shape), atol=1e-3)
