import numpy as np
import pytest
from hypothesis import given, strategies as st

from ssflsim.attack import gaussian_update
from ssflsim.errors import ConfigError
from ssflsim.selection import (
    ClientState,
    cosine_score,
    fit_gaussian,
    select_clients,
    wasserstein2_gaussian,
)


def test_cosine_identical_vectors():
    v = np.array([1.0, 2.0, -3.0])
    assert cosine_score(v, v) == pytest.approx(1.0, abs=1e-12)


def test_cosine_orthogonal():
    assert cosine_score(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_cosine_matches_formula_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.normal(size=30)
        b = rng.normal(size=30)
        expected = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
        assert cosine_score(a, b) == pytest.approx(expected, abs=1e-12)


def test_cosine_zero_norm_convention():
    v = np.array([1.0, 2.0])
    assert cosine_score(v, np.zeros(2)) == 0.0
    assert cosine_score(np.zeros(2), v) == 0.0
    assert cosine_score(v, np.full(2, 1e-14)) == 0.0


def test_cosine_scale_invariant():
    rng = np.random.default_rng(1)
    w = rng.normal(size=20)
    h = rng.normal(size=20)
    for c in (1e-6, 0.5, 3.0, 1e6):
        assert cosine_score(w, c * h) == pytest.approx(cosine_score(w, h), abs=1e-12)


def test_fit_gaussian_constant():
    assert fit_gaussian(np.full(10, 3.5)) == (3.5, 0.0)


def test_fit_gaussian_two_points():
    mu, var = fit_gaussian(np.array([0.0, 2.0]))
    assert mu == 1.0 and var == 1.0


def test_fit_gaussian_recovers_parameters():
    draws = np.random.default_rng(2).normal(3.0, 2.0, size=1000)
    mu, var = fit_gaussian(draws)
    assert abs(mu - 3.0) < 0.2
    assert abs(var - 4.0) < 0.5


def test_fit_gaussian_too_small():
    with pytest.raises(ConfigError):
        fit_gaussian(np.array([1.0]))


def test_wasserstein_identical_zero():
    assert wasserstein2_gaussian(1.2, 0.8, 1.2, 0.8) == 0.0


def test_wasserstein_hand_values():
    # 1-D closed form (mu1-mu2)^2 + (sigma1-sigma2)^2.
    assert wasserstein2_gaussian(0.0, 1.0, 3.0, 1.0) == pytest.approx(9.0)
    assert wasserstein2_gaussian(0.0, 1.0, 0.0, 4.0) == pytest.approx(1.0)


def test_wasserstein_negative_variance():
    with pytest.raises(ValueError):
        wasserstein2_gaussian(0.0, -1.0, 0.0, 1.0)


@given(st.floats(-10, 10), st.floats(0, 25), st.floats(-10, 10), st.floats(0, 25))
def test_wasserstein_symmetry_nonnegative(mu1, var1, mu2, var2):
    a = wasserstein2_gaussian(mu1, var1, mu2, var2)
    b = wasserstein2_gaussian(mu2, var2, mu1, var1)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)
    assert a >= 0.0
    if mu1 == mu2 and var1 == var2:
        assert a == 0.0


def test_wasserstein_matches_matrix_form_oracle():
    # 1x1 covariance specialization of the trace form:
    # tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2) = v1 + v2 - 2 sqrt(v1 v2).
    rng = np.random.default_rng(3)
    for _ in range(100):
        mu1, mu2 = rng.normal(size=2)
        v1, v2 = rng.uniform(0, 5, size=2)
        expected = (mu1 - mu2) ** 2 + v1 + v2 - 2 * np.sqrt(np.sqrt(v1) * v2 * np.sqrt(v1))
        assert wasserstein2_gaussian(mu1, v1, mu2, v2) == pytest.approx(expected, abs=1e-9)


def _states(vectors, malicious=()):
    return [ClientState(i, i in malicious, np.asarray(v, dtype=float))
            for i, v in enumerate(vectors)]


def test_select_honest_vs_negated_attacker():
    w = np.array([1.0, 1.0, 0.5, -0.2])
    states = _states([w, -w], malicious=(1,))
    updates = {0: w, 1: -w}
    scores = select_clients(w, states, updates, delta=0.5, mode="cosine")
    assert scores[0].admitted and scores[0].cosine == pytest.approx(1.0)
    assert not scores[1].admitted and scores[1].cosine == pytest.approx(-1.0)


def test_select_admitted_set_scale_invariant_cosine_mode():
    rng = np.random.default_rng(4)
    w = rng.normal(size=12)
    hists = [rng.normal(size=12) for _ in range(5)]
    base = select_clients(w, _states(hists), {i: w for i in range(5)},
                          delta=0.3, mode="cosine")
    scaled = select_clients(w, _states([7.5 * h for h in hists]),
                            {i: w for i in range(5)}, delta=0.3, mode="cosine")
    assert [s.admitted for s in base] == [s.admitted for s in scaled]


def test_select_fallback_top_cosine():
    w = np.array([1.0, 0.0, 0.0])
    hists = [np.array([1.0, 1.0, 0.0]),    # cos ~ 0.707
             np.array([0.0, 1.0, 0.0]),    # cos 0
             np.array([-1.0, 0.0, 0.0])]   # cos -1
    scores = select_clients(w, _states(hists), {i: w for i in range(3)},
                            delta=0.9, mode="cosine")
    assert [s.admitted for s in scores] == [True, False, False]


def test_select_fallback_prefers_distribution_gate():
    # Both candidates fail the cosine bar; the wild-variance one loses the
    # fallback even with the higher cosine.
    rng = np.random.default_rng(5)
    w = rng.normal(0.0, 0.05, size=400)
    honest = rng.normal(0.0, 0.05, size=400)
    attacker = gaussian_update([w], 10.0, rng)  # huge variance
    if cosine_score(w, attacker) <= cosine_score(w, honest):
        attacker = attacker + 0.3 * np.linalg.norm(attacker) * w / np.linalg.norm(w)
    assert cosine_score(w, attacker) > cosine_score(w, honest)
    scores = select_clients(w, _states([attacker, honest], malicious=(0,)),
                            {0: w, 1: w}, delta=0.99, mode="both")
    assert [s.admitted for s in scores] == [False, True]


def test_select_wasserstein_only_mode():
    w = np.array([0.0, 1.0, 0.0, 1.0])
    close = np.array([0.0, 1.1, 0.0, 0.9])
    far = np.array([5.0, -5.0, 5.0, -5.0])
    scores = select_clients(w, _states([close, far]), {0: w, 1: w},
                            delta=0.99, wasserstein_cap=0.5, mode="wasserstein")
    assert scores[0].admitted and not scores[1].admitted


def test_select_requires_clients():
    with pytest.raises(ConfigError):
        select_clients(np.ones(4), [], {}, delta=0.5)
    with pytest.raises(ConfigError):
        select_clients(np.ones(4), _states([np.ones(4)]), {}, delta=0.5)


def test_select_rejects_unknown_mode():
    with pytest.raises(ConfigError):
        select_clients(np.ones(4), _states([np.ones(4)]), {0: np.ones(4)},
                       delta=0.5, mode="sideways")


def test_gaussian_attacker_cosine_below_half():
    # Variance-10 noise against honest norm <= 1 vectors: over 100 seeded
    # trials the attacker's cosine almost never reaches 0.5.
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=400)
        w /= np.linalg.norm(w)
        honest = [rng.normal(0, 1 / np.sqrt(400), size=400) for _ in range(5)]
        attacker = gaussian_update(honest, 10.0, rng)
        if cosine_score(w, attacker) < 0.5:
            hits += 1
    assert hits >= 99
