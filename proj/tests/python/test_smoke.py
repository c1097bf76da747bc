import math

import numpy as np
import pytest

import signflip


def logistic_data(n=40, m=6, seed=3):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    z = np.column_stack([np.ones(n), rng.normal(size=n)])
    eta = 0.4 * z[:, 1][:, None] + np.outer(x, [1.5, 0, 0, 0, 0, 0][:m])
    y = (rng.uniform(size=(n, m)) < 1 / (1 + np.exp(-eta))).astype(float)
    return y, x, z


def test_plan_identity_row_and_determinism():
    a = signflip.make_plan(10, 50, seed=7)
    b = signflip.make_plan(10, 50, seed=7)
    assert a.shape == (50, 10)
    assert np.all(a[0] == 1)
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {-1, 1}
    assert signflip.make_exhaustive(4).shape == (16, 4)


def test_fit_null_intercept_only_poisson():
    y = np.array([0.0, 1, 2, 3, 4])
    fit = signflip.fit_null(y, np.arange(5.0), np.ones((5, 1)), family="poisson")
    assert fit["converged"]
    assert math.isclose(math.exp(fit["gamma_hat"][0]), 2.0, rel_tol=1e-9)
    assert np.allclose(fit["mu_hat"], 2.0)


def test_flip_matrix_and_maxt():
    y, x, z = logistic_data()
    stats = signflip.flip_matrix(y, x, z, family="binomial", flips=500, seed=11)
    assert stats.shape == (500, y.shape[1])
    p0 = signflip.perm_pvalue(stats[:, 0])
    assert 0 < p0 <= 1
    sd = signflip.maxt(stats, alpha=0.05, step_down=True)
    ss = signflip.maxt(stats, alpha=0.05, step_down=False)
    assert np.all(sd["adj_p"] <= ss["adj_p"] + 1e-15)
    assert np.all(sd["adj_p"] >= sd["raw_p"] - 1e-15)
    closed = signflip.closed_testing(stats, psi="maxabs")
    assert np.allclose(closed["adj_p"], sd["adj_p"])


def test_analyze_report():
    y, x, z = logistic_data()
    out = signflip.analyze(y, x, z, family="binomial", flips=400, seed=5, ids=[f"g{i}" for i in range(6)])
    assert out["ids"][0] == "g0"
    assert len(out["rejected"]) == 6
    assert "g5" in out["report"]


def test_competitors_and_holm():
    y, x, z = logistic_data()
    p = signflip.competitor_tests(y[:, 0], x, z, family="binomial")
    assert all(0 <= p[k] <= 1 for k in ("wald", "score", "lrt"))
    adj = signflip.bonferroni_holm(np.array([0.01, 0.04, 0.03]))
    assert np.allclose(adj, [0.03, 0.06, 0.06])


def test_errors_map_to_exceptions():
    n = 10
    x = np.r_[np.zeros(5), np.ones(5)]
    y = x.copy()
    with pytest.raises(signflip.SeparationDetected):
        signflip.fit_null(y, np.zeros(n), np.column_stack([np.ones(n), x]), family="binomial")
    with pytest.raises(signflip.Error):
        signflip.make_plan(5, 0)
    with pytest.raises(signflip.Error):
        signflip.simulate("study = nonsense\n")


def test_simulate_small_study():
    csv = signflip.simulate("study = univariate\nn = 20\nn_sims = 20\nw = 50\nalpha_grid = 0.05\nsettings = 0:0\nseed = 1\n")
    lines = csv.strip().splitlines()
    assert len(lines) >= 2
    assert "," in lines[0]
