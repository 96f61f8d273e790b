import csv

import numpy as np
import pytest

from latentpde.experiments import (
    EnsembleSpec,
    fmt,
    noise_seed,
    probe_records,
    rel_error,
    run_ensemble,
    sampling_seed,
    sweep_noise,
    sweep_order,
    xi_analysis,
    xi_values,
)
from latentpde.field import GridSpec
from latentpde.kolmogorov import ModelParams
from latentpde.library import SamplePlan, TermLibrary
from latentpde.localpoly import WindowSpec
from manufactured import ShellFlow

PARAMS = ModelParams.paper()


@pytest.fixture(scope="module")
def series():
    grid = GridSpec(41, 41, 41, 0.05, 0.05, 0.05)
    return ShellFlow(PARAMS, k=np.pi, n_modes=3, seed=2).series(grid)


def spec(**kw):
    base = dict(window=WindowSpec(0.5, 0.5, 0.5, 5, 5, 4), plan=SamplePlan(12), n_realizations=3,
                base_seed=7)
    base.update(kw)
    return EnsembleSpec(**base)


def test_rel_error_examples():
    d, fp = rel_error(PARAMS.coeffs, PARAMS.coeffs)
    assert np.all(d == 0) and not fp.any()
    d, _ = rel_error([-0.8], [-0.826])
    assert d[0] == pytest.approx(0.0315, abs=5e-5)
    d, fp = rel_error([0.01, 0.0], [0.0, 0.0])
    assert d[0] == 0.01 and fp[0] and not fp[1]


def test_seed_helpers_are_stable_and_distinct():
    assert sampling_seed(3, 1) == sampling_seed(3, 1)
    seeds = {sampling_seed(3, r) for r in range(50)} | {noise_seed(3, s, r) for s in range(3)
                                                         for r in range(50)}
    assert len(seeds) == 200


def test_spec_validation():
    with pytest.raises(ValueError):
        spec(n_realizations=1)
    with pytest.raises(ValueError):
        spec(seeds=(1, 2))


def test_fmt():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(np.float64(1 / 3)) == "0.33333333333333331"
    assert fmt(True) == "1" and fmt(3) == "3"
    assert fmt(np.inf) == "inf" and fmt(np.nan) == "nan"


def test_equal_seeds_give_zero_spread(series):
    res = run_ensemble(series, spec(n_realizations=2, seeds=(5, 5)), PARAMS)
    s = res.stats(0.0, "eta_over_eta0")
    assert s["n"] == 2 and s["std"] == 0.0
    a, b = res.records
    assert np.array_equal(a.c, b.c)


def test_ensemble_on_exact_solution(series):
    res = run_ensemble(series, spec(), PARAMS)
    assert len(res.records) == 3 and all(r.ok for r in res.records)
    for r in res.records:
        # divergence-free exact solution: the linear friction and Laplacian carry it
        assert r.eta_ratio < 1e-2
    # statistics agree with the raw records
    raw = np.array([r.eta_ratio for r in res.records])
    s = res.stats(0.0, "eta_over_eta0")
    assert s["mean"] == pytest.approx(raw.mean()) and s["max"] == raw.max()


def test_deterministic_csv(series, tmp_path):
    sp = spec()
    a = run_ensemble(series, sp, PARAMS)
    b = run_ensemble(series, sp, PARAMS, jobs=2)
    a.to_csv(tmp_path / "a_raw.csv", tmp_path / "a_sum.csv")
    b.to_csv(tmp_path / "b_raw.csv", tmp_path / "b_sum.csv")
    assert (tmp_path / "a_raw.csv").read_bytes() == (tmp_path / "b_raw.csv").read_bytes()
    assert (tmp_path / "a_sum.csv").read_bytes() == (tmp_path / "b_sum.csv").read_bytes()
    with open(tmp_path / "a_raw.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * 7
    assert set(rows[0]) >= {"axis_value", "realization", "term", "c_est", "delta_c",
                            "eta_over_eta0", "R", "active", "false_negative"}
    with open(tmp_path / "a_sum.csv") as fh:
        summary = list(csv.DictReader(fh))
    eta = [r for r in summary if r["quantity"] == "eta_over_eta0" and r["filtered"] == "0"]
    assert float(eta[0]["mean"]) == pytest.approx(
        np.mean([float(r["eta_over_eta0"]) for r in rows[::7]]), rel=1e-15)


def test_noise_sweep_pairs_sample_points(series):
    res = sweep_noise(series, [0.0, 1e-4], spec(), PARAMS, keep_libraries=True)
    clean, noisy = res.at(0.0), res.at(1e-4)
    for a, b in zip(clean, noisy):
        assert a.sampling_seed == b.sampling_seed
        assert np.array_equal(a.library.sample_points, b.library.sample_points)
        assert a.noise_seed is None and b.noise_seed is not None
    # the sigma=0 entry reproduces a plain noiseless ensemble
    base = run_ensemble(series, spec(), PARAMS)
    assert [r.eta_ratio for r in base.records] == [r.eta_ratio for r in clean]
    with pytest.raises(ValueError):
        sweep_noise(series, [], spec(), PARAMS)
    with pytest.raises(ValueError):
        sweep_noise(series, [-1.0], spec(), PARAMS)


def test_false_negative_filtering():
    from latentpde.experiments import SweepResult, _record
    from latentpde.regression import RegressionConfig

    rng = np.random.default_rng(0)
    recs = []
    for r in range(4):
        Q = rng.standard_normal((40, 7))
        c = np.array([1.0, 1.0, 0.002 if r % 2 else 1.0, 0, 0, 0, 0])
        q0 = Q @ c + 0.05 * rng.standard_normal(40)
        lib = TermLibrary(Q, q0, np.zeros((40, 3), int))
        recs.append(_record(0.0, r, r, None, lib, RegressionConfig(gamma=1.0),
                            np.array([1.0, 1.0, 1.0, 0, 0, 0, 0]), (0, 1, 2), True))
    res = SweepResult("noise", [0.0], recs, np.ones(7))
    assert [r.false_negative for r in recs] == [False, True, False, True]
    assert res.false_negative_count(0.0) == 2
    assert len(res.at(0.0, filtered=True)) == 2
    assert res.stats(0.0, "delta_c", 2, filtered=True)["n"] == 2
    probes = probe_records(res, 2)
    # a negligible term barely changes the residual when restored
    assert len(probes) == 2 and all(abs(p) < 0.1 for _, p in probes)


def test_order_sweep(series):
    res = sweep_order(series, [3, 5], 4, spec(), PARAMS)
    assert res.axis == [3, 5]
    assert len(res.at(3)) == 3 and len(res.at(5)) == 3
    # the exact solution is reproduced to roundoff at either order
    assert res.mean(3, "eta_over_eta0") < 1e-10 and res.mean(5, "eta_over_eta0") < 1e-10
    # the same sample points at each order
    assert [r.sampling_seed for r in res.at(3)] == [r.sampling_seed for r in res.at(5)]
    low = sweep_order(series, [2, 3], 4, spec(), PARAMS)
    assert low.at(2) == [] and all("too low" in r.error for r in low.at(2, ok_only=False))
    assert low.mean(2, "eta_over_eta0") != low.mean(2, "eta_over_eta0")  # nan
    assert len(low.at(3)) == 3
    single = sweep_order(series, [5], 4, spec(), PARAMS)
    assert single.mean(5, "eta_over_eta0") == res.mean(5, "eta_over_eta0")


def test_xi(series):
    out = xi_analysis(series, [0.0, 1e-5, 2e-5], spec())
    assert out.xi.shape == (3, 3, 8)
    assert np.all(out.xi[0] == 0)
    m = out.mean()
    # linear columns: doubling the noise roughly doubles the change
    for i in (2, 3):
        assert 1.4 < m[2, i] / m[1, i] < 2.8


def test_xi_values_scale_invariant():
    rng = np.random.default_rng(1)
    a = TermLibrary(rng.standard_normal((10, 7)), rng.standard_normal(10), np.zeros((10, 3), int))
    b = TermLibrary(a.Q + 0.1 * rng.standard_normal((10, 7)), a.q0, np.zeros((10, 3), int))
    x = xi_values(a, b)
    assert x[0] == 0
    s = TermLibrary(3 * a.Q, 3 * a.q0, a.sample_points)
    t = TermLibrary(3 * b.Q, 3 * b.q0, b.sample_points)
    assert np.allclose(xi_values(s, t), x, rtol=1e-14)
    z = TermLibrary(np.c_[np.zeros(10), a.Q[:, 1:]], a.q0, a.sample_points)
    assert np.isnan(xi_values(z, z)[1])
