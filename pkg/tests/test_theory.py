import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from d2dfl.data import LocalDataset
from d2dfl.errors import ConfigError
from d2dfl.models import LogisticModel
from d2dfl.theory import (compute_delta_i, compute_zeta, corollary1, corollary1_bound_and_taylor, delta_gap_lhs, delta_S,
                          delta_uniform_gap, kappa_estimate, run_bound_trace, smoothness_bound,
                          theorem1_bound)


def _devices(seed, n=4, dim=3, classes=3):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        m = int(rng.integers(5, 30))
        out.append(LocalDataset.from_arrays(rng.normal(size=(m, dim)) + i, rng.integers(0, classes, m)))
    return out


def test_zeta_zero_when_all_sampled():
    ds = _devices(0)
    model = LogisticModel(3, 3)
    w = np.random.default_rng(1).normal(size=model.n_params)
    assert np.allclose(compute_zeta(model, w, ds, ds), 0.0, atol=1e-15)


def test_zeta_two_devices_manual():
    ds = _devices(2, n=2)
    model = LogisticModel(3, 3)
    w = np.random.default_rng(3).normal(size=model.n_params)
    g0, g1 = model.grad(w, ds[0].X, ds[0].y), model.grad(w, ds[1].X, ds[1].y)
    n0, n1 = len(ds[0]), len(ds[1])
    expected = g0 - (n0 * g0 + n1 * g1) / (n0 + n1)
    assert np.allclose(compute_zeta(model, w, [ds[0]], ds), expected, atol=1e-14)
    with pytest.raises(ConfigError):
        compute_zeta(model, w, [LocalDataset.from_arrays(np.zeros((0, 3)), np.zeros(0, int))], ds)


def test_delta_kappa_term_only():
    # all devices sampled, zero model => only kappa/sqrt(D_i) remains beyond zero terms
    X = np.zeros((4, 2))
    d = LocalDataset.from_arrays(X, np.zeros(4, int))
    model = LogisticModel(2, 2)
    w = np.zeros(model.n_params)
    # gradient of the symmetric two-class model at zero with y=0 is not zero, but D_N == D_S
    # and no unsampled mass, so delta = kappa / sqrt(4)
    assert compute_delta_i(model, w, d, [d], [d], kappa=1.0) == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        compute_delta_i(model, w, LocalDataset.from_arrays(np.zeros((0, 2)), np.zeros(0, int)), [d], [d], 1.0)


@given(st.integers(0, 500))
def test_delta_upper_bounds_measured_gap(seed):
    ds = _devices(seed)
    model = LogisticModel(3, 3)
    w = np.random.default_rng(seed).normal(size=model.n_params) * 0.3
    sampled = ds[:2]
    kap = kappa_estimate(model, w, ds)
    for d in sampled:
        assert compute_delta_i(model, w, d, sampled, ds, kap) >= delta_gap_lhs(model, w, d, sampled, ds)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=8), st.integers(0, 99))
def test_delta_S_between_extremes(deltas, seed):
    sizes = np.random.default_rng(seed).integers(1, 100, len(deltas))
    v = delta_S(deltas, sizes)
    assert min(deltas) - 1e-9 <= v <= max(deltas) + 1e-9


def test_delta_uniform_equal_sizes():
    assert delta_uniform_gap([1.0, 2.0, 3.0], [5, 5, 5]) == pytest.approx(0.0, abs=1e-15)
    assert delta_uniform_gap([0.0, 0.0], [1, 3]) == 0.0
    assert delta_uniform_gap([1.0, 3.0], [1, 3]) > 0


def test_bound_zero_at_sync_and_first_step():
    ds_seq, z = [0.4, 0.7, 0.9], [0.2, 0.5, 0.1]
    assert theorem1_bound(ds_seq, z, 2.0, t=0, k=1, tau=5) == 0.0
    # first step: 2^0 - 1 = 0, so only zeta at the sync point survives
    assert theorem1_bound(ds_seq, z, 2.0, t=1, k=1, tau=5) == pytest.approx(0.1)
    assert theorem1_bound(ds_seq, z, 2.0, t=2, k=1, tau=5) == pytest.approx((0.2 + 0.9 * 1 + 0.5) / 2)
    with pytest.raises(ConfigError):
        theorem1_bound(ds_seq, z, 2.0, t=7, k=1, tau=5)


def test_corollary_expansion():
    exact = corollary1(10, 2, 0.0, xi=0.5, eta=0.5, beta=1.0, lipschitz=1.0, epsilon=1.0)
    assert exact.g == pytest.approx(exact.taylor) and exact.relative_gap == pytest.approx(0.0, abs=1e-15)
    a = 10 * 0.5 * 0.5 * 0.75
    small = corollary1(10, 2, 1e-3, xi=0.5, eta=0.5, beta=1.0, lipschitz=1.0, epsilon=1.0)
    assert small.g == pytest.approx(1 / (a - 3e-3))
    assert small.relative_gap <= 1e-2
    dead = corollary1(1, 0, 1e6, xi=0.5, eta=0.5, beta=1.0, lipschitz=1.0, epsilon=1.0)
    assert dead.vacuous and math.isinf(dead.g)


def test_smoothness_bounds_hessian_curvature():
    ds = _devices(7)
    model = LogisticModel(3, 3)
    beta = smoothness_bound(ds)
    rng = np.random.default_rng(0)
    for d in ds:
        for _ in range(5):
            a, b = rng.normal(size=(2, model.n_params))
            ga, gb = model.grad(a, d.X, d.y), model.grad(b, d.X, d.y)
            assert np.linalg.norm(ga - gb) <= beta * np.linalg.norm(a - b) * (1 + 1e-9)


def test_bound_trace_no_violations():
    ds = _devices(11, n=6)
    tr = run_bound_trace(ds, [0, 2, 4], n_classes=3, tau=5, T=10, reference_steps=300)
    assert tr.violations() == 0
    assert len(tr.t) == 10 and tr.measured_gap[0] == pytest.approx(tr.bound[0], rel=1e-9, abs=1e-14)
    with pytest.raises(ConfigError):
        run_bound_trace(ds, [0], n_classes=3, eta=2.0 / tr.beta, T=5)
    with pytest.raises(ConfigError):
        run_bound_trace(ds, [0], n_classes=3, T=7, tau=5)


def test_bound_trace_csv(tmp_path):
    tr = run_bound_trace(_devices(12), [1], n_classes=3, tau=2, T=4, reference_steps=50)
    tr.write_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "t,k,measured_gap,bound,delta_S,zeta_norm,g,taylor_g" and len(lines) == 5


def test_corollary_accessor():
    tr = run_bound_trace(_devices(13), [0, 1], n_classes=3, tau=2, T=4, reference_steps=50)
    g, taylor, gap = corollary1_bound_and_taylor(tr, 3)
    assert g == tr.g[2] and taylor == tr.taylor_g[2]
    assert gap == math.inf or gap >= 0
    with pytest.raises(ConfigError):
        corollary1_bound_and_taylor(tr, 9)
