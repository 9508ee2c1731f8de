import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from d2dfl.errors import ConfigError, InvalidNetworkError
from d2dfl.network import (DeviceProfile, LinkFailureConfig, ResourceRanges, ResourceSchedule, Topology,
                           apply_link_failures, generate_erdos_renyi, sample_device_profiles, tx_cost_matrix)


def test_er_extremes():
    assert generate_erdos_renyi(5, 0.0, 1).n_links == 0
    full = generate_erdos_renyi(5, 1.0, 1)
    assert full.n_links == 20
    assert np.all(np.diag(full.adjacency) == 0)


def test_er_edge_count_binomial_interval():
    n, p = 200, 0.1
    trials = n * (n - 1)
    mean, sd = trials * p, math.sqrt(trials * p * (1 - p))
    links = generate_erdos_renyi(n, p, 7).n_links
    assert abs(links - mean) <= 3.29 * sd  # two-sided 99.9%


def test_er_rejects_bad_input():
    with pytest.raises(InvalidNetworkError):
        generate_erdos_renyi(1, 0.5, 0)
    with pytest.raises(InvalidNetworkError):
        generate_erdos_renyi(5, 1.5, 0)


@given(st.integers(2, 30), st.floats(0, 1), st.integers(0, 2**31))
def test_er_reproducible_and_valid(n, p, seed):
    a = generate_erdos_renyi(n, p, seed)
    b = generate_erdos_renyi(n, p, seed)
    assert a == b
    assert set(np.unique(a.adjacency)) <= {0, 1}
    assert not np.diag(a.adjacency).any()


def test_symmetric_option():
    t = generate_erdos_renyi(30, 0.3, 2, symmetric=True)
    assert np.array_equal(t.adjacency, t.adjacency.T)


def test_topology_validation():
    with pytest.raises(InvalidNetworkError):
        Topology(np.eye(3, dtype=np.int8))
    with pytest.raises(InvalidNetworkError):
        Topology(np.array([[0, 2], [0, 0]]))
    with pytest.raises(InvalidNetworkError):
        Topology(np.zeros((2, 3)))


def test_edge_list_roundtrip(tmp_path):
    t = generate_erdos_renyi(12, 0.3, 4)
    path = tmp_path / "edges.txt"
    t.write_edge_list(path)
    assert Topology.read_edge_list(path) == t
    assert path.read_text().splitlines()[1].count(" ") == 1


def test_degenerate_profiles():
    r = ResourceRanges(proc_capacity=(10, 10), proc_unit_cost=(1, 1), tx_budget=(5, 5),
                       tx_unit_cost=(1, 1), recv_buffer=(3, 3))
    (p,) = sample_device_profiles(1, r, 0)
    assert (p.proc_capacity, p.proc_unit_cost, p.tx_budget, p.recv_buffer) == (10, 1, 5, 3)
    assert p.tx_unit_cost == {}


def test_load_range():
    r = ResourceRanges.from_load(200.0)
    ps = sample_device_profiles(3, r, 9)
    assert all(50.0 <= p.proc_capacity <= 150.0 for p in ps)


def test_profiles_deterministic():
    r = ResourceRanges()
    assert sample_device_profiles(100, r, 5) == sample_device_profiles(100, r, 5)


def test_inverted_range_rejected():
    with pytest.raises(ConfigError):
        ResourceRanges(proc_capacity=(5, 1))
    with pytest.raises(ConfigError):
        ResourceRanges(tx_unit_cost=(0, 1))


def test_profile_invariants():
    with pytest.raises(ConfigError):
        DeviceProfile(0, -1, 1, 1)
    with pytest.raises(ConfigError):
        DeviceProfile(0, 1, 1, 0)
    with pytest.raises(ConfigError):
        DeviceProfile(0, 1, 1, 1, {1: 0.0})
    assert DeviceProfile(0, 5, 0, 1).capacity_datapoints() == math.inf


def test_link_failures_extremes():
    t = generate_erdos_renyi(20, 0.4, 3)
    assert apply_link_failures(t, LinkFailureConfig(0.0, 1), 4) == t
    assert apply_link_failures(t, LinkFailureConfig(1.0, 1), 4).n_links == 0


def test_link_failure_statistics():
    adj = np.zeros((20, 20), dtype=np.int8)
    idx = [(i, j) for i in range(20) for j in range(20) if i != j][:100]
    for i, j in idx:
        adj[i, j] = 1
    t = Topology(adj)
    surv = [apply_link_failures(t, LinkFailureConfig(0.5, 11), s).n_links for s in range(1000)]
    # mean of 1000 binomial(100, 0.5) draws: sd = 5 / sqrt(1000)
    assert abs(np.mean(surv) - 50) <= 3 * 5 / math.sqrt(1000)


@given(st.floats(0, 1), st.integers(0, 1000), st.integers(0, 50))
def test_failures_never_create_links(rate, seed, t):
    topo = generate_erdos_renyi(15, 0.3, 8)
    before = topo.adjacency.copy()
    out = apply_link_failures(topo, LinkFailureConfig(rate, seed), t)
    assert np.all(out.adjacency <= topo.adjacency)
    assert np.array_equal(topo.adjacency, before)
    assert out == apply_link_failures(topo, LinkFailureConfig(rate, seed), t)


def test_failure_rate_validation():
    with pytest.raises(ConfigError):
        LinkFailureConfig(1.5)


def test_schedule_and_cost_matrix():
    ps = sample_device_profiles(4, ResourceRanges(), 0)
    sched = ResourceSchedule([{}, {"proc_capacity": 2.0, "tx_unit_cost": 3.0}])
    assert sched.at(ps, 0) == ps
    doubled = sched.at(ps, 1)
    assert doubled[0].proc_capacity == 2 * ps[0].proc_capacity
    assert np.allclose(tx_cost_matrix(doubled), 3 * tx_cost_matrix(ps))
    assert np.all(np.diag(tx_cost_matrix(ps)) == 0)
    with pytest.raises(ConfigError):
        ResourceSchedule([{"bogus": 1.0}])
