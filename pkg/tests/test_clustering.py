import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from oracles import phi_inv_bisect
from timestep_curriculum.clustering import (ClusterSet, make_clusters,
                                            quantile_clusters, sample_log_sigma,
                                            sample_timestep, snr_clusters, uniform_clusters)
from timestep_curriculum.schedule import LogNormalNoiseDist, build_schedule


def linear_scan(boundaries, t):
    for i in range(len(boundaries) - 1):
        if boundaries[i] <= t < boundaries[i + 1]:
            return i + 1
    raise AssertionError("not covered")


def test_uniform_twenty():
    cs = uniform_clusters(1000, 20)
    assert cs.interval(1) == (0, 50)
    assert cs.interval(20) == (950, 1000)
    assert cs.N == 20 and cs.T == 1000


def test_uniform_single():
    assert uniform_clusters(1000, 1).boundaries == (0, 1000)


def test_uniform_floor_boundaries():
    cs = uniform_clusters(10, 3)
    assert [cs.interval(i) for i in (1, 2, 3)] == [(0, 3), (3, 6), (6, 10)]


@pytest.mark.parametrize("T,N", [(10, 11), (10, 0), (5, -1)])
def test_uniform_rejects(T, N):
    with pytest.raises(ValueError):
        uniform_clusters(T, N)


def test_cluster_set_validation():
    with pytest.raises(ValueError):
        ClusterSet("uniform", (0, 5, 5, 10))
    with pytest.raises(ValueError):
        ClusterSet("uniform", (1, 5, 10))
    with pytest.raises(ValueError):
        ClusterSet("kmeans", (0, 10))


def test_snr_single_cluster():
    sched = build_schedule("linear", 1000)
    assert snr_clusters(sched, 1).boundaries == (0, 1000)


def test_snr_two_clusters_scan_oracle():
    sched = build_schedule("linear", 1000)
    log_snr = [math.log(v) for v in sched.snr]
    target = (log_snr[0] + log_snr[999]) / 2
    expected = next(t for t in range(1000) if log_snr[t] <= target)
    assert snr_clusters(sched, 2).boundaries == (0, expected, 1000)


@pytest.mark.parametrize("N", [2, 5, 20, 50])
def test_snr_boundaries_scan_oracle(N):
    sched = build_schedule("linear", 1000)
    log_snr = [math.log(v) for v in sched.snr]
    top, bottom = log_snr[0], log_snr[-1]
    expected = [0]
    for i in range(2, N + 1):
        target = top - (i - 1) * (top - bottom) / N
        expected.append(next(t for t in range(1000) if log_snr[t] <= target))
    expected.append(1000)
    # collapsed boundaries get pushed one step past their predecessor
    for i in range(1, N):
        expected[i] = max(expected[i], expected[i - 1] + 1)
    assert snr_clusters(sched, N).boundaries == tuple(expected)


def test_snr_repair_keeps_clusters_nonempty():
    sched = build_schedule("cosine", 60)
    assert snr_clusters(sched, 60).boundaries == tuple(range(61))
    # the clipped final cosine step swallows most of the log-SNR range
    cs = snr_clusters(build_schedule("cosine", 1000), 20)
    assert cs.boundaries[-6:] == (995, 996, 997, 998, 999, 1000)
    assert min(cs.size(i) for i in range(1, 21)) == 1


def test_snr_rejects_bad_input():
    sched = build_schedule("linear", 10)
    with pytest.raises(ValueError):
        snr_clusters(sched, 0)
    with pytest.raises(ValueError):
        snr_clusters(sched, 11)


@given(kind=st.sampled_from(["linear", "cosine"]), T=st.integers(2, 1200), data=st.data())
def test_partition_property(kind, T, data):
    sched = build_schedule(kind, T)
    N = data.draw(st.integers(1, min(T, 60)))
    mode = data.draw(st.sampled_from(["uniform", "snr"]))
    cs = make_clusters(mode, N, sched)
    assert cs.boundaries[0] == 0 and cs.boundaries[-1] == T
    assert all(b > a for a, b in zip(cs.boundaries, cs.boundaries[1:]))
    assert sum(cs.size(i) for i in range(1, N + 1)) == T
    for t in data.draw(st.lists(st.integers(0, T - 1), min_size=1, max_size=20)):
        assert cs.cluster_of(t) == linear_scan(cs.boundaries, t)


@given(kind=st.sampled_from(["linear", "cosine"]), N=st.integers(1, 50))
def test_snr_ordering(kind, N):
    sched = build_schedule(kind, 1000)
    cs = snr_clusters(sched, N)
    means = [sched.snr[lo:hi].mean() for lo, hi in (cs.interval(i) for i in range(1, N + 1))]
    assert all(a > b for a, b in zip(means, means[1:]))


def test_cluster_of_examples():
    cs = uniform_clusters(1000, 20)
    assert cs.cluster_of(0) == 1
    assert cs.cluster_of(950) == 20
    assert cs.cluster_of(949) == 19
    for bad in (-1, 1000):
        with pytest.raises(ValueError):
            cs.cluster_of(bad)


def test_quantile_two_clusters_median():
    cs = quantile_clusters(LogNormalNoiseDist(0.3, 2.0), 2)
    assert cs.boundaries[1] == 0.3


def test_quantile_four_clusters():
    cs = quantile_clusters(LogNormalNoiseDist(-1.2, 1.2), 4)
    expected = [-1.2 + 1.2 * phi_inv_bisect(q) for q in (0.25, 0.5, 0.75)]
    np.testing.assert_allclose(cs.boundaries[1:4], expected, atol=1e-9)
    np.testing.assert_allclose(cs.boundaries[1:4], [-2.00938771, -1.2, -0.39061229], atol=1e-8)
    assert cs.boundaries[0] == pytest.approx(-1.2 + 1.2 * phi_inv_bisect(1e-4), abs=1e-9)


def test_quantile_mass(rng):
    N = 5
    dist = LogNormalNoiseDist(-1.2, 1.2)
    cs = quantile_clusters(dist, N)
    draws = rng.normal(dist.p_mean, dist.p_std, size=10**6)
    counts = np.bincount([cs.cluster_of(v) for v in draws[:200_000]], minlength=N + 1)[1:]
    np.testing.assert_allclose(counts / 200_000, 1 / N, atol=1e-2)
    # full-size check through vectorized bucketing
    idx = np.clip(np.searchsorted(cs.boundaries, draws, side="right"), 1, N)
    mass = np.bincount(idx, minlength=N + 1)[1:] / draws.size
    np.testing.assert_allclose(mass, 1 / N, atol=1e-3)


def test_quantile_cluster_of_clamps_tails():
    cs = quantile_clusters(LogNormalNoiseDist(), 3)
    assert cs.cluster_of(-1e6) == 1
    assert cs.cluster_of(1e6) == 3


def test_sample_full_union_chi_square(rng):
    cs = uniform_clusters(1000, 20)
    draws = sample_timestep(cs, range(1, 21), rng, size=100_000)
    counts = np.bincount(draws, minlength=1000)
    assert stats.chisquare(counts).pvalue > 0.01


def test_sample_single_cluster(rng):
    cs = uniform_clusters(1000, 20)
    draws = sample_timestep(cs, {20}, rng, size=10_000)
    assert draws.min() >= 950 and draws.max() < 1000


def test_sample_two_clusters_binomial(rng):
    cs = uniform_clusters(1000, 20)
    n = 20_000
    draws = sample_timestep(cs, {19, 20}, rng, size=n)
    frac = np.mean((draws >= 900) & (draws < 950))
    assert abs(frac - 0.5) < 3 * math.sqrt(0.25 / n)
    assert draws.min() >= 900


def test_sample_scalar_and_empty(rng):
    cs = uniform_clusters(100, 4)
    t = sample_timestep(cs, [2], rng)
    assert isinstance(t, int) and 25 <= t < 50
    with pytest.raises(ValueError):
        sample_timestep(cs, [], rng)
    with pytest.raises(ValueError):
        sample_timestep(cs, [5], rng)


@given(N=st.integers(2, 30), data=st.data())
def test_sampling_stays_in_union(N, data):
    sched = build_schedule("linear", 1000)
    cs = snr_clusters(sched, N)
    active = data.draw(st.sets(st.integers(1, N), min_size=1))
    union = np.concatenate([np.arange(*cs.interval(i)) for i in sorted(active)])
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    draws = sample_timestep(cs, active, rng, size=2000)
    assert np.all(np.isin(draws, union))


@pytest.mark.parametrize("N,active", [(20, {1}), (20, {3, 7, 19}), (7, {1, 2, 3, 4, 5, 6, 7}),
                                      (50, set(range(10, 51))), (13, {2, 13})])
def test_sampling_uniform_on_union_ks(N, active):
    cs = snr_clusters(build_schedule("linear", 1000), N)
    union = np.concatenate([np.arange(*cs.interval(i)) for i in sorted(active)])
    rng = np.random.default_rng(N)
    draws = sample_timestep(cs, active, rng, size=20_000)
    # continuity-corrected ranks within the union against U(0, 1)
    ranks = np.searchsorted(union, draws)
    u = (ranks + rng.uniform(size=draws.size)) / union.size
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_sample_log_sigma_stays_in_clusters(rng):
    cs = quantile_clusters(LogNormalNoiseDist(), 4)
    out = sample_log_sigma(cs, LogNormalNoiseDist(), {3, 4}, rng, 500)
    assert np.all(out >= cs.boundaries[2]) and np.all(out <= cs.boundaries[4])
    with pytest.raises(ValueError):
        sample_log_sigma(uniform_clusters(10, 2), LogNormalNoiseDist(), {1}, rng, 5)


def test_cluster_csv(tmp_path):
    sched = build_schedule("linear", 100)
    cs = snr_clusters(sched, 4)
    cs.to_csv(tmp_path / "c.csv", sched)
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "i,l_i,l_next,mean_snr"
    assert len(rows) == 5
    assert rows[1].startswith("1,0,")
