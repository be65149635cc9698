"""Traffic generator statistics, determinism, and encoding tests.

Statistical assertions use fixed seeds and documented tolerances; the
heavier distributional checks (KS, rate calibration at 1e6 events) live in
the acceptance suite.
"""

import numpy as np
import pytest
from scipy import stats

from qnetkit import traffic
from qnetkit.model import TrafficDescriptor


def make(model, rate=100.0, **kw):
    return TrafficDescriptor(model=model, rate=rate, **kw)


def test_cbr_exact():
    st = traffic.make_state(make("CBR", rate=100.0), 1)
    assert np.all(st.block(1000) == 0.01)
    d, st = traffic.next_interarrival(make("CBR", rate=100.0), st)
    assert d == 0.01


def test_poisson_marginal():
    st = traffic.make_state(make("Poisson", rate=40.0), 2)
    x = st.block(200_000)
    assert 1.0 / x.mean() == pytest.approx(40.0, rel=0.02)
    s = traffic.empirical_stats(x)
    assert s["cv2"] == pytest.approx(1.0, abs=0.05)
    assert abs(s["autocorr"][1]) < 0.01


def test_determinism_and_chunking_invariance():
    desc = make("AutocorrExp", rate=50.0, ar=(0.8, 4.0))
    a = traffic.make_state(desc, 42).block(10_000)
    b = traffic.make_state(desc, 42).block(10_000)
    assert np.array_equal(a, b)
    # chunked consumption yields the same stream
    st = traffic.make_state(desc, 42)
    c = np.concatenate([st.block(1000) for _ in range(10)])
    assert np.array_equal(a, c)
    # scalar path too
    st = traffic.make_state(desc, 42)
    d = np.array([st.next() for _ in range(100)])
    assert np.array_equal(a[:100], d)


def test_onoff_chunking_invariance():
    desc = make("OnOff", rate=200.0, on_off=(5, 15, 5, 15))
    a = traffic.make_state(desc, 7).block(20_000)
    st = traffic.make_state(desc, 7)
    b = np.concatenate([st.block(128) for _ in range(20_000 // 128 + 1)])
    assert np.array_equal(a, b[:20_000])


def test_onoff_long_run_rate_and_gaps():
    # rare multi-second Off gaps dominate the variance of the interarrival
    # mean, so the tolerance here is loose; the tight 2% calibration check
    # runs in the acceptance suite at a rate where the estimator converges
    desc = make("OnOff", rate=200.0, on_off=(5, 15, 5, 15))
    x = traffic.make_state(desc, 3).block(400_000)
    assert 1.0 / x.mean() == pytest.approx(200.0, rel=0.12)
    # silent gaps at least off_min appear
    assert (x > 5.0).sum() > 0
    # and the within-On process runs at rate*(on+off)/on: deltas that cross
    # no gap are Exp(400) draws
    on_only = x[x < 0.05]
    assert 1.0 / on_only.mean() == pytest.approx(400.0, rel=0.03)


def test_onoff_rate_asymmetric_periods():
    desc = make("OnOff", rate=100.0, on_off=(2, 4, 10, 14))
    x = traffic.make_state(desc, 5).block(400_000)
    assert 1.0 / x.mean() == pytest.approx(100.0, rel=0.15)


def test_ar1_step_and_stationarity():
    rng = np.random.default_rng(0)
    # a=0 degenerates to iid N(0, sigma2)
    zs = np.array([traffic.ar1_step(0.0, 0.25, 5.0, rng)
                   for _ in range(20_000)])
    assert zs.std() == pytest.approx(0.5, rel=0.03)
    assert zs.mean() == pytest.approx(0.0, abs=0.02)
    with pytest.raises(ValueError):
        traffic.ar1_step(1.0, 1.0, 0.0, rng)
    # a=0.9, sigma2=0.19: stationary variance 1
    z = 0.0
    out = np.empty(200_000)
    for k in range(out.size):
        z = traffic.ar1_step(0.9, 0.19, z, rng)
        out[k] = z
    assert out.var() == pytest.approx(1.0, abs=0.03)
    r1 = np.corrcoef(out[:-1], out[1:])[0, 1]
    assert r1 == pytest.approx(0.9, abs=0.01)


def test_autocorr_exp_median_identity():
    # z = 0 maps median to median: delta = ln(2)/lam
    assert traffic._gauss_to_exp(np.array([0.0]), 2.0, 50.0)[0] == \
        pytest.approx(np.log(2) / 50.0, rel=1e-12)


def test_autocorr_exp_marginal_ks():
    desc = make("AutocorrExp", rate=40.0, ar=(0.5, 4.0))
    x = traffic.make_state(desc, 11).block(100_000)
    d, p = stats.kstest(x, "expon", args=(0, 1 / 40.0))
    assert p > 0.01


def test_autocorr_exp_a0_iid():
    desc = make("AutocorrExp", rate=40.0, ar=(0.0, 4.0))
    x = traffic.make_state(desc, 13).block(1_000_000)
    s = traffic.empirical_stats(x)
    assert abs(s["autocorr"][1]) < 0.01
    assert s["mean_rate"] == pytest.approx(40.0, rel=0.02)


def test_autocorr_monotone_in_a():
    rhos = []
    for a in (0.0, 0.5, 0.9):
        desc = make("AutocorrExp", rate=40.0, ar=(a, 4.0))
        x = traffic.make_state(desc, 17).block(300_000)
        rhos.append(traffic.empirical_stats(x)["autocorr"][1])
    assert rhos[0] < rhos[1] < rhos[2]


def test_modulated_exp_rate_and_autocorr():
    desc = make("ModulatedExp", rate=100.0, mod=(None, 0.9, 0.19))
    x = traffic.make_state(desc, 19).block(1_000_000)
    assert 1.0 / x.mean() == pytest.approx(100.0, rel=0.02)
    s = traffic.empirical_stats(x)
    assert s["autocorr"][1] > 0.0
    assert s["cv2"] > 1.5          # heavier than exponential


def test_empirical_stats_basics():
    s = traffic.empirical_stats(np.full(100, 0.01))
    assert s["mean_rate"] == pytest.approx(100.0)
    assert s["cv2"] == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ValueError):
        traffic.empirical_stats([0.5])
    rng = np.random.default_rng(23)
    x = rng.exponential(1 / 40.0, 1_000_000)
    assert traffic.empirical_stats(x)["cv2"] == pytest.approx(1.0, abs=0.05)


def test_encode_vector_layout():
    v = traffic.encode_descriptor(make("Poisson", rate=120.0))
    assert v.shape == (10,)
    assert v[0] == 1.0 and v[1:5].sum() == 0
    assert v[5] == 120.0 and np.all(v[6:] == 0)

    v = traffic.encode_descriptor(make("AutocorrExp", rate=40.0,
                                       ar=(0.7, 5.0)))
    assert v[3] == 1.0
    assert v[6] == pytest.approx(0.7)
    assert v[7] == pytest.approx(5.0)

    v = traffic.encode_descriptor(make("OnOff", rate=10.0,
                                       on_off=(5, 15, 5, 15)))
    assert v[9] == pytest.approx(0.5)

    v = traffic.encode_descriptor(make("ModulatedExp", rate=10.0,
                                       mod=(None, 0.6, 1.0)))
    s2 = 1.0 / (1 - 0.36)
    assert v[7] == pytest.approx(s2)
    assert v[8] == pytest.approx(10.0 * np.exp(s2 / 2))


def test_encode_vector_normalized():
    norms = {"rate": (0.0, 200.0), "a": (0.0, 1.0), "s2": (0.0, 10.0),
             "A": (0.0, 1000.0), "on_frac": (0.0, 1.0)}
    v = traffic.encode_descriptor(make("Poisson", rate=100.0), norms)
    assert v[5] == pytest.approx(0.5)
