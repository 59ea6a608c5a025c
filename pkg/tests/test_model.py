import math

import numpy as np
import pytest

from akcache import model as m
from akcache.errors import ConfigurationError, NumericalError

import oracles


def test_zipf_popularity():
    q = m.zipf_popularity(5, 1.0)
    w = np.array([1, 1 / 2, 1 / 3, 1 / 4, 1 / 5])
    assert q == pytest.approx(w / w.sum(), rel=1e-15)
    assert m.zipf_popularity(4, 0.0) == pytest.approx([0.25] * 4)


def test_popularity_and_mixture_validation():
    with pytest.raises(ConfigurationError):
        m.validate_popularity([0.2, 0.8])
    with pytest.raises(ConfigurationError):
        m.validate_mixture([0.5, 0.6])
    with pytest.raises(ConfigurationError):
        m.validate_mixture([1.2, -0.2])
    p = m.validate_mixture([0.5, 0.5 + 1e-12])
    assert p.sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("N,K", [(100, 50), (100, 99), (1000, 1), (10**5, 10**3)])
def test_tc_uniform_closed_form(N, K):
    res = m.solve_tc(np.full(N, 1 / N), K)
    assert res.t_c == pytest.approx(-N * math.log(1 - K / N), rel=1e-9)
    assert abs(res.residual) <= 1e-6


def test_tc_examples():
    assert m.solve_tc(np.full(100, 0.01), 50).t_c == pytest.approx(69.3147, abs=1e-4)
    assert m.solve_tc(np.full(100, 0.01), 99).t_c == pytest.approx(460.517, abs=1e-3)


@pytest.mark.parametrize("alpha", [0.6, 0.8, 1.0, 1.2])
def test_tc_against_bisection(alpha):
    q = m.zipf_popularity(2000, alpha)
    assert m.solve_tc(q, 100).t_c == pytest.approx(oracles.tc_bisect(q.tolist(), 100), rel=1e-9)


def test_tc_rejects_degenerate_sizes():
    with pytest.raises(ConfigurationError):
        m.solve_tc([0.5, 0.5], 2)
    with pytest.raises(ConfigurationError):
        m.solve_tc([0.5, 0.5], 0)


def test_lru_hit_rates():
    h, H = m.lru_hit_rates(np.full(100, 0.01), -100 * math.log(0.5))
    assert h == pytest.approx(np.full(100, 0.5)) and H == pytest.approx(0.5)
    h, _ = m.lru_hit_rates([1e-300, 1.0], 10.0)
    assert h[0] == pytest.approx(0.0, abs=1e-290)


def test_lru_hit_rate_against_direct_sum():
    q = m.zipf_popularity(10**4, 1.0)
    t = m.solve_tc(q, 10**3).t_c
    _, H = m.lru_hit_rates(q, t)
    direct = math.fsum(qi * (1 - math.exp(-qi * t)) for qi in q.tolist())
    assert H == pytest.approx(direct, abs=1e-9)


def test_ideal_hit_rate():
    assert m.ideal_hit_rate(np.full(100, 0.01), 10) == pytest.approx(0.1)
    assert m.ideal_hit_rate(np.full(10, 0.1), 10) == pytest.approx(1.0)
    q = m.zipf_popularity(10**5, 1.1)
    assert m.ideal_hit_rate(q, 10**4) == pytest.approx(math.fsum(q[:10**4].tolist()), abs=1e-12)


def test_hit_rates_monotone_in_K():
    q = m.zipf_popularity(1000, 0.9)
    lru = [m.lru_hit_rates(q, m.solve_tc(q, K).t_c)[1] for K in (10, 50, 200, 700)]
    ideal = [m.ideal_hit_rate(q, K) for K in (10, 50, 200, 700)]
    assert lru == sorted(lru) and ideal == sorted(ideal)
    assert all(a <= b + 1e-12 for a, b in zip(lru, ideal))


def test_nocontrol_error():
    assert m.nocontrol_key_error([1.0]) == 0.0
    assert m.nocontrol_key_error([0.5, 0.5]) == pytest.approx(0.5)
    assert m.nocontrol_key_error([0.9, 0.1]) == pytest.approx(0.18)
    q = np.full(4, 0.25)
    e, E = m.nocontrol_error(q, [[0.5, 0.5]] * 4, 2)
    assert E == pytest.approx(0.25)
    _, E_lru = m.nocontrol_error(q, [[0.5, 0.5]] * 4, 2, mode="lru")
    assert E_lru == pytest.approx(0.5 * m.lru_hit_rates(q, m.solve_tc(q, 2).t_c)[1])


def test_prop1_special_cases():
    r, e = m.prop1_ideal([1 / 3] * 3, 2.0)
    assert abs(r - 0.5) < 1e-9 and abs(e - 1 / 3) < 1e-9
    assert m.prop1_ideal([0.8, 0.2], 1.5) == (0.0, pytest.approx(0.2))
    assert m.prop1_ideal([0.5, 0.5], 2.0) == (0.0, pytest.approx(0.5))
    assert m.prop1_ideal([1.0], 2.0) == (0.0, 0.0)
    with pytest.raises(ConfigurationError):
        m.prop1_ideal([0.5, 0.5], 1.0)


@pytest.mark.parametrize("m_", [3, 4, 5, 8])
def test_prop1_uniform_beta2_closed_form(m_):
    r, e = m.prop1_ideal([1 / m_] * m_, 2.0)
    assert r == pytest.approx((m_ - 2) / (m_ - 1), abs=1e-9)
    assert e == pytest.approx(1 / m_, abs=1e-9)


@pytest.mark.parametrize("p", [[0.5, 0.3, 0.2], [0.6, 0.2, 0.2], [0.25] * 4, [0.4, 0.35, 0.25], [0.7, 0.1, 0.1, 0.1]])
@pytest.mark.parametrize("beta", [1.2, 1.3, 1.5, 1.7, 2.0, 3.0])
def test_prop1_against_renewal_oracle(p, beta):
    got = m.prop1_ideal(p, beta)
    want = oracles.ideal_series(p, beta)
    assert got == pytest.approx(want, abs=1e-8)


def test_prop1_against_single_key_simulation():
    r, e = m.prop1_ideal([0.5, 0.3, 0.2], 1.5)
    rs, es = oracles.single_key_ideal([0.5, 0.3, 0.2], 1.5, 400_000, seed=4)
    assert abs(rs - r) < 0.02 and abs(es - e) < 0.02


def test_refresh_and_error_ideal():
    q = m.zipf_popularity(20, 1.0)
    rep = m.refresh_and_error_ideal(q, [[1.0]] * 20, 5, 2.0)
    assert rep.R == 0.0 and rep.E == 0.0
    flat = np.full(10, 0.1)
    rep = m.refresh_and_error_ideal(flat, [[1 / 3] * 3] * 10, 4, 2.0)
    assert rep.H == pytest.approx(0.4)
    assert rep.R == pytest.approx(0.5 * 0.4, abs=1e-9)
    assert rep.E == pytest.approx(0.4 / 3, abs=1e-9)
    assert rep.inference_fraction == pytest.approx(rep.R + 0.6)


def test_refresh_and_error_ideal_mixed_against_oracle():
    rng = np.random.default_rng(5)
    q = m.zipf_popularity(30, 0.9)
    p = [rng.dirichlet(np.ones(int(rng.integers(2, 5)))) for _ in range(30)]
    rep = m.refresh_and_error_ideal(q, p, 12, 1.6)
    R = E = 0.0
    for i in range(12):
        r, e = oracles.ideal_series(p[i], 1.6)
        R += q[i] * r
        E += q[i] * e
    assert rep.R == pytest.approx(R, abs=1e-8)
    assert rep.E == pytest.approx(E, abs=1e-8)


def test_sequence_model_single_class():
    for h in (0.3, 0.9, 0.99):
        r, e = m.sequence_model(h, [1.0], 2.0)
        assert e == 0.0
        assert 0 < r <= 1


def test_sequence_model_single_class_against_mc():
    r, _ = m.sequence_model(0.8, [1.0], 2.0)
    rs, es = oracles.lru_sequence_mc(0.8, [1.0], 2.0, 300_000, seed=1)
    assert abs(r - rs) < 0.005 and es == 0.0


def test_sequence_model_limits():
    assert m.sequence_model(0.0, [0.5, 0.5], 2.0) == (1.0, 0.0)
    r, e = m.sequence_model(1 - 1e-9, [1 / 3] * 3, 2.0)
    assert abs(r - 0.5) < 1e-3 and abs(e - 1 / 3) < 1e-3
    r, e = m.sequence_model(1 - 1e-9, [0.5, 0.3, 0.2], 1.5)
    pr, pe = m.prop1_ideal([0.5, 0.3, 0.2], 1.5)
    assert abs(r - pr) < 1e-3 and abs(e - pe) < 1e-3


@pytest.mark.parametrize("h", [0.5, 0.9])
def test_sequence_model_against_mc(h):
    r, e = m.sequence_model(h, [0.5, 0.3, 0.2], 2.0)
    rs, es = oracles.lru_sequence_mc(h, [0.5, 0.3, 0.2], 2.0, 600_000, seed=2)
    assert abs(r - rs) < 0.005 and abs(e - es) < 0.005


def test_lru_autorefresh_numeric_report():
    q = m.zipf_popularity(200, 0.8)
    rep = m.lru_autorefresh_numeric(q, [[0.5, 0.3, 0.2]] * 200, 20, 2.0)
    assert rep.t_c == pytest.approx(m.solve_tc(q, 20).t_c)
    assert np.all((rep.r >= 0) & (rep.r <= 1)) and np.all((rep.e >= 0) & (rep.e <= 1))
    assert 0 <= rep.R <= rep.H <= 1
    # auto-refresh never does worse than no control here
    assert rep.E <= m.lru_nocontrol(q, [[0.5, 0.3, 0.2]] * 200, 20).E_nc


def test_lru_nocontrol_report():
    q = np.full(10, 0.1)
    rep = m.lru_nocontrol(q, [[0.5, 0.5]] * 10, 5)
    assert rep.R == 0.0 and rep.E == pytest.approx(rep.H * 0.5)


def test_phi_table():
    assert m.phi_table(2.0, 6) == [1, 2, 4, 8, 16, 32]
    assert m.phi_table(1.5, 7) == [1, 2, 3, 4, 5, 7, 11]


def test_numerical_error_diagnostics():
    err = NumericalError("did not converge", iterations=5)
    assert "iterations=5" in str(err)
