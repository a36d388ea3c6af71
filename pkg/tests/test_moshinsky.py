import math

import mpmath
import numpy as np
import pytest

from tlalpan_lab.moshinsky import (
    CrankNicolsonPropagator,
    ShutterScenario,
    ShutterSchedule,
    SpaceTimeGrid,
    WaveField,
    alpha,
    boundary_probe,
    oracle_propagate,
    psi_adv,
    psi_ret,
    psi_total,
    temporal_profile,
)

S = ShutterScenario()
FRINGE_GRID = SpaceTimeGrid(0.0, 10.0, 41, 20.0 / 512, 20.0, 512)


def test_scenario_validation_and_derived_quantities():
    s = ShutterScenario(k=2.0, m=4.0, hbar=1.0)
    assert s.omega == pytest.approx(0.5)
    assert s.v == pytest.approx(0.5)
    assert s.with_(k=1.0).omega == pytest.approx(0.125)
    for bad in ({"k": 0}, {"m": -1}, {"kappa": -0.1}, {"tau": 0}):
        with pytest.raises(ValueError):
            ShutterScenario(**bad)
    with pytest.raises(ValueError):
        SpaceTimeGrid(0, 1, 1, 0.1, 1, 10)


def test_psi_ret_limits():
    # both tails are algebraic (|psi| or |psi| - 1 ~ 1/|arg|), so "far" means |arg| ~ 1e6
    # far ahead of the front shortly after opening: vacuum
    assert abs(psi_ret(S, 1e6, 1.0)) < 1e-6
    assert abs(psi_ret(S, 30.0, 1.0)) < abs(psi_ret(S, 3.0, 1.0))
    # well behind the front at late times: the plane wave is recovered
    assert abs(psi_ret(S, 2.0, 4e5)) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ValueError):
        psi_ret(S, 1.0, 0.0)


def test_psi_ret_peak_is_the_fresnel_overshoot():
    # |psi_ret| = |erfc(u e^{-i pi/4})| / 2 along the similarity variable u;
    # its supremum is the first Cornu-spiral overshoot, not 1
    f = lambda u: abs(mpmath.erfc(u * mpmath.expjpi(-0.25))) / 2
    u_star = mpmath.findroot(lambda u: mpmath.diff(f, u), -1.7)
    bound = float(f(u_star))
    assert bound == pytest.approx(1.17, abs=0.01)
    t = np.linspace(0.05, 20, 300)
    x = np.linspace(-5, 40, 300)
    T, X = np.meshgrid(t, x)
    mags = np.abs(psi_ret(S, X, T))
    assert mags.max() <= bound + 1e-9
    assert mags.max() > 1.16


def test_psi_adv_conventions():
    s = S.with_(tau=10.0)
    assert psi_adv(s, 3.0, 10.0) == 0
    assert psi_adv(s, 3.0, 12.0) == 0
    t = np.linspace(9.0, 10.0 - 1e-9, 50)
    assert np.all(np.isfinite(psi_adv(s, 3.0, t)))
    assert np.all(psi_adv(S, 3.0, t) == 0)  # tau = inf


def test_psi_adv_is_reflected_conjugate_of_psi_ret():
    # with u = tau - t > 0, the closed forms give
    # psi_adv(x, t) = exp(i(kx + omega u)) - conj(psi_ret(-x, u))
    s = S.with_(tau=10.0, k=1.3)
    x = np.linspace(-4, 12, 33)
    for t in (0.5, 4.0, 9.5):
        u = s.tau - t
        lhs = psi_adv(s, x, t)
        rhs = np.exp(1j * (s.k * x + s.omega * u)) - np.conj(psi_ret(s, -x, u))
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_alpha_limits():
    assert alpha(S.with_(kappa=0.0)) >= 0.999
    assert alpha(S.with_(kappa=10.0)) <= 1e-6
    assert alpha(S.with_(kappa=1.0)) == pytest.approx(0.5)
    ks = np.linspace(0, 3, 31)
    vals = [alpha(S.with_(kappa=k)) for k in ks]
    assert np.all(np.diff(vals) <= 0)


def test_psi_total_reductions_and_linearity():
    s = S.with_(tau=10.0)
    g = SpaceTimeGrid(0.0, 8.0, 9, 0.5, 12.0, 24)
    ret = psi_total(s, g, weight=0.0).values
    T, X = np.meshgrid(g.t, g.x, indexing="ij")
    assert np.array_equal(ret, psi_ret(s, X, T))
    one = psi_total(s, g, weight=1.0).values
    for a in (0.25, 0.7):
        mixed = psi_total(s, g, weight=a).values
        assert np.allclose(mixed - ret, a * (one - ret), atol=1e-12, rtol=0)
    far = psi_total(S, g, weight=1.0).values
    assert np.array_equal(far, ret)


def test_temporal_profile_constant_field_and_errors():
    g = SpaceTimeGrid(0.0, 1.0, 2, 0.1, 1.0, 16)
    const = WaveField(np.ones((16, 2)), g, S)
    prof = temporal_profile(const, 0.5)
    assert prof.n_fringes == 0 and prof.visibility == 0.0
    with pytest.raises(ValueError):
        temporal_profile(const, 2.0)
    short = SpaceTimeGrid(0.0, 1.0, 2, 0.1, 1.0, 7)
    with pytest.raises(ValueError):
        temporal_profile(WaveField(np.ones((7, 2)), short, S), 0.5)


def test_transient_fringes_behind_the_front():
    g = SpaceTimeGrid(0.0, 10.0, 41, 60.0 / 1024, 60.0, 1024)
    prof = temporal_profile(psi_total(S, g, weight=0.0), 1.0)
    assert prof.n_fringes >= 2
    assert 0 < prof.visibility < 1


def test_fringe_count_non_increasing_across_kappa_c():
    s = S.with_(tau=10.0)
    counts = [
        temporal_profile(psi_total(s.with_(kappa=k), FRINGE_GRID), 5.0).n_fringes
        for k in (0.0, 0.5, 0.9, 1.0, 1.1, 1.5, 2.0, 3.0)
    ]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    base = temporal_profile(psi_total(s, FRINGE_GRID, weight=0.0), 5.0).n_fringes
    assert counts[0] > base
    assert counts[-1] == base


def test_closed_shutter_leaves_right_half_empty():
    g = SpaceTimeGrid(0.0, 4.0, 9, 0.1, 0.8, 8)
    f = oracle_propagate(S, g, ShutterSchedule.never_open())
    assert np.all(f.values[:, g.x > 0] == 0)


def test_oracle_stability_check_names_required_step():
    g = SpaceTimeGrid(0.0, 1.0, 101, 0.1, 2.0, 3)
    with pytest.raises(ValueError, match="need dt <="):
        oracle_propagate(S, g)


def test_crank_nicolson_norm_drift():
    x = np.linspace(-40, 40, 2048, endpoint=False)
    psi = np.exp(-(x**2) / 4 + 2j * x)
    psi /= math.sqrt(np.sum(abs(psi) ** 2) * (x[1] - x[0]))
    prop = CrankNicolsonPropagator(psi, x[1] - x[0], 1e-3)
    n0 = prop.norm()
    prop.step(1000)
    assert abs(prop.norm() - n0) <= 1e-5
    assert not np.allclose(prop.state(), psi)


def test_time_reversal_retraces_mean_position():
    x = np.linspace(-60, 60, 4096, endpoint=False)
    dx = x[1] - x[0]
    psi0 = np.exp(-((x + 10) ** 2) / 8 + 1.5j * x)
    psi0 /= math.sqrt(np.sum(abs(psi0) ** 2) * dx)
    mean_x = lambda p: float(np.sum(x * abs(p) ** 2) * dx)
    fwd = CrankNicolsonPropagator(psi0, dx, 0.01)
    path = []
    for n in range(0, 501, 100):
        fwd.advance_to(n * 0.01)
        path.append(mean_x(fwd.state()))
    back = CrankNicolsonPropagator(np.conj(fwd.state()), dx, 0.01)
    retraced = []
    for n in range(0, 501, 100):
        back.advance_to(n * 0.01)
        retraced.append(mean_x(back.state()))
    assert np.allclose(retraced[::-1], path, atol=1e-8)
    assert np.allclose(np.conj(back.state()), psi0, atol=1e-10)


def test_boundary_probe_shapes():
    s = S.with_(kappa=0.0)
    times = np.linspace(0.1, 8, 80)
    probe = boundary_probe(s, 3.0, [4.0, 6.0], times)
    assert probe.gaps().shape == (2,)
    assert np.all(probe.gaps() > 0)
    far = boundary_probe(s.with_(kappa=5.0), 3.0, [4.0], times)
    assert far.gaps()[0] < 1e-6
