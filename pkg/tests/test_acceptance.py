"""Acceptance suite: one test per headline criterion.

Every test prints a single ``[criterion N] PASS|FAIL`` line with the measured
quantities before asserting, so the log reads as a report even when green.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import TRUTH, synthetic_sweep

from tlalpan_lab import twotime
from tlalpan_lab.cli import main
from tlalpan_lab.collapse import fit_scaling, sweep_to_csv
from tlalpan_lab.doubleslit import SlitGeometry, compare_models, visibility_curve
from tlalpan_lab.echo import (
    Rectangle,
    Stadium,
    build_cavity,
    compare_geometries,
    coupled_slit_visibility,
    echo_fidelity,
    ensemble_echo,
    gaussian_packet,
)
from tlalpan_lab.moshinsky import (
    CrankNicolsonPropagator,
    ShutterScenario,
    SpaceTimeGrid,
    alpha,
    calibrate_sign,
    oracle_propagate,
    psi_ret,
    psi_total,
    temporal_profile,
)
from tlalpan_lab.scenario import three_box_probability

pytestmark = pytest.mark.acceptance

SPACING = 1 / 40
RECT = Rectangle(1.2, 0.95 / 1.2)
STAD = Stadium(0.5, 0.42)


@pytest.fixture
def verdict(capsys):
    def report(n, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {title} | {detail}")
        assert ok, detail

    return report


@pytest.fixture(scope="module")
def cavities():
    return build_cavity(RECT, SPACING), build_cavity(STAD, SPACING)


def matched_packets(c, centers, directions):
    h = c.spacing
    return [gaussian_packet(c, ctr, d, width=4 * h, momentum=0.25 * math.pi / h) for ctr in centers for d in directions]


def haar(rng, d):
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state(rng, d):
    return twotime.PureState.normalize(rng.standard_normal(d) + 1j * rng.standard_normal(d))


def test_1_abl_consistency(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20261015)
    worst_sum = worst_ns = 0.0
    for _ in range(100):
        d = int(rng.choice([2, 3, 4]))
        # random measurement: split a Haar basis into a random number of blocks
        basis = haar(rng, d)
        cuts = sorted(rng.choice(np.arange(1, d), size=int(rng.integers(1, d)), replace=False))
        proj = [twotime.Projector(b) for b in np.split(basis, cuts, axis=1)]
        i, f = random_state(rng, d), random_state(rng, d)
        u_pre, u_post = twotime.UnitaryMatrix(haar(rng, d)), twotime.UnitaryMatrix(haar(rng, d))
        p = twotime.abl_distribution(i, f, proj, u_pre, u_post)
        final = [twotime.PureState(col) for col in haar(rng, d).T]
        worst_sum = max(worst_sum, abs(float(p.sum()) - 1))
        worst_ns = max(worst_ns, twotime.check_nonsignaling(i, proj, final, u_pre, u_post))
    elapsed = time.perf_counter() - t0
    ok = worst_sum <= 1e-10 and worst_ns <= 1e-10 and elapsed < 10
    verdict(1, "ABL consistency over 100 random configs", ok,
            f"max |sum-1|={worst_sum:.1e}, max non-signaling dev={worst_ns:.1e}, {elapsed:.2f}s")


def test_2_three_box(verdict):
    pre = np.ones(3) / math.sqrt(3)
    post = np.array([1.0, 1.0, -1.0]) / math.sqrt(3)
    # direct formula: |<f|P1|i>|^2 / (|<f|P1|i>|^2 + |<f|(1 - P1)|i>|^2)
    a1 = abs(post[0] * pre[0]) ** 2
    a_rest = abs(post[1:] @ pre[1:]) ** 2
    oracle = float(a1 / (a1 + a_rest))
    p1 = three_box_probability()
    ok = abs(p1 - 1) <= 1e-12 and abs(oracle - 1) <= 1e-12
    verdict(2, "three-box intermediate probability for box 1", ok, f"P(box 1)={p1!r}, direct formula={oracle!r}")


def test_3_moshinsky_oracle(verdict):
    t0 = time.perf_counter()
    s, g = ShutterScenario(), SpaceTimeGrid.standard()
    assert (g.n_x, g.n_t, g.x_min, g.x_max, g.t_max) == (64, 64, 0.0, 40.0, 20.0) and g.t_min > 0
    oracle = oracle_propagate(s, g)
    T, X = np.meshgrid(g.t, g.x, indexing="ij")
    err = float(np.linalg.norm(psi_ret(s, X, T) - oracle.values) / np.linalg.norm(oracle.values))
    sign, _ = calibrate_sign(s, g, oracle)
    # norm drift of the oracle propagator at its own mesh and step, over the full window
    dx, dt = g.dx / 64, 1e-6
    x = (np.arange(8192) - 4096) * dx
    psi = np.exp(-(x**2) / 8 + 1j * x)
    psi /= math.sqrt(np.sum(abs(psi) ** 2) * dx)
    prop = CrankNicolsonPropagator(psi, dx, dt)
    n0 = prop.norm()
    prop.advance_to(g.t_max)
    drift = abs(prop.norm() - n0)
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-3 and drift <= 1e-5 and sign == 1 and elapsed < 60
    verdict(3, "closed form vs numerical shutter on the 64x64 grid", ok,
            f"L2 rel err={err:.2e}, norm drift={drift:.1e}, sign={sign:+d}, {elapsed:.1f}s")


def test_4_time_symmetric_fringes(verdict):
    t0 = time.perf_counter()
    s, x0 = ShutterScenario(tau=10.0), 5.0
    g = SpaceTimeGrid(x0 - 1, x0 + 1, 3, 20.0 / 512, 20.0, 512)
    base = temporal_profile(psi_total(s, g, weight=0.0), x0)
    full = temporal_profile(psi_total(s, g, weight=1.0), x0)
    kc = s.kappa_c
    kappas = [0.0, 0.5, 0.9, 1.0, 1.1, 1.5, 2.0, 2.5, 3.0, 4.0]
    counts, gaps = [], []
    for k in kappas:
        prof = temporal_profile(psi_total(s.with_(kappa=k * kc), g), x0)
        counts.append(prof.n_fringes)
        gaps.append(float(np.sum(np.abs(prof.intensity - base.intensity)) * g.dt))
    beyond = [i for i, k in enumerate(kappas) if k >= 2]
    gap_tol = 1e-6 * gaps[0]
    elapsed = time.perf_counter() - t0
    ok = (
        full.n_fringes > base.n_fringes
        and all(a >= b for a, b in zip(counts, counts[1:]))
        and all(counts[i] == base.n_fringes and gaps[i] <= gap_tol for i in beyond)
        and alpha(s.with_(kappa=0.0)) >= 0.999
        and elapsed < 120
    )
    verdict(4, "extra fringes with the future boundary, gone beyond 2 kappa_c", ok,
            f"alpha=1: {full.n_fringes} fringes vs alpha=0: {base.n_fringes}; counts {counts}; "
            f"max gap beyond 2kc={max(gaps[i] for i in beyond):.1e} (tol {gap_tol:.1e}); {elapsed:.1f}s")


def test_5_chi_sweep_visibility(verdict):
    t0 = time.perf_counter()
    g = SlitGeometry()
    v0 = g.analytic_visibility()
    chis = np.linspace(0, 1, 21)
    curve = visibility_curve(g, chis, 100_000, seed=2026)
    z = np.abs(curve.visibility - (1 - chis) * v0) / curve.stderr
    elapsed = time.perf_counter() - t0
    ok = np.all(z <= 3) and curve.visibility[0] >= 0.95 * v0 and curve.visibility[-1] <= 0.05 and elapsed < 300
    verdict(5, "V(chi) = (1 - chi) V0 at 1e5 events x 21 points", ok,
            f"max |z|={z.max():.2f}, V(0)={curve.visibility[0]:.4f} (V0={v0:.4f}), "
            f"V(1)={curve.visibility[-1]:.4f}, {elapsed:.1f}s")


def test_6_model_separation(verdict):
    g = SlitGeometry()
    chis = np.linspace(0, 1, 21)
    chi_c, nu = 0.7, 6.0

    def threshold(c):
        return 1.0 - math.exp(-((c / chi_c) ** nu))

    lin = sum(compare_models(visibility_curve(g, chis, 100_000, seed=1000 + i)).preferred == "linear" for i in range(100))
    qti = sum(
        compare_models(visibility_curve(g, chis, 100_000, seed=5000 + i, tag_law=threshold)).preferred == "qti"
        for i in range(100)
    )
    ok = lin >= 95 and qti >= 95
    verdict(6, "compare_models names the generating law", ok, f"linear {lin}/100, threshold {qti}/100")


def test_7_scaling_fit_round_trip(verdict):
    exact = fit_scaling(synthetic_sweep(), n_boot=0)
    worst = max(abs(getattr(exact, k) - v) for k, v in TRUTH.items())
    hits = 0
    for i in range(100):
        noisy = synthetic_sweep(noise=0.05, rng=np.random.default_rng(i))
        hits += fit_scaling(noisy, seed=i).covers(TRUTH)
    ok = worst <= 1e-4 and hits >= 90
    verdict(7, "scaling-law fit recovers the generating exponents", ok,
            f"exact max error={worst:.1e}; 95% band covers truth in {hits}/100 noisy trials")


def test_8_echo_geometry_ordering(verdict, cavities):
    t0 = time.perf_counter()
    rect, stad = cavities
    times = np.linspace(0, 12, 81)
    centers = [(0.1, 0.05), (-0.15, -0.1), (0.0, 0.15)]
    directions = [(j + 0.5) * math.pi / 6 for j in range(6)]
    pr, ps = matched_packets(rect, centers, directions), matched_packets(stad, centers, directions)
    still = ensemble_echo(rect, pr[:2], 0.0, times, seeds=[1]).fidelity
    a = ensemble_echo(rect, pr, 4.0, times, seeds=[1, 2, 3])
    b = ensemble_echo(stad, ps, 4.0, times, seeds=[1, 2, 3])
    cmp = compare_geometries(a, b)
    # two-level oracle: H = sz, V = sx, closed-form rotations
    sz, sx = np.diag([1.0, -1.0]), np.array([[0.0, 1.0], [1.0, 0.0]])
    psi = np.array([math.cos(0.3), math.sin(0.3) * np.exp(0.7j)])
    eps, tt = 0.5, np.linspace(0, 5, 51)
    w = math.hypot(1.0, eps)
    u0 = np.cos(tt)[:, None, None] * np.eye(2) - 1j * np.sin(tt)[:, None, None] * sz
    u1 = np.cos(w * tt)[:, None, None] * np.eye(2) - 1j * np.sin(w * tt)[:, None, None] * (sz + eps * sx) / w
    oracle = np.abs(np.einsum("i,tji,tjk,k->t", psi.conj(), u1.conj(), u0, psi)) ** 2
    two_level = float(np.max(np.abs(echo_fidelity(sz, sx, psi, eps, tt) - oracle)))
    elapsed = time.perf_counter() - t0
    ok = (
        abs(a.fidelity[0] - 1) <= 1e-10
        and abs(b.fidelity[0] - 1) <= 1e-10
        and np.max(np.abs(still - 1)) <= 1e-10
        and two_level <= 1e-8
        and abs(rect.n_sites - stad.n_sites) / rect.n_sites < 0.1
        and cmp.faster_chaotic
        and elapsed < 600
    )
    verdict(8, "stadium echo decays faster than rectangle", ok,
            f"sites {rect.n_sites}/{stad.n_sites}; rate ratio={cmp.ratio:.3f} +/- {cmp.ratio_stderr:.3f}; "
            f"eps=0 max |F-1|={np.max(np.abs(still - 1)):.1e}; two-level err={two_level:.1e}; {elapsed:.1f}s")


def test_9_coupled_slit(verdict, cavities):
    t0 = time.perf_counter()
    rect, stad = cavities
    times = np.linspace(0, 60, 801)
    markers = (matched_packets(rect, [(0.1, -0.1)], [0.0]), matched_packets(stad, [(0.1, -0.1)], [0.0]))
    runs = []
    for seed in (1, 2, 3):
        st = coupled_slit_visibility(rect, stad, markers, times, 2.0, seeds=[seed]).stats
        runs.append(
            (seed, st["regular"]["mean"], st["chaotic"]["mean"],
             len(st["regular"]["recurrences"]), len(st["chaotic"]["recurrences"]))
        )
    elapsed = time.perf_counter() - t0
    ok = all(mr > mc and nr >= 1 and nc == 0 for _, mr, mc, nr, nc in runs) and elapsed < 600
    detail = "; ".join(f"seed {s}: mean V {mr:.3f} vs {mc:.3f}, recurrences {nr} vs {nc}" for s, mr, mc, nr, nc in runs)
    verdict(9, "regular cavity keeps which-way visibility, chaotic does not", ok, f"{detail}; {elapsed:.1f}s")


SUBCOMMANDS = [
    ("moshinsky", "moshinsky-fringes.toml"),
    ("abl", "abl-check.toml"),
    ("doubleslit", "chi-sweep.toml"),
    ("echo", "cavity-echo.toml"),
    ("coupled-slit", "coupled-slit.toml"),
    ("sweep", "chi-sweep.toml"),
]


def test_10_determinism(verdict, tmp_path, capsys):
    configs = Path(__file__).parent.parent / "configs"
    same = {}
    for cmd, cfg in SUBCOMMANDS:
        runs = []
        for rep in ("a", "b"):
            out = tmp_path / cmd / rep
            assert main([cmd, "--config", str(configs / cfg), "--seed", "11", "--out", str(out)]) == 0
            runs.append((out / "manifest.json").read_bytes())
        same[cmd] = runs[0] == runs[1]
    csv = sweep_to_csv(synthetic_sweep(noise=0.05, rng=np.random.default_rng(3)), tmp_path / "sweep.csv")
    fits = []
    for rep in ("a", "b"):
        out = tmp_path / "fit" / rep
        assert main(["fit", str(csv), "--seed", "11", "--n-boot", "50", "--out", str(out)]) == 0
        fits.append((out / "scaling_fit.json").read_bytes())
    same["fit"] = fits[0] == fits[1] and "estimates" in json.loads(fits[0])
    capsys.readouterr()
    ok = all(same.values())
    verdict(10, "repeat runs give byte-identical manifests", ok,
            ", ".join(f"{k}={'same' if v else 'DIFFERENT'}" for k, v in same.items()))
