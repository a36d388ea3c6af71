"""Declarative experiment configs, validation, and deterministic runs with manifests.

A config is a TOML document::

    kind = "chi-sweep"
    seed = 7

    [geometry]
    slit_separation = 10.0

    [sweep]
    start = 0.0
    stop = 1.0
    points = 21

Every section and key is checked against a per-kind schema; unknown keys are
errors.  Annotated examples for each kind live in ``configs/``.
"""

from __future__ import annotations

import copy
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import tomli

from . import doubleslit, echo, moshinsky, twotime

__all__ = [
    "KINDS",
    "ExperimentConfig",
    "Violation",
    "ConfigError",
    "ExperimentError",
    "Manifest",
    "load_config",
    "default_config",
    "validate",
    "run_experiment",
    "fnv1a64",
    "atomic_write",
    "three_box_probability",
]

@dataclass(frozen=True)
class _Key:
    kind: type | tuple
    default: Any
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    # required keys must appear in a config file; default_config() fills them in
    required: bool = False


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


def _unit(v):
    return 0 <= v <= 1


_NUM = (int, float)

_CAVITY = {
    "spacing": _Key(_NUM, 1 / 40, _positive, "must be positive", required=True),
    "rect_width": _Key(_NUM, 1.2, _positive, "must be positive"),
    "rect_height": _Key(_NUM, 0.95 / 1.2, _positive, "must be positive"),
    "stadium_length": _Key(_NUM, 0.5, _non_negative, "must be non-negative"),
    "stadium_radius": _Key(_NUM, 0.42, _non_negative, "must be non-negative"),
    "stadium_core_height": _Key(_NUM, 0.0, _non_negative, "must be non-negative"),
}

_PACKETS = {
    # centres (x, y) and launch directions (radians); every combination is used
    "centers": _Key(list, [[0.1, 0.05], [-0.15, -0.1], [0.0, 0.15]]),
    "directions": _Key(list, [(j + 0.5) * math.pi / 6 for j in range(6)]),
    "width_sites": _Key(_NUM, 4.0, _positive, "must be positive"),
    "momentum_fraction": _Key(_NUM, 0.25, lambda v: 0 < v < 1, "must lie in (0, 1)"),
}

SCHEMA: dict[str, dict[str, dict[str, _Key]]] = {
    "moshinsky-fringes": {
        "scenario": {
            "k": _Key(_NUM, 1.0, _positive, "must be positive"),
            "m": _Key(_NUM, 1.0, _positive, "must be positive"),
            "hbar": _Key(_NUM, 1.0, _positive, "must be positive"),
            "tau": _Key(_NUM, 10.0, _positive, "must be positive", required=True),
            "kappa_c": _Key(_NUM, 1.0, _positive, "must be positive"),
            "alpha_width": _Key(_NUM, 0.05, _positive, "must be positive"),
        },
        "probe": {
            "x0": _Key(_NUM, 5.0, required=True),
            "t_max": _Key(_NUM, 20.0, _positive, "must be positive"),
            "n_t": _Key(int, 512, lambda v: v >= 8, "must be at least 8"),
        },
        "sweep": {"kappa": _Key(list, [0.0, 0.5, 0.9, 1.0, 1.1, 1.5, 2.0, 3.0])},
    },
    "cavity-echo": {
        "cavity": dict(_CAVITY),
        "packets": dict(_PACKETS),
        "echo": {
            "t_max": _Key(_NUM, 12.0, _positive, "must be positive"),
            "n_t": _Key(int, 81, lambda v: v >= 4, "must be at least 4"),
            "seeds": _Key(list, [1, 2, 3]),
        },
        "sweep": {"epsilon": _Key(list, [4.0], required=True)},
    },
    "coupled-slit": {
        "cavity": dict(_CAVITY),
        "packets": {**_PACKETS, "centers": _Key(list, [[0.1, -0.1]]), "directions": _Key(list, [0.0])},
        "marker": {
            "epsilon": _Key(_NUM, 2.0, _non_negative, "must be non-negative", required=True),
            "t_max": _Key(_NUM, 60.0, _positive, "must be positive"),
            "n_t": _Key(int, 801, lambda v: v >= 4, "must be at least 4"),
            "seeds": _Key(list, [1]),
            "level": _Key(_NUM, 0.5, _unit, "must lie in [0, 1]"),
            "drop": _Key(_NUM, 0.45, _unit, "must lie in [0, 1]"),
        },
    },
    "chi-sweep": {
        "geometry": {
            "slit_separation": _Key(_NUM, 10.0, _positive, "must be positive", required=True),
            "slit_width": _Key(_NUM, 2.0, _positive, "must be positive", required=True),
            "wavelength": _Key(_NUM, 1.0, _positive, "must be positive", required=True),
            "screen_distance": _Key(_NUM, 1e4, _positive, "must be positive", required=True),
            "n_bins": _Key(int, 512, lambda v: v >= 8, "must be at least 8"),
        },
        "events": {
            "n_events": _Key(int, 100_000, _positive, "must be positive"),
            # generating law for the tagging probability: "linear" (chi itself) or "threshold"
            "law": _Key(str, "linear", lambda v: v in ("linear", "threshold"), "must be 'linear' or 'threshold'"),
            "chi_c": _Key(_NUM, 0.7, _positive, "must be positive"),
            "nu": _Key(_NUM, 6.0, _positive, "must be positive"),
        },
        "sweep": {
            "start": _Key(_NUM, 0.0, _unit, "must lie in [0, 1]"),
            "stop": _Key(_NUM, 1.0, _unit, "must lie in [0, 1]"),
            "points": _Key(int, 21, lambda v: v >= 1, "must be at least 1"),
        },
    },
    "abl-check": {
        "abl": {
            "n_configs": _Key(int, 100, _positive, "must be positive"),
            "dims": _Key(list, [2, 3, 4]),
        },
    },
}

KINDS = tuple(SCHEMA)


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n" + "\n".join(f"  {v}" for v in self.violations))


class ExperimentError(RuntimeError):
    """A module precondition failed at a particular sweep point."""


@dataclass(frozen=True)
class Violation:
    field: str
    message: str
    level: str = "error"

    def __str__(self):
        return f"{self.level}: {self.field}: {self.message}"


@dataclass
class ExperimentConfig:
    kind: str
    seed: int | None = None
    sections: dict = field(default_factory=dict)
    output: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = copy.deepcopy(doc)
        kind = doc.pop("kind", None)
        seed = doc.pop("seed", None)
        output = doc.pop("output", None)
        return cls(kind=kind, seed=seed, sections=doc, output=output)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed}
        if self.output is not None:
            d["output"] = self.output
        d.update(copy.deepcopy(self.sections))
        return d

    def resolved(self) -> dict:
        """Sections with schema defaults filled in (config assumed valid)."""
        out = {}
        for sec, keys in SCHEMA[self.kind].items():
            given = self.sections.get(sec, {})
            out[sec] = {k: copy.deepcopy(given.get(k, entry.default)) for k, entry in keys.items()}
        return out


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            doc = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError([Violation(str(path), f"not valid TOML: {exc}")]) from None
    return ExperimentConfig.from_dict(doc)


def default_config(kind: str, seed: int = 0) -> ExperimentConfig:
    if kind not in SCHEMA:
        raise ValueError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    sections = {
        sec: {k: copy.deepcopy(entry.default) for k, entry in keys.items() if entry.required}
        for sec, keys in SCHEMA[kind].items()
    }
    return ExperimentConfig(kind=kind, seed=seed, sections={k: v for k, v in sections.items() if v})


def _type_ok(value, kind) -> bool:
    if kind is list:
        return isinstance(value, list)
    if kind is int or kind == (int,):
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == _NUM:
        return isinstance(value, _NUM) and not isinstance(value, bool) and math.isfinite(value)
    return isinstance(value, kind)


def _list_rules(kind: str, sec: str, key: str, value) -> list[str]:
    """Element-level checks for list-valued keys."""
    msgs = []
    if key in ("kappa", "epsilon"):
        if not value or any(not _type_ok(v, _NUM) or v < 0 for v in value):
            msgs.append("must be a non-empty list of non-negative numbers")
    elif key == "seeds":
        if not value or any(not _type_ok(v, int) or v < 0 for v in value):
            msgs.append("must be a non-empty list of non-negative integers")
    elif key == "centers":
        if not value or any(not (isinstance(c, list) and len(c) == 2 and all(_type_ok(x, _NUM) for x in c)) for c in value):
            msgs.append("must be a non-empty list of [x, y] pairs")
    elif key == "directions":
        if not value or any(not _type_ok(v, _NUM) for v in value):
            msgs.append("must be a non-empty list of angles")
    elif key == "dims":
        if not value or any(not _type_ok(v, int) or not 2 <= v <= twotime.MAX_DIM for v in value):
            msgs.append("must be a non-empty list of dimensions >= 2")
    return msgs


def validate(cfg: ExperimentConfig) -> list[Violation]:
    """All problems with ``cfg``; an empty list means it can run.  Never mutates ``cfg``."""
    out: list[Violation] = []
    if cfg.kind not in SCHEMA:
        return [Violation("kind", f"unknown experiment kind {cfg.kind!r}; expected one of {', '.join(KINDS)}")]
    if cfg.seed is None:
        out.append(Violation("seed", "missing; every run needs a seed"))
    elif not _type_ok(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        out.append(Violation("seed", "must be an integer in [0, 2^64)"))
    if cfg.output is not None and not isinstance(cfg.output, str):
        out.append(Violation("output", "must be a string path"))
    schema = SCHEMA[cfg.kind]
    for sec, body in cfg.sections.items():
        if sec not in schema:
            out.append(Violation(sec, f"unknown section for kind {cfg.kind!r}"))
            continue
        if not isinstance(body, dict):
            out.append(Violation(sec, "must be a table"))
            continue
        for key, value in body.items():
            name = f"{sec}.{key}"
            entry = schema[sec].get(key)
            if entry is None:
                out.append(Violation(name, "unknown key"))
            elif not _type_ok(value, entry.kind):
                out.append(Violation(name, f"has the wrong type ({type(value).__name__})"))
            elif entry.check is not None and not entry.check(value):
                out.append(Violation(name, entry.rule))
            elif entry.kind is list:
                out.extend(Violation(name, m) for m in _list_rules(cfg.kind, sec, key, value))
    for sec, keys in schema.items():
        for key, entry in keys.items():
            if entry.required and key not in cfg.sections.get(sec, {}):
                out.append(Violation(f"{sec}.{key}", "required but missing"))
    if any(v.level == "error" for v in out):
        return out
    out.extend(_semantic_checks(cfg))
    return out


def _semantic_checks(cfg: ExperimentConfig) -> list[Violation]:
    out = []
    r = cfg.resolved()
    if cfg.kind in ("cavity-echo", "coupled-slit"):
        cav = r["cavity"]
        if cav["stadium_radius"] == 0:
            out.append(
                Violation("cavity.stadium_radius", "zero radius: the stadium degenerates to its core rectangle", "warning")
            )
            if cav["stadium_core_height"] == 0 or cav["stadium_length"] == 0:
                out.append(Violation("cavity.stadium_core_height", "zero-radius stadium needs a core of positive area"))
    if cfg.kind == "chi-sweep":
        g = r["geometry"]
        if g["slit_width"] >= g["slit_separation"]:
            out.append(Violation("geometry.slit_width", "must be below slit_separation"))
        if not g["screen_distance"] > 10 * g["slit_separation"] ** 2 / g["wavelength"]:
            out.append(Violation("geometry.screen_distance", "too close for the far-field model (need L > 10 d^2 / lambda)"))
        if r["sweep"]["stop"] < r["sweep"]["start"]:
            out.append(Violation("sweep.stop", "must not be below sweep.start"))
    if cfg.kind == "coupled-slit" and r["marker"]["drop"] > r["marker"]["level"]:
        out.append(Violation("marker.drop", "must not exceed marker.level"))
    return out


# ---------------------------------------------------------------------------
# output and digests


def fnv1a64(data: bytes) -> str:
    """64-bit FNV-1a hash as 16 hex digits."""
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


def _canonical(text: str) -> bytes:
    lines = text.replace("\r\n", "\n").split("\n")
    return ("\n".join(line.rstrip() for line in lines).rstrip("\n") + "\n").encode()


def atomic_write(path: Path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list

    def render(self, fmt: str) -> tuple[str, str]:
        if fmt == "json":
            recs = [{c: _jsonable(v) for c, v in zip(self.columns, r)} for r in self.rows]
            return f"{self.name}.json", json.dumps(recs, indent=1, sort_keys=True) + "\n"
        body = [",".join(self.columns)] + [",".join(_fmt(v) for v in r) for r in self.rows]
        return f"{self.name}.csv", "\n".join(body) + "\n"


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


@dataclass
class Manifest:
    kind: str
    seed: int
    files: list[dict]
    summary: dict
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.__dict__), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# runners; each returns (tables, summary)


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(i, x) for i, x in enumerate(items)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(len(items)), items))


def _point_error(axis, value, exc):
    return ExperimentError(f"sweep point {axis}={value!r} failed: {exc}")


def _run_moshinsky(cfg, r, workers):
    sc = moshinsky.ShutterScenario(**r["scenario"])
    p = r["probe"]
    n_t = p["n_t"]
    grid = moshinsky.SpaceTimeGrid(p["x0"] - 1.0, p["x0"] + 1.0, 3, p["t_max"] / n_t, p["t_max"], n_t)
    baseline = moshinsky.temporal_profile(moshinsky.psi_total(sc, grid, weight=0.0), p["x0"])
    dt = grid.dt

    def point(i, kappa):
        try:
            s = sc.with_(kappa=float(kappa))
            prof = moshinsky.temporal_profile(moshinsky.psi_total(s, grid), p["x0"])
        except ValueError as exc:
            raise _point_error("kappa", kappa, exc) from None
        gap = float(np.sum(np.abs(prof.intensity - baseline.intensity)) * dt)
        return kappa, moshinsky.alpha(s), prof, gap

    results = _map(point, r["sweep"]["kappa"], workers)
    cols = ["t", "intensity_alpha0"] + [f"intensity_kappa_{k!r}" for k, *_ in results]
    rows = [
        [t, baseline.intensity[j]] + [res[2].intensity[j] for res in results] for j, t in enumerate(grid.t)
    ]
    fringe_rows = [[k, a, prof.n_fringes, prof.visibility, gap] for k, a, prof, gap in results]
    counts = [prof.n_fringes for _, _, prof, _ in results]
    drop = None
    for i, (k, *_rest) in enumerate(results):
        if all(c == baseline.n_fringes for c in counts[i:]):
            drop = k
            break
    summary = {
        "baseline_fringes": baseline.n_fringes,
        "fringes_per_kappa": {repr(k): c for (k, *_), c in zip(results, counts)},
        "l1_gap_per_kappa": {repr(k): g for k, _, _, g in results},
        "drop_kappa": drop,
    }
    tables = [
        Table("temporal_profiles", cols, rows),
        Table("fringes", ["kappa", "alpha", "n_fringes", "visibility", "l1_gap"], fringe_rows),
    ]
    return tables, summary


def _cavities(cav):
    h = cav["spacing"]
    rect = echo.build_cavity(echo.Rectangle(cav["rect_width"], cav["rect_height"]), h)
    stad = echo.build_cavity(
        echo.Stadium(cav["stadium_length"], cav["stadium_radius"], cav["stadium_core_height"]), h
    )
    return rect, stad


def _packets(c, pk):
    h = c.spacing
    return [
        echo.gaussian_packet(c, tuple(ctr), float(d), width=pk["width_sites"] * h, momentum=pk["momentum_fraction"] * math.pi / h)
        for ctr in pk["centers"]
        for d in pk["directions"]
    ]


def _run_echo(cfg, r, workers):
    rect, stad = _cavities(r["cavity"])
    e = r["echo"]
    times = np.linspace(0.0, e["t_max"], e["n_t"])
    pr, ps = _packets(rect, r["packets"]), _packets(stad, r["packets"])

    def point(i, eps):
        try:
            a = echo.ensemble_echo(rect, pr, eps, times, seeds=e["seeds"])
            b = echo.ensemble_echo(stad, ps, eps, times, seeds=e["seeds"])
            return eps, a, b, echo.compare_geometries(a, b)
        except ValueError as exc:
            raise _point_error("epsilon", eps, exc) from None

    results = _map(point, r["sweep"]["epsilon"], workers)
    tables, comp = [], {}
    for eps, a, b, c in results:
        for tag, res in (("rectangle", a), ("stadium", b)):
            tables.append(Table(f"echo_{tag}_eps_{eps!r}", ["t", "F"], list(zip(times, res.fidelity))))
        comp[repr(eps)] = {
            "rate_rectangle": c.rate_regular,
            "rate_stadium": c.rate_chaotic,
            "ratio": c.ratio,
            "ratio_stderr": c.ratio_stderr,
            "stadium_faster": c.faster_chaotic,
            "no_decay": c.no_decay,
        }
    summary = {"sites": {"rectangle": rect.n_sites, "stadium": stad.n_sites}, "comparison": comp}
    return tables, summary


def _run_coupled(cfg, r, workers):
    rect, stad = _cavities(r["cavity"])
    m = r["marker"]
    times = np.linspace(0.0, m["t_max"], m["n_t"])
    try:
        res = echo.coupled_slit_visibility(
            rect, stad, (_packets(rect, r["packets"]), _packets(stad, r["packets"])), times, m["epsilon"], m["seeds"]
        )
    except ValueError as exc:
        raise _point_error("epsilon", m["epsilon"], exc) from None
    res = echo.CoupledSlitResult(res.times, res.regular, res.chaotic, res.epsilon, m["level"], m["drop"])
    table = Table("coupled_slit", ["t", "V_regular", "V_chaotic"], list(zip(times, res.regular, res.chaotic)))
    return [table], {"epsilon": m["epsilon"], **res.stats}


def _slit_geometry(g):
    return doubleslit.SlitGeometry(
        slit_separation=g["slit_separation"],
        slit_width=g["slit_width"],
        wavelength=g["wavelength"],
        screen_distance=g["screen_distance"],
        n_bins=g["n_bins"],
    )


def _run_chi_sweep(cfg, r, workers, histograms: bool = False):
    geom = _slit_geometry(r["geometry"])
    ev, sw = r["events"], r["sweep"]
    # rounding keeps grid labels like 0.15 free of float noise
    chis = np.round(np.linspace(sw["start"], sw["stop"], sw["points"]), 12).tolist()
    if ev["law"] == "threshold":
        cc, nu = ev["chi_c"], ev["nu"]

        def law(x):
            return 1.0 - math.exp(-((x / cc) ** nu))
    else:
        def law(x):
            return x

    def point(i, chi):
        try:
            b = doubleslit.simulate_batch(geom, law(chi), ev["n_events"], cfg.seed, index=i)
            v, s = doubleslit.fit_visibility(geom, b.histogram.counts)
        except ValueError as exc:
            raise _point_error("chi", chi, exc) from None
        return chi, b, v, s

    results = _map(point, chis, workers)
    curve = doubleslit.VisibilityCurve(
        np.array(chis), np.array([x[2] for x in results]), np.array([x[3] for x in results]), ev["n_events"], cfg.seed
    )
    tables = [Table("visibility_curve", ["chi", "V", "stderr"], curve.rows())]
    if histograms:
        centers = geom.centers
        cols = ["bin_center"] + [f"count_chi_{c!r}" for c in chis]
        rows = [[centers[j]] + [int(b.histogram.counts[j]) for _, b, _, _ in results] for j in range(geom.n_bins)]
        tables.append(Table("screen_histograms", cols, rows))
    summary = {
        "v0_analytic": geom.analytic_visibility(),
        "visibility": {repr(c): v for c, _, v, _ in results},
        "n_tagged": {repr(c): b.n_tagged for c, b, _, _ in results},
    }
    if len(chis) >= 10 and np.ptp(curve.visibility) > 0:
        summary["model_comparison"] = doubleslit.compare_models(curve).to_dict()
    return tables, summary


def _run_abl(cfg, r, workers):
    rng = np.random.default_rng(cfg.seed)
    rows = []
    worst_sum = worst_ns = 0.0
    for n in range(r["abl"]["n_configs"]):
        d = int(rng.choice(r["abl"]["dims"]))
        i = twotime.PureState.normalize(rng.standard_normal(d) + 1j * rng.standard_normal(d))
        f = twotime.PureState.normalize(rng.standard_normal(d) + 1j * rng.standard_normal(d))
        u_pre, u_post = _haar(rng, d), _haar(rng, d)
        proj = twotime.computational_projectors(d)
        probs = twotime.abl_distribution(i, f, proj, u_pre, u_post)
        fb = [twotime.PureState(col) for col in _haar(rng, d).entries.T]
        ns = twotime.check_nonsignaling(i, proj, fb, u_pre, u_post)
        dev = abs(float(probs.sum()) - 1.0)
        worst_sum, worst_ns = max(worst_sum, dev), max(worst_ns, ns)
        rows.append([n, d, dev, ns])
    three_box = three_box_probability()
    summary = {"max_sum_deviation": worst_sum, "max_nonsignaling_deviation": worst_ns, "three_box_p1": three_box}
    return [Table("abl_checks", ["config", "dim", "sum_deviation", "nonsignaling_deviation"], rows)], summary


def _haar(rng, d) -> twotime.UnitaryMatrix:
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / math.sqrt(2)
    q, rr = np.linalg.qr(z)
    q = q * (np.diag(rr) / np.abs(np.diag(rr)))
    return twotime.UnitaryMatrix(q)


def three_box_probability() -> float:
    """Probability of finding the particle in box 1 when opening box 1 only.

    Pre-selection (|1> + |2> + |3>)/sqrt 3, post-selection (|1> + |2> - |3>)/sqrt 3,
    intermediate measurement {P1, 1 - P1}.
    """
    pre = twotime.PureState.normalize([1, 1, 1])
    post = twotime.PureState.normalize([1, 1, -1])
    eye = np.eye(3)
    proj = [twotime.Projector(eye[:, [0]]), twotime.Projector(eye[:, [1, 2]])]
    return twotime.abl_probability(pre, post, proj, 0)


_RUNNERS = {
    "moshinsky-fringes": _run_moshinsky,
    "cavity-echo": _run_echo,
    "coupled-slit": _run_coupled,
    "chi-sweep": _run_chi_sweep,
    "abl-check": _run_abl,
}


def run_experiment(
    cfg: ExperimentConfig,
    out_dir=None,
    fmt: str = "csv",
    workers: int = 1,
    histograms: bool = False,
) -> Manifest:
    """Validate, run, and write every artifact plus ``manifest.json`` under ``out_dir``."""
    if cfg.kind not in _RUNNERS:
        raise ConfigError([Violation("kind", f"unknown experiment kind {cfg.kind!r}; expected one of {', '.join(KINDS)}")])
    problems = validate(cfg)
    errors = [v for v in problems if v.level == "error"]
    if errors:
        raise ConfigError(errors)
    if fmt not in ("csv", "json"):
        raise ValueError("format must be 'csv' or 'json'")
    out = Path(out_dir if out_dir is not None else (cfg.output or "."))
    r = cfg.resolved()
    runner = _RUNNERS[cfg.kind]
    if cfg.kind == "chi-sweep":
        tables, summary = runner(cfg, r, workers, histograms)
    else:
        tables, summary = runner(cfg, r, workers)
    # render everything first so a failure leaves no partial artifacts behind
    rendered = [t.render(fmt) for t in tables]
    summary_text = json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n"
    rendered.append(("summary.json", summary_text))
    files = []
    for name, text in rendered:
        data = _canonical(text)
        atomic_write(out / name, data)
        files.append({"path": name, "digest": fnv1a64(data), "bytes": len(data)})
    manifest = Manifest(cfg.kind, cfg.seed, files, _jsonable(summary), [str(v) for v in problems])
    atomic_write(out / "manifest.json", manifest.to_json().encode())
    return manifest
