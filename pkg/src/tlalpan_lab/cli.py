"""Command-line interface: one subcommand per experiment kind, plus ``sweep`` and ``fit``."""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import collapse, doubleslit, scenario

__all__ = ["main", "emit_plot_data", "InvocationResult"]

SUBCOMMAND_KINDS = {
    "moshinsky": "moshinsky-fringes",
    "abl": "abl-check",
    "doubleslit": "chi-sweep",
    "echo": "cavity-echo",
    "coupled-slit": "coupled-slit",
    "sweep": None,
}


@dataclass
class InvocationResult:
    exit_code: int
    paths: list = field(default_factory=list)
    lines: list = field(default_factory=list)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML experiment config (defaults to the built-in config)")
    p.add_argument("--seed", type=_u64, help="64-bit seed; a random seed is drawn and reported when omitted")
    p.add_argument("--out", type=Path, help="output directory (default: $TLALPAN_OUT, else the current directory)")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="format of data tables (default csv)")
    p.add_argument("--workers", type=int, default=1, help="threads for independent sweep points (default 1)")
    p.add_argument("--plot-data", action="store_true", help="also write gnuplot-ready .dat files under OUT/plot")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tlalpan", description="Numerical experiments on time-symmetric quantum protocols.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "moshinsky": "temporal fringes behind a shutter, swept over the boundary-coupling parameter kappa",
        "abl": "random checks of two-time (ABL) probabilities and non-signaling, plus the three-box case",
        "doubleslit": "tagged double-slit visibility sweep with screen histograms",
        "echo": "Loschmidt echo in a rectangle and a stadium",
        "coupled-slit": "which-way visibility with a regular and a chaotic cavity as path marker",
        "sweep": "run any config (its 'kind' key picks the experiment; default chi-sweep)",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text, description=text))
    fit = sub.add_parser("fit", help="fit scaling laws to a sweep CSV", description=(
        "Fit the joint scaling laws to a CSV with columns chi,visibility,O,tau_rc, or compare the linear "
        "and threshold visibility laws on a CSV with columns chi,V,stderr."
    ))
    fit.add_argument("sweep_csv", type=Path, help="sweep CSV file")
    _common(fit)
    fit.add_argument("--n-boot", type=int, default=200, help="bootstrap resamples (default 200)")
    fit.add_argument("--family", choices=("stretched_exp", "power"), default="stretched_exp",
                     help="visibility law for the joint fit")
    fit.add_argument("--n-events", type=int, default=None,
                     help="events per point behind a chi,V,stderr curve (for the sample-size estimate)")
    return parser


def _out_dir(args) -> Path:
    if args.out is not None:
        return args.out
    env = os.environ.get("TLALPAN_OUT")
    return Path(env) if env else Path(".")


def _resolve_config(args, kind):
    if args.config is not None:
        cfg = scenario.load_config(args.config)
        if kind is not None and cfg.kind != kind:
            raise scenario.ConfigError(
                [scenario.Violation("kind", f"config kind {cfg.kind!r} does not match subcommand (expects {kind!r})")]
            )
    else:
        cfg = scenario.default_config(kind or "chi-sweep")
        cfg.seed = None
    auto = False
    if args.seed is not None:
        cfg.seed = args.seed
    elif cfg.seed is None:
        cfg.seed = secrets.randbits(63)
        auto = True
    return cfg, auto


def _run(args) -> InvocationResult:
    kind = SUBCOMMAND_KINDS[args.command]
    cfg, auto = _resolve_config(args, kind)
    out = _out_dir(args)
    man = scenario.run_experiment(
        cfg, out, fmt=args.format, workers=args.workers, histograms=args.command == "doubleslit"
    )
    paths = [out / f["path"] for f in man.files] + [out / "manifest.json"]
    lines = [f"{cfg.kind}: seed {cfg.seed}" + (" (auto-selected)" if auto else "")]
    lines += [f"warning: {w}" for w in man.warnings]
    lines += [f"wrote {p}" for p in paths]
    if args.plot_data and cfg.kind == "abl-check":
        lines.append("note: abl-check results contain no curves; no plot data written")
    elif args.plot_data:
        written = emit_plot_data(out, out / "plot")
        paths += written
        lines += [f"wrote {p}" for p in written]
    return InvocationResult(0, paths, lines)


def _fit(args) -> InvocationResult:
    path = args.sweep_csv
    if not path.is_file():
        raise ValueError(f"sweep CSV not found: {path}")
    header = path.read_text().splitlines()[0].strip().split(",") if path.stat().st_size else []
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else 0
    if set(header) >= {"chi", "visibility", "O", "tau_rc"}:
        ops = collapse.sweep_from_csv(path)
        fit = collapse.fit_scaling(ops, family=args.family, n_boot=args.n_boot, seed=seed)
        doc = fit.to_dict()
        name = "scaling_fit.json"
    elif set(header) >= {"chi", "V", "stderr"}:
        data = np.genfromtxt(path, delimiter=",", names=True, dtype=float, ndmin=1)
        n_events = args.n_events if args.n_events is not None else 100_000
        curve = doubleslit.VisibilityCurve(data["chi"], data["V"], data["stderr"], n_events)
        doc = doubleslit.compare_models(curve).to_dict()
        name = "model_comparison.json"
    else:
        raise ValueError(f"{path}: expected columns chi,visibility,O,tau_rc or chi,V,stderr; found {','.join(header)}")
    doc["seed"] = seed
    target = out / name
    scenario.atomic_write(target, (json.dumps(scenario._jsonable(doc), indent=2, sort_keys=True) + "\n").encode())
    return InvocationResult(0, [target], [f"fit: seed {seed}", f"wrote {target}"])


# ---------------------------------------------------------------------------
# plot data


def _read_csv(path: Path):
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float, ndmin=1)
    return data.dtype.names, data


def _write_dat(path: Path, columns, arrays) -> Path:
    lines = ["# " + " ".join(columns)]
    lines += [" ".join(repr(float(v)) for v in row) for row in zip(*arrays)]
    scenario.atomic_write(path, ("\n".join(lines) + "\n").encode())
    return path


def emit_plot_data(results_dir, plot_dir=None) -> list[Path]:
    """Turn result CSVs in ``results_dir`` into whitespace-separated .dat files.

    One file per curve: V vs chi, F vs t per geometry, V vs t per cavity,
    intensity vs t per kappa.  Each starts with a ``#`` header naming the columns.
    """
    src = Path(results_dir)
    if not src.is_dir():
        raise ValueError(f"results directory not found: {src}")
    dst = Path(plot_dir) if plot_dir is not None else src / "plot"
    csvs = sorted(src.glob("*.csv"))
    if not csvs:
        raise ValueError(f"no result CSV files in {src}")
    written = []
    for path in csvs:
        names, d = _read_csv(path)
        stem = path.stem
        if stem == "visibility_curve":
            written.append(_write_dat(dst / "chi_V.dat", ["chi", "V", "stderr"], [d["chi"], d["V"], d["stderr"]]))
        elif stem.startswith("echo_"):
            written.append(_write_dat(dst / f"{stem}.dat", ["t", "F"], [d["t"], d["F"]]))
        elif stem == "coupled_slit":
            for tag in ("regular", "chaotic"):
                written.append(_write_dat(dst / f"coupled_{tag}.dat", ["t", "V"], [d["t"], d[f"V_{tag}"]]))
        elif stem == "temporal_profiles":
            for col in names[1:]:
                label = col.replace("intensity_", "")
                written.append(_write_dat(dst / f"intensity_{label}.dat", ["t", "intensity"], [d["t"], d[col]]))
    if not written:
        raise ValueError(f"no plottable results in {src} (looked at {', '.join(p.name for p in csvs)})")
    return written


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit":
            res = _fit(args)
        else:
            res = _run(args)
    except scenario.ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ValueError, OverflowError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for line in res.lines:
        print(line)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
