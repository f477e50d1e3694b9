"""Command-line front end: TOML-configured experiments writing CSV/JSON artifacts.

Usage::

    dirac-spectral <command> --config run.toml [--out DIR] [--threads N] [--seed S]

Commands: ``fundamental``, ``verify-asymptotics``, ``lemma1-sweep``, ``eigs``,
``expansion-audit``.  Exit status 2 signals a configuration error, 3 a
numerical failure.  Every run writes ``manifest.json`` holding the fully
resolved configuration; passing that manifest back as ``--config`` reproduces
the outputs bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .asymptotics import (
    CombinationCoefficients,
    asymptotics_scan,
    lemma1_sweep,
    lower_bound_audit,
    random_unit_coefficients,
    scan_checks,
)
from .bvp import BoundaryConditions, biorthogonal_system, find_eigenvalues
from .dirac_solver import (
    DIRECT,
    PICARD_TOL,
    ConstantPotential,
    SampledPotential,
    TrigPolyPotential,
    ZeroPotential,
    read_potential_csv,
    solve_fundamental,
)
from .errors import DiracError
from .expansion import divergence_witness, log_taus, synthetic_system
from .function_space import DEFAULT_NODES_PER_PANEL, Grid, GridFunction2, SpectralParameter

COMMANDS = ("fundamental", "verify-asymptotics", "lemma1-sweep", "eigs", "expansion-audit")
PRESETS = ("zero", "constant", "trig", "sampled")
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _complex(value, field):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value):
        return complex(value[0], value[1])
    raise ConfigError(field, f"expected a number or an [re, im] pair, got {value!r}")


def _pair(z: complex):
    return [z.real, z.imag]


def _positive(value, field, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(field, f"expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(field, f"expected an integer, got {value!r}")
    if not value > 0:
        raise ConfigError(field, f"must be positive, got {value!r}")
    return kind(value)


def _table(raw, key, field=None):
    val = raw.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(field or key, "expected a table")
    return val


def _check_keys(table, allowed, prefix):
    for key in table:
        if key not in allowed:
            raise ConfigError(f"{prefix}.{key}" if prefix else key, f"unknown key (allowed: {', '.join(sorted(allowed))})")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; ``resolved()`` is its JSON echo."""

    potential: dict
    grid: dict
    spectral: dict
    boundary: dict | None
    coefficients: dict
    tolerances: dict
    expansion: dict
    output_dir: str
    seed: int
    base_dir: str = "."

    # -- parsing ---------------------------------------------------------

    @classmethod
    def from_mapping(cls, raw: dict, base_dir: str = ".") -> "ExperimentConfig":
        _check_keys(
            raw,
            {"potential", "grid", "lambda", "boundary", "coefficients", "tolerances", "expansion", "output_dir", "seed"},
            "",
        )
        potential = cls._parse_potential(_table(raw, "potential"), base_dir)
        grid = cls._parse_grid(_table(raw, "grid"))
        spectral = cls._parse_lambda(_table(raw, "lambda"))
        boundary = None
        if "boundary" in raw:
            boundary = cls._parse_boundary(_table(raw, "boundary"))
        coefficients = cls._parse_coefficients(_table(raw, "coefficients"))
        tolerances = cls._parse_tolerances(_table(raw, "tolerances"))
        expansion = cls._parse_expansion(_table(raw, "expansion"))
        output_dir = raw.get("output_dir", "out")
        if not isinstance(output_dir, str) or not output_dir:
            raise ConfigError("output_dir", "expected a non-empty string")
        seed = raw.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigError("seed", f"expected an unsigned 64-bit integer, got {seed!r}")
        return cls(potential, grid, spectral, boundary, coefficients, tolerances, expansion, output_dir, seed, base_dir)

    @staticmethod
    def _parse_potential(t, base_dir):
        _check_keys(t, {"preset", "p", "q", "p_coeffs", "q_coeffs", "file"}, "potential")
        preset = t.get("preset", "zero")
        if preset not in PRESETS:
            raise ConfigError("potential.preset", f"unknown preset {preset!r} (expected one of {', '.join(PRESETS)})")
        out = {"preset": preset}
        if preset == "constant":
            out["p"] = _pair(_complex(t.get("p", 1.0), "potential.p"))
            out["q"] = _pair(_complex(t.get("q", 1.0), "potential.q"))
        elif preset == "trig":
            for key in ("p_coeffs", "q_coeffs"):
                coeffs = t.get(key, {})
                if not isinstance(coeffs, dict):
                    raise ConfigError(f"potential.{key}", "expected a table mapping frequency to [re, im]")
                parsed = {}
                for k, v in coeffs.items():
                    try:
                        freq = int(k)
                    except ValueError:
                        raise ConfigError(f"potential.{key}.{k}", "frequency must be an integer") from None
                    parsed[str(freq)] = _pair(_complex(v, f"potential.{key}.{k}"))
                out[key] = dict(sorted(parsed.items(), key=lambda kv: int(kv[0])))
        elif preset == "sampled":
            if "file" not in t or not isinstance(t["file"], str):
                raise ConfigError("potential.file", "sampled preset needs a CSV path")
            path = Path(t["file"])
            if not path.is_absolute():
                path = Path(base_dir) / path
            if not path.is_file():
                raise ConfigError("potential.file", f"no such file: {path}")
            try:
                read_potential_csv(path)
            except (ValueError, IndexError) as exc:
                raise ConfigError("potential.file", f"{path}: {exc}") from None
            out["file"] = str(path.resolve())
        return out

    @staticmethod
    def _parse_grid(t):
        _check_keys(t, {"panels", "nodes_per_panel"}, "grid")
        out = {"nodes_per_panel": _positive(t.get("nodes_per_panel", DEFAULT_NODES_PER_PANEL), "grid.nodes_per_panel", int)}
        if "panels" in t:
            out["panels"] = _positive(t["panels"], "grid.panels", int)
        return out

    @staticmethod
    def _parse_lambda(t):
        _check_keys(t, {"values", "sigma", "taus", "rectangle"}, "lambda")
        out = {}
        if "values" in t:
            vals = t["values"]
            if not isinstance(vals, list) or not vals:
                raise ConfigError("lambda.values", "expected a non-empty list of [re, im] pairs")
            out["values"] = [_pair(_complex(v, f"lambda.values[{i}]")) for i, v in enumerate(vals)]
        if "sigma" in t:
            if isinstance(t["sigma"], bool) or not isinstance(t["sigma"], (int, float)):
                raise ConfigError("lambda.sigma", "expected a real number")
            out["sigma"] = float(t["sigma"])
        if "taus" in t:
            taus = t["taus"]
            if not isinstance(taus, list) or not taus:
                raise ConfigError("lambda.taus", "expected a non-empty list")
            taus = [_positive(v, f"lambda.taus[{i}]") for i, v in enumerate(taus)]
            if any(b <= a for a, b in zip(taus, taus[1:])):
                raise ConfigError("lambda.taus", "must be strictly increasing")
            out["taus"] = taus
        if "rectangle" in t:
            r = t["rectangle"]
            if not (isinstance(r, list) and len(r) == 4 and all(isinstance(v, (int, float)) for v in r)):
                raise ConfigError("lambda.rectangle", "expected [re_min, re_max, im_min, im_max]")
            r = [float(v) for v in r]
            if not (r[1] > r[0] and r[3] > r[2]):
                raise ConfigError("lambda.rectangle", f"rectangle {r} is empty")
            out["rectangle"] = r
        return out

    @staticmethod
    def _parse_boundary(t):
        _check_keys(t, {"a"}, "boundary")
        a = t.get("a")
        if not (isinstance(a, list) and len(a) == 2 and all(isinstance(r, list) and len(r) == 4 for r in a)):
            raise ConfigError("boundary.a", "expected a 2x4 array of [re, im] pairs")
        rows = [[_complex(v, f"boundary.a[{i}][{j}]") for j, v in enumerate(row)] for i, row in enumerate(a)]
        try:
            BoundaryConditions(rows)
        except ValueError as exc:
            raise ConfigError("boundary.a", str(exc)) from None
        return {"a": [[_pair(v) for v in row] for row in rows]}

    @staticmethod
    def _parse_coefficients(t):
        _check_keys(t, {"C1", "C2", "C1t", "C2t", "normalize"}, "coefficients")
        out = {k: _pair(_complex(t.get(k, 1.0), f"coefficients.{k}")) for k in ("C1", "C2", "C1t", "C2t")}
        normalize = t.get("normalize", False)
        if not isinstance(normalize, bool):
            raise ConfigError("coefficients.normalize", "expected true or false")
        out["normalize"] = normalize
        try:
            CombinationCoefficients(*(complex(*out[k]) for k in ("C1", "C2", "C1t", "C2t")))
        except ValueError as exc:
            raise ConfigError("coefficients", str(exc)) from None
        return out

    @staticmethod
    def _parse_tolerances(t):
        _check_keys(t, {"picard", "root"}, "tolerances")
        return {
            "picard": _positive(t.get("picard", PICARD_TOL), "tolerances.picard"),
            "root": _positive(t.get("root", 1e-10), "tolerances.root"),
        }

    @staticmethod
    def _parse_expansion(t):
        _check_keys(t, {"source", "count", "probe"}, "expansion")
        source = t.get("source", "eigs")
        if source not in ("eigs", "synthetic"):
            raise ConfigError("expansion.source", f"unknown source {source!r} (expected eigs or synthetic)")
        probe = t.get("probe", "none")
        if probe not in ("none", "ones", "random"):
            raise ConfigError("expansion.probe", f"unknown probe {probe!r} (expected none, ones or random)")
        return {"source": source, "count": _positive(t.get("count", 30), "expansion.count", int), "probe": probe}

    # -- building blocks -------------------------------------------------

    def resolved(self) -> dict:
        out = {
            "potential": self.potential,
            "grid": self.grid,
            "lambda": self.spectral,
            "coefficients": self.coefficients,
            "tolerances": self.tolerances,
            "expansion": self.expansion,
            "output_dir": self.output_dir,
            "seed": self.seed,
        }
        if self.boundary is not None:
            out["boundary"] = self.boundary
        return out

    def build_potential(self):
        p = self.potential
        if p["preset"] == "zero":
            return ZeroPotential()
        if p["preset"] == "constant":
            return ConstantPotential(complex(*p["p"]), complex(*p["q"]))
        if p["preset"] == "trig":
            return TrigPolyPotential(
                {int(k): complex(*v) for k, v in p["p_coeffs"].items()},
                {int(k): complex(*v) for k, v in p["q_coeffs"].items()},
            )
        return read_potential_csv(p["file"])

    def build_grid(self, lam_max) -> Grid:
        n = self.grid["nodes_per_panel"]
        if "panels" in self.grid:
            return Grid(self.grid["panels"], n)
        return Grid.for_lambda(lam_max, n)

    def coeffs(self) -> CombinationCoefficients:
        c = self.coefficients
        return CombinationCoefficients(*(complex(*c[k]) for k in ("C1", "C2", "C1t", "C2t")))

    def bc(self) -> BoundaryConditions:
        if self.boundary is None:
            raise ConfigError("boundary", "this command needs a [boundary] table")
        return BoundaryConditions([[complex(*v) for v in row] for row in self.boundary["a"]])

    def need(self, key: str):
        if key not in self.spectral:
            raise ConfigError(f"lambda.{key}", "required by this command")
        return self.spectral[key]


def load_config(path) -> ExperimentConfig:
    """Read a TOML config, or a manifest JSON written by an earlier run."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        raw = raw.get("config", raw)
    else:
        try:
            raw = tomllib.loads(text.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("--config", str(exc)) from None
    return ExperimentConfig.from_mapping(raw, str(path.parent))


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_atomic(path: Path, text: str):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _linear(log_value: float) -> float:
    """Linear companion of a log column; ``inf`` when not representable."""
    return math.exp(log_value) if log_value < 709.78 else math.inf


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fundamental(cfg: ExperimentConfig, threads: int):
    V = cfg.build_potential()
    rows, reports = [], []
    for idx, pair in enumerate(cfg.need("values")):
        lam = complex(*pair)
        grid = cfg.build_grid(lam)
        fm, rep = solve_fundamental(V, SpectralParameter.of(lam), DIRECT, grid, cfg.tolerances["picard"], direct_fallback=True)
        det = fm.dephased_det()
        for i, x in enumerate(grid.nodes):
            b = fm.b[:, :, i]
            rows.append(
                (idx, lam.real, lam.imag, x)
                + tuple(v for jk in ((0, 0), (0, 1), (1, 0), (1, 1)) for v in (b[jk].real, b[jk].imag))
                + (abs(det[i] - 1.0),)
            )
        reports.append(
            (idx, lam.real, lam.imag, fm.param.half_plane, grid.panel_count, rep.iterations,
             rep.final_update_sup, rep.remainder_sup, rep.remainder_w11, rep.method)
        )
    header = ["index", "re_lambda", "im_lambda", "x"]
    header += [f"{p}_b{jk}" for jk in ("11", "12", "21", "22") for p in ("re", "im")]
    header += ["det_defect"]
    return {
        "fundamental.csv": csv_text(header, rows),
        "picard_report.csv": csv_text(
            ["index", "re_lambda", "im_lambda", "half_plane", "panels", "iterations",
             "final_update_sup", "remainder_sup", "remainder_w11", "method"],
            reports,
        ),
    }


def cmd_verify_asymptotics(cfg: ExperimentConfig, threads: int):
    V = cfg.build_potential()
    sigma = cfg.need("sigma")
    taus = cfg.need("taus")
    scan = asymptotics_scan(V, sigma, taus, cfg.tolerances["picard"], threads)
    rows = []
    for name, rep in scan.sandwiches.items():
        for lam, r in zip(rep.lambdas, rep.ratios):
            rows.append((name, lam.real, lam.imag, r))
    sandwich = csv_text(["quantity", "re_lambda", "im_lambda", "ratio"], rows)
    g_rows = []
    for k, tau in enumerate(scan.taus):
        g_rows.append(
            (sigma, tau)
            + tuple(scan.log_abs_g[k, j, l] for j in range(2) for l in range(2))
            + tuple(scan.ghat[k, j, l] for j in range(2) for l in range(2))
        )
    cross = csv_text(
        ["sigma", "tau", "log_abs_g11", "log_abs_g12", "log_abs_g21", "log_abs_g22",
         "ghat11", "ghat12", "ghat21", "ghat22"],
        g_rows,
    )
    checks = csv_text(
        ["check", "passed", "values"],
        [(c.name, c.passed, " ".join(_fmt(v) for v in c.values)) for c in scan_checks(scan)],
    )
    samples = random_unit_coefficients(seed=cfg.seed)
    audit_rows = []
    for tau in taus:
        lam = SpectralParameter.of(complex(sigma, tau))
        fm, _ = solve_fundamental(V, lam, DIRECT, cfg.build_grid(lam.lam), cfg.tolerances["picard"], direct_fallback=True)
        rep = lower_bound_audit(fm, samples)
        audit_rows.append((sigma, tau, rep.lower_ratio, rep.upper_ratio, rep.active))
    audit = csv_text(["sigma", "tau", "worst_c", "best_c", "active"], audit_rows)
    return {"sandwich.csv": sandwich, "cross_products.csv": cross, "checks.csv": checks, "audit.csv": audit}


def cmd_lemma1(cfg: ExperimentConfig, threads: int):
    V = cfg.build_potential()
    normalize = cfg.coefficients["normalize"]
    table = lemma1_sweep(
        V, cfg.spectral.get("sigma", 0.0), cfg.need("taus"), cfg.coeffs(), normalize, cfg.tolerances["picard"], threads
    )
    header = ["tau", "log_norm_y", "log_norm_z", "log_inner", "ratio"]
    if normalize:
        header.append("log_product_normalized")
    rows = []
    for r in table.rows:
        row = (r.tau, r.log_norm_y, r.log_norm_z, r.log_inner, r.ratio)
        if normalize:
            row += (r.log_product_normalized,)
        rows.append(row)
    out = {"lemma1.csv": csv_text(header, rows)}
    if table.skipped:
        out["lemma1_skipped.csv"] = csv_text(["tau", "reason"], table.skipped)
    return out


def _spectrum(cfg: ExperimentConfig, threads: int, functions: bool):
    r = cfg.need("rectangle")
    V = cfg.build_potential()
    grid = cfg.build_grid(complex(max(abs(r[0]), abs(r[1])), max(abs(r[2]), abs(r[3]))))
    report = find_eigenvalues(
        cfg.bc(), V, r, cfg.tolerances["root"], grid, functions=functions,
        picard_tol=cfg.tolerances["picard"], threads=threads,
    )
    return V, report


def cmd_eigs(cfg: ExperimentConfig, threads: int):
    _, report = _spectrum(cfg, threads, functions=False)
    rows = [
        (n, rec.lambda_n.real, rec.lambda_n.imag, rec.multiplicity, rec.residual, ";".join(rec.flags))
        for n, rec in enumerate(report.records)
    ]
    body = {
        "region": list(report.region),
        "winding_total": report.winding_total,
        "max_im": report.max_im,
        "nudges": report.nudges,
        "records": [
            {"lambda": _pair(rec.lambda_n), "multiplicity": rec.multiplicity, "flags": list(rec.flags)}
            for rec in report.records
        ],
    }
    return {
        "spectrum.csv": csv_text(["n", "re_lambda", "im_lambda", "multiplicity", "residual", "flags"], rows),
        "spectrum.json": json.dumps(body, indent=2, sort_keys=True) + "\n",
    }


def _probe(kind: str, grid: Grid, seed: int):
    if kind == "none":
        return None
    if kind == "ones":
        one = np.ones(grid.size, complex)
        return GridFunction2(one, one.copy(), grid)
    # random trigonometric probe: fixed-seed coefficients, so the same seed gives the same function
    rng = np.random.default_rng(seed)
    k = np.arange(-8, 9)
    c = (rng.standard_normal((2, k.size)) + 1j * rng.standard_normal((2, k.size))) / (1.0 + np.abs(k))
    waves = np.exp(1j * np.outer(grid.nodes, k))
    return GridFunction2(waves @ c[0], waves @ c[1], grid)


def cmd_expansion_audit(cfg: ExperimentConfig, threads: int):
    exp = cfg.expansion
    if exp["source"] == "synthetic":
        V = cfg.build_potential()
        taus = cfg.spectral.get("taus") or list(log_taus(exp["count"]))
        system = synthetic_system(V, taus, cfg.spectral.get("sigma", 0.0), cfg.coeffs(), cfg.tolerances["picard"])
    else:
        V, report = _spectrum(cfg, threads, functions=True)
        system = [r for r in biorthogonal_system(report, cfg.bc(), V) if r.biorthogonal]
        if not system:
            raise DiracError("no simple eigenvalues in the region; nothing to audit")
    probe = _probe(exp["probe"], system[0].y_n.grid, cfg.seed)
    rep = divergence_witness(system, probe)
    rows = []
    for n, re, im, ln, lw in rep.rows():
        rows.append((n, re, im, ln, lw))
    return {
        "divergence.csv": csv_text(["n", "re_lambda", "im_lambda", "log_proj_norm", "witness"], rows),
        "divergence.json": rep.to_json() + "\n",
    }


HANDLERS = {
    "fundamental": cmd_fundamental,
    "verify-asymptotics": cmd_verify_asymptotics,
    "lemma1-sweep": cmd_lemma1,
    "eigs": cmd_eigs,
    "expansion-audit": cmd_expansion_audit,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dirac-spectral", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="TOML config or manifest.json of an earlier run")
    parser.add_argument("--out", help="output directory (overrides output_dir in the config)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for scans and subdivision")
    parser.add_argument("--seed", type=int, help="RNG seed (overrides seed in the config)")
    return parser


def run(command: str, cfg: ExperimentConfig, out_dir: Path, threads: int = 1) -> dict:
    """Execute one command and write its files plus ``manifest.json``; returns the file texts."""
    files = HANDLERS[command](cfg, threads)
    out_dir = Path(out_dir)
    for name, text in files.items():
        write_atomic(out_dir / name, text)
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.resolved(),
        "outputs": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())},
    }
    write_atomic(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return files


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    try:
        if args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed", "expected an unsigned 64-bit integer")
            cfg = ExperimentConfig(**{**cfg.__dict__, "seed": args.seed})
        if args.out:
            cfg = ExperimentConfig(**{**cfg.__dict__, "output_dir": args.out})
        out_dir = Path(cfg.output_dir)
        if not out_dir.is_absolute() and not args.out:
            out_dir = Path(cfg.base_dir) / out_dir
        run(args.command, cfg, out_dir, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DiracError, ValueError, OverflowError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
