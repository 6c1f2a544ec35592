"""Command-line front end: ``mixed-greens <command> --config run.json [--out dir]``.

Exit status is 0 on success, 2 when the configuration is unreadable or fails
schema validation (the message names the offending line) and 1 when the
computation itself fails.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from json.decoder import scanstring
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .bench import exact_free_particle_G, free_particle_spectral_integral
from .dynamics import ModelSpec, PhasePoint, Representation, symplectic_form
from .errors import ConfigError, DimensionError, MixedGreensError
from .greens import assemble, energy_scan, greens_to_json, position_greens, momentum_greens
from .pathfinder import BoundaryCondition, SearchParams
from .trajectory import action_mixed, action_mixed_quadrature, integrate
from .amplitude import maslov_index
from .transforms import (
    GridFunction,
    partial_ft_direct,
    sample_greens,
    sample_greens_1d,
    transform_grid,
    uniformize,
)

logger = logging.getLogger("mixed_greens")

COMMANDS = ("greens", "scan", "oracle-compare", "uniformize", "selftest")

_number_list = {"type": "array", "items": {"type": "number"}}
_axis = {"type": "array", "items": [{"type": "number"}, {"type": "number"}, {"type": "integer", "minimum": 16}],
         "minItems": 3, "maxItems": 3}
_range = {
    "oneOf": [
        {"type": "array", "items": {"type": "number"}, "minItems": 1},
        {
            "type": "object",
            "properties": {"start": {"type": "number"}, "stop": {"type": "number"},
                           "num": {"type": "integer", "minimum": 1}},
            "required": ["start", "stop", "num"],
            "additionalProperties": False,
        },
    ]
}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "mixed-greens run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["FreeParticle", "HarmonicOscillator", "AnharmonicQuartic", "PolynomialPotential"]},
                "n": {"enum": [1, 2]},
                "mass": {"oneOf": [{"type": "number"}, _number_list]},
                "frequencies": _number_list,
                "coefficients": _number_list,
            },
            "required": ["kind"],
        },
        "representation": {"type": "array", "items": {"type": "integer", "minimum": 0}, "uniqueItems": True},
        "initial": _number_list,
        "final": _number_list,
        "hbar": {"type": "number", "exclusiveMinimum": 0},
        "energy": {"type": "number"},
        "energies": _range,
        "search": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "multistart_grid": {"type": "integer", "minimum": 4},
                "newton_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_newton_iters": {"type": "integer", "minimum": 1},
                "t_max": {"type": "number", "exclusiveMinimum": 0},
                "dedup_tol": {"type": "number", "exclusiveMinimum": 0},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "t_min": {"type": "number", "exclusiveMinimum": 0},
                "max_batch": {"type": "integer", "minimum": 1},
            },
        },
        "derivatives": {"enum": ["fd", "linearized"]},
        "fd_step": {"type": "number", "exclusiveMinimum": 0},
        "eta": {"type": "number", "minimum": 0},
        "exponent": {"type": ["number", "null"]},
        "chunk": {"type": "integer", "minimum": 1},
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hbars": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "final_axes": {"type": "array", "items": _axis, "minItems": 1},
                "initial_axes": {"type": "array", "items": _axis, "minItems": 1},
                "t_max": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "min_maslov": {"type": "integer", "minimum": 0},
                "max_maslov": {"type": ["integer", "null"], "minimum": 0},
                "rtol": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "window_filter": {"type": "boolean"},
            },
            "required": ["hbars", "final_axes", "initial_axes"],
        },
        "uniform": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "momentum_axis": _axis,
                "q_initial": {"type": "number"},
                "q_final": _range,
                "t_max": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "threshold": {"type": "number", "exclusiveMinimum": 0},
                "width": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["momentum_axis", "q_initial", "q_final", "t_max"],
        },
    },
}

_REQUIRED = {
    "greens": ["model", "initial", "final", "hbar", "energy"],
    "scan": ["model", "initial", "final", "hbar", "energies"],
    "oracle-compare": ["model", "initial", "final", "energy", "oracle"],
    "uniformize": ["model", "hbar", "energy", "uniform"],
    "selftest": [],
}


def schema_for(command: str) -> dict:
    schema = copy.deepcopy(SCHEMA)
    schema["required"] = _REQUIRED[command]
    return schema


class ConfigLoadError(Exception):
    """Unreadable or invalid configuration; maps to exit status 2."""


# ---------------------------------------------------------------- config loading

_WS = re.compile(r"\s*")


def _offsets(text: str) -> dict[tuple, int]:
    """Character offset of every value in a JSON document, keyed by its path.

    Object members are located at their key so that errors about a member
    point at the line that names it.
    """
    dec = json.JSONDecoder()
    out: dict[tuple, int] = {}

    def value(i, path):
        i = _WS.match(text, i).end()
        out.setdefault(path, i)
        c = text[i]
        if c in "{[":
            close = "}" if c == "{" else "]"
            i = _WS.match(text, i + 1).end()
            idx = 0
            while text[i] != close:
                if c == "{":
                    key_at = i
                    key, i = scanstring(text, i + 1)
                    out[path + (key,)] = key_at
                    i = _WS.match(text, i).end() + 1
                    i = value(i, path + (key,))
                else:
                    i = value(i, path + (idx,))
                    idx += 1
                i = _WS.match(text, i).end()
                if text[i] == ",":
                    i = _WS.match(text, i + 1).end()
            return i + 1
        _, end = dec.raw_decode(text, i)
        return end

    value(0, ())
    return out


def _line_of(text: str, offset: int) -> int:
    return text.count("\n", 0, offset) + 1


def load_config(path: str | Path, command: str) -> dict:
    """Read and validate a configuration file, raising ConfigLoadError with ``file:line: message``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigLoadError(f"{path}: cannot read config: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigLoadError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    validator = jsonschema.Draft7Validator(schema_for(command))
    errors = list(validator.iter_errors(data))
    if errors:
        offsets = _offsets(text)
        lines = []
        for err in errors:
            where = tuple(err.absolute_path)
            if err.validator == "additionalProperties" and isinstance(err.instance, dict):
                extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
                if extra:
                    where = where + (extra[0],)
            line = _line_of(text, offsets.get(where, 0))
            loc = "/".join(map(str, where)) or "<root>"
            lines.append((line, f"{path}:{line}: {loc}: {err.message}"))
        raise ConfigLoadError("\n".join(msg for _, msg in sorted(lines)))
    return data


# ---------------------------------------------------------------- config to objects


def build_model(cfg: dict) -> ModelSpec:
    m = cfg["model"]
    n = m.get("n", 1)
    mass = m.get("mass", 1.0)
    mass = tuple(np.broadcast_to(np.asarray(mass, float), (n,)))
    return ModelSpec(m["kind"], n, mass, tuple(m.get("frequencies", ())), tuple(m.get("coefficients", ())))


def build_rep(cfg: dict, n: int) -> Representation:
    return Representation(n, tuple(cfg.get("representation", ())))


def build_search(cfg: dict) -> SearchParams:
    return SearchParams(**cfg.get("search", {}))


def expand_range(spec) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], spec["num"])
    return np.asarray(spec, float)


def _assemble_kwargs(cfg: dict) -> dict:
    kw = {"derivatives": cfg.get("derivatives", "fd"), "eta": cfg.get("eta", 0.0), "exponent": cfg.get("exponent")}
    if "fd_step" in cfg:
        kw["fd_step"] = cfg["fd_step"]
    return kw


def _boundary(cfg: dict, model: ModelSpec, energy: float) -> BoundaryCondition:
    return BoundaryCondition(build_rep(cfg, model.n), tuple(cfg["initial"]), tuple(cfg["final"]), energy)


def thread_count() -> int:
    raw = os.environ.get("MIXED_GREENS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"MIXED_GREENS_THREADS must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------- output


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _metadata(command: str, cfg: dict, truncation: dict) -> dict:
    # no timestamps or host data: identical configs give identical files
    return {
        "command": command,
        "tool_version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "config": cfg,
        "truncation": truncation,
    }


def _truncation(cfg: dict) -> dict:
    sp = build_search(cfg)
    return {
        "t_max": sp.t_max,
        "step": sp.step,
        "multistart_grid": sp.multistart_grid,
        "newton_tol": sp.newton_tol,
        "dedup_tol": sp.dedup_tol,
        "eta": cfg.get("eta", 0.0),
        "derivatives": cfg.get("derivatives", "fd"),
    }


# ---------------------------------------------------------------- commands


def cmd_greens(cfg: dict, out: Path) -> dict:
    model = build_model(cfg)
    g = assemble(model, _boundary(cfg, model, cfg["energy"]), cfg["hbar"], build_search(cfg), **_assemble_kwargs(cfg))
    payload = greens_to_json(g)
    payload["abs"] = abs(g.value)
    _write(out / "greens.json", _dump(payload))
    print(json.dumps({"value": {"re": g.value.real, "im": g.value.imag}, "abs": abs(g.value), "n_traj": g.n_traj,
                      "diagnostics": list(g.diagnostics)}, sort_keys=True))
    return _truncation(cfg)


def _scan_block(args):
    model, bc, energies, hbar, params, chunk, kw = args
    return [(E, g.value, g.n_traj) for E, g in energy_scan(model, bc, energies, hbar, params, chunk=chunk, **kw)]


def cmd_scan(cfg: dict, out: Path) -> dict:
    model = build_model(cfg)
    energies = expand_range(cfg["energies"])
    bc = _boundary(cfg, model, float(energies[0]))
    params = build_search(cfg)
    kw = _assemble_kwargs(cfg)
    chunk = cfg.get("chunk", 16)
    # blocks are fixed by ``chunk`` alone so the worker count cannot change the numbers
    blocks = [energies[i : i + chunk] for i in range(0, energies.size, chunk)]
    jobs = [(model, bc, b, cfg["hbar"], params, chunk, kw) for b in blocks]
    workers = min(thread_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scan_block, jobs))
    else:
        results = [_scan_block(j) for j in jobs]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["E", "Re", "Im", "|G|", "n_traj"])
    for block in results:
        for E, v, n in block:
            w.writerow([_fmt(E), _fmt(v.real), _fmt(v.imag), _fmt(abs(v)), n])
    _write(out / "scan.csv", buf.getvalue())
    return _truncation(cfg) | {"energies": int(energies.size), "chunk": chunk}


def oracle_point(model, rep, bc, hbar, params, ocfg, kw) -> tuple[complex, complex]:
    """Semiclassical value in ``rep`` and the quadrature transform of sampled position-space values."""
    k = rep.k
    fax = [tuple(a) for a in ocfg["final_axes"]]
    iax = [tuple(a) for a in ocfg["initial_axes"]]
    if len(fax) != k or len(iax) != k:
        raise DimensionError(f"oracle needs {k} final and {k} initial axes")
    pos = Representation(model.n)
    sample_kw = {"eta": kw["eta"]}
    if model.n == 1:
        fs = sample_greens_1d(model, pos, np.linspace(*iax[0]), np.linspace(*fax[0]), bc.energy, hbar,
                              ocfg.get("t_max", params.t_max), dt=ocfg.get("dt", 0.01),
                              max_maslov=ocfg.get("max_maslov"), min_maslov=ocfg.get("min_maslov", 0), **sample_kw)
        G = GridFunction(pos, tuple(fax + iax), fs.values)
    else:
        beta = list(rep.beta)
        fixed_f = np.asarray(bc.final_values)[beta]
        fixed_i = np.asarray(bc.initial_values)[beta]
        G = sample_greens(model, pos, fax + iax, fixed_f, fixed_i, bc.energy, hbar, params, coords=rep.alpha,
                          derivatives=kw["derivatives"], **sample_kw)
    alpha = list(rep.alpha)
    pf = np.asarray(bc.final_values)[alpha]
    pi = np.asarray(bc.initial_values)[alpha]
    quad = partial_ft_direct(G, hbar, pf, pi, rtol=ocfg.get("rtol"))
    g = assemble(model, bc, hbar, params, **kw)
    terms = g.contributions
    if ocfg.get("window_filter", True):
        # stationary points outside the sampled window cannot appear in the quadrature
        def inside(c):
            qi = np.asarray(c.initial)[alpha]
            qf = np.asarray(c.final)[alpha]
            return all(lo < x < hi for x, (lo, hi, _) in zip(qf, fax)) and all(
                lo < x < hi for x, (lo, hi, _) in zip(qi, iax))
        terms = [c for c in terms if inside(c)]
    spa = complex(sum(c.term for c in terms))
    return spa, complex(quad)


def cmd_oracle(cfg: dict, out: Path) -> dict:
    model = build_model(cfg)
    bc = _boundary(cfg, model, cfg["energy"])
    if bc.rep.k == 0:
        raise ConfigError("oracle-compare needs at least one momentum coordinate in the representation")
    params = build_search(cfg)
    kw = _assemble_kwargs(cfg)
    ocfg = cfg["oracle"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["hbar", "spa_re", "spa_im", "quad_re", "quad_im", "rel_err"])
    for hbar in ocfg["hbars"]:
        spa, quad = oracle_point(model, bc.rep, bc, hbar, params, ocfg, kw)
        rel = abs(spa - quad) / abs(quad) if quad != 0 else float("inf")
        w.writerow([_fmt(hbar), _fmt(spa.real), _fmt(spa.imag), _fmt(quad.real), _fmt(quad.imag), _fmt(rel)])
    _write(out / "oracle.csv", buf.getvalue())
    return _truncation(cfg) | {"oracle_t_max": ocfg.get("t_max", params.t_max), "oracle_dt": ocfg.get("dt", 0.01)}


def uniform_field(model, energy, hbar, ucfg, eta=0.0):
    """Primitive, transformed and blended position-space G along ``q_final`` for one ``q_initial``."""
    if model.n != 1:
        raise DimensionError("uniformize handles one degree of freedom")
    pax = tuple(ucfg["momentum_axis"])
    pg = np.linspace(*pax)
    qi = float(ucfg["q_initial"])
    qf = expand_range(ucfg["q_final"])
    dt = ucfg.get("dt", 0.02)
    mom = Representation(1, (0,))
    pos = Representation(1)
    fs = sample_greens_1d(model, mom, pg, pg, energy, hbar, ucfg["t_max"], eta=eta, dt=dt)
    F = GridFunction(mom, (pax, pax), fs.values)
    Gt = transform_grid(F, hbar, [qf], [[qi]], inverse=True)[:, 0]
    prim = sample_greens_1d(model, pos, [qi], qf, energy, hbar, ucfg["t_max"], eta=eta, dt=dt)
    metric = prim.caustic_metric[:, 0]
    # no real trajectory at all: beyond the caustic, where only the transform applies
    metric = np.where(metric > 0, metric, np.inf)
    blended = uniformize(prim.values[:, 0], Gt, metric, ucfg.get("threshold", 1e3), ucfg.get("width", 1.0))
    return qf, prim.values[:, 0], Gt, blended, metric


def cmd_uniformize(cfg: dict, out: Path) -> dict:
    model = build_model(cfg)
    ucfg = cfg["uniform"]
    qf, prim, Gt, U, metric = uniform_field(model, cfg["energy"], cfg["hbar"], ucfg, cfg.get("eta", 0.0))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["q_final", "Re", "Im", "|G|", "primitive_re", "primitive_im", "transformed_re", "transformed_im",
                "caustic_metric"])
    for row in zip(qf, U, prim, Gt, metric):
        q, u, p, t, m = row
        w.writerow([_fmt(q), _fmt(u.real), _fmt(u.imag), _fmt(abs(u)), _fmt(p.real), _fmt(p.imag), _fmt(t.real),
                    _fmt(t.imag), _fmt(m)])
    _write(out / "uniform.csv", buf.getvalue())
    return {"t_max": ucfg["t_max"], "dt": ucfg.get("dt", 0.02), "eta": cfg.get("eta", 0.0),
            "threshold": ucfg.get("threshold", 1e3), "width": ucfg.get("width", 1.0)}


def selftest_checks() -> list[dict]:
    """Fast invariant suite: oracle agreement, symplecticity, energy drift, Legendre form, duality, Maslov count."""
    results = []

    def record(name, value, limit):
        results.append({"name": name, "value": float(value), "limit": limit, "passed": bool(value <= limit)})

    free = ModelSpec.free()
    params = SearchParams(t_max=10.0)
    g = position_greens(free, (1.0,), (0.0,), 0.5, 1.0, params)
    ref = free_particle_spectral_integral(0.0, 1.0, 0.5)
    record("free_particle_vs_spectral", abs(g.value - ref) / abs(ref), 1e-9)
    record("free_particle_closed_form", abs(g.value - exact_free_particle_G(0.0, 1.0, 0.5)) / abs(ref), 1e-9)

    ho = ModelSpec.oscillator()
    J = symplectic_form(1)
    worst_sym, worst_drift, worst_leg = 0.0, 0.0, 0.0
    for q0, p0, T in [(0.3, 1.2, 2.0), (-1.0, 0.5, 7.5), (0.0, 2.0, 3.5)]:
        tr = integrate(ho, PhasePoint((q0,), (p0,)), T)
        M = tr.monodromy
        worst_sym = max(worst_sym, np.max(np.abs(M.T @ J @ M - J)))
        e = tr.energies()
        worst_drift = max(worst_drift, np.max(np.abs(e - e[0])) / abs(e[0]))
        for rep in Representation.all(1):
            a, b = action_mixed(tr, rep), action_mixed_quadrature(tr, rep)
            worst_leg = max(worst_leg, abs(a - b) / max(1.0, abs(a)))
    record("monodromy_symplectic", worst_sym, 1e-8)
    record("energy_drift", worst_drift, 1e-9)
    record("legendre_consistency", worst_leg, 1e-8)

    a = position_greens(ho, (0.4,), (0.3,), 1.3, 1.0, SearchParams(t_max=6.0)).value
    b = momentum_greens(ho, (0.4,), (0.3,), 1.3, 1.0, SearchParams(t_max=6.0)).value
    record("oscillator_self_duality", abs(a - b) / abs(a), 1e-8)

    bad = 0
    for k in range(5):
        tr = integrate(ho, PhasePoint((0.5,), (0.7,)), k * np.pi + 0.3)
        bad += maslov_index(tr, Representation(1)).index != k
    record("maslov_conjugate_points", bad, 0)
    return results


def cmd_selftest(cfg: dict, out: Path) -> dict:
    results = selftest_checks()
    _write(out / "selftest.json", _dump(results))
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['name']} value={r['value']:.3e} limit={r['limit']:g}")
    failed = [r["name"] for r in results if not r["passed"]]
    if failed:
        raise SelftestFailure(", ".join(failed))
    return {}


class SelftestFailure(MixedGreensError):
    pass


_HANDLERS = {
    "greens": cmd_greens,
    "scan": cmd_scan,
    "oracle-compare": cmd_oracle,
    "uniformize": cmd_uniformize,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixed-greens",
                                     description="Semiclassical energy Green functions in mixed position/momentum spaces.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "greens": "assemble one Green function value (JSON to stdout)",
        "scan": "assemble on an energy grid (scan.csv)",
        "oracle-compare": "semiclassical value versus quadrature transform over hbar (oracle.csv)",
        "uniformize": "blend primitive and transformed values near a caustic (uniform.csv)",
        "selftest": "run the invariant checks",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=name != "selftest", help="JSON run configuration")
        p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p = sub.add_parser("schema", help="print the configuration JSON schema")
    p.add_argument("--command-name", choices=COMMANDS, default="greens")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "schema":
        print(json.dumps(schema_for(args.command_name), indent=2))
        return 0
    try:
        cfg = load_config(args.config, args.command) if args.config else {}
    except ConfigLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    try:
        truncation = _HANDLERS[args.command](cfg, out)
    except (ConfigError, DimensionError) as exc:
        # semantic problems the schema cannot express (e.g. wrong vector lengths)
        print(f"error: {args.config}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except MixedGreensError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _write(out / "metadata.json", _dump(_metadata(args.command, cfg, {}) | {"error": f"{type(exc).__name__}: {exc}"}))
        return 1
    _write(out / "metadata.json", _dump(_metadata(args.command, cfg, truncation)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
