"""Command-line front end: JSON config in, report.json and CSV tables out.

Exit codes: 0 every check passed, 1 some check failed, 2 config or IO error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import jsonschema
import numpy as np

from . import physics_checks as pc
from .algebra import FunctionSequence, TensorTerm, unit
from .kernels import InteractionKernel, free_kernel, generic_kernel, phi4_like
from .phase_space import QuadOptions
from .spin_models import PRESETS, compose, preset, verify_spin_model
from .vev_engine import VevOptions

COMMANDS = ("verify-model", "gram", "two-point", "scatter", "cluster", "appendix-a", "oracle-check", "suite")

_num = {"type": "number"}
_complex = {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}]}
_vec = {"type": "array", "items": _num}
_atoms = {"type": "array", "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "d": {"type": "integer", "minimum": 3},
        "model": {"$ref": "#/$defs/model"},
        "species": {"type": "array", "items": {
            "type": "object", "additionalProperties": False, "required": ["mass"],
            "properties": {"mass": {"type": "number", "exclusiveMinimum": 0}}}},
        "kernel": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "preset": {"enum": ["phi4_like", "generic", "free"]},
                "c4": _num,
                "sigma_atoms": _atoms,
                "varsigma": {"type": "object", "patternProperties": {"^[0-9]+$": _complex},
                             "additionalProperties": False},
                "varsigma_default": _complex,
                "U": {"type": "object", "patternProperties": {"^[0-9]+$": {"type": "array", "items": _complex}},
                      "additionalProperties": False},
                "upsilon": {"type": "array", "items": _complex},
                "beta_atoms": _atoms,
                "mu1_atoms": _atoms,
                "a": {"type": "number", "minimum": 0},
                "beta_convention": {"enum": ["result9", "sum2"]},
            },
        },
        "states": {"type": "array", "items": {"$ref": "#/$defs/state"}},
        "quadrature": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["gaussian", "sinc", "exact"]},
                "method": {"enum": ["auto", "tensor", "mc"]},
                "nodes_per_axis": {"type": "integer", "minimum": 2},
                "max_nodes": {"type": "integer", "minimum": 1},
                "mc_samples": {"type": "integer", "minimum": 1},
                "eta_schedule": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "seed": {"type": "integer", "minimum": 0},
                "widen": {"type": "number", "exclusiveMinimum": 0},
                "sphere_order": {"type": "integer", "minimum": 2},
            },
        },
        "gram": {"type": "object", "additionalProperties": False,
                 "properties": {"states": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                                "width": {"type": "number", "exclusiveMinimum": 0}}},
        "scattering": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kinematics": {"type": "array", "minItems": 1, "items": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"p": {"type": "number", "exclusiveMinimum": 0}, "theta": _num,
                                   "out_q": {"type": "array", "items": _vec}, "in_q": {"type": "array", "items": _vec}}}},
                "L_schedule": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2},
                "eta_coupling": {"type": ["number", "null"], "minimum": 0},
                "shape_L": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "cluster": {
            "type": "object", "additionalProperties": False,
            "properties": {"f": {"type": "integer", "minimum": 0}, "g": {"type": "integer", "minimum": 0},
                           "direction": _vec, "widths": {"type": "number", "exclusiveMinimum": 0},
                           "points": {"type": "integer", "minimum": 3}},
        },
        "oracle_check": {
            "type": "object", "additionalProperties": False,
            "properties": {"cases": {"type": "array", "items": {"type": "array", "items": {"type": "integer"},
                                                                 "minItems": 2, "maxItems": 2}},
                           "configs": {"type": "integer", "minimum": 1}},
        },
        "verify": {"type": "object", "additionalProperties": False,
                   "properties": {"samples": {"type": "integer", "minimum": 1},
                                  "max_rapidity": {"type": "number", "minimum": 0}}},
        "seed": {"type": "integer", "minimum": 0},
    },
    "$defs": {
        "model": {"oneOf": [
            {"enum": list(PRESETS)},
            {"type": "object", "additionalProperties": False, "required": ["preset"],
             "properties": {"preset": {"enum": list(PRESETS)}}},
            {"type": "object", "additionalProperties": False, "required": ["compose", "parts"],
             "properties": {"compose": {"enum": ["direct_sum", "kronecker"]},
                            "parts": {"type": "array", "items": {"$ref": "#/$defs/model"},
                                      "minItems": 2, "maxItems": 2}}},
            {"type": "object", "additionalProperties": False, "required": ["compose", "parts", "O"],
             "properties": {"compose": {"const": "orthogonal_conjugation"},
                            "parts": {"type": "array", "items": {"$ref": "#/$defs/model"},
                                      "minItems": 1, "maxItems": 1},
                            "O": {"type": "array", "items": _vec}}},
        ]},
        "packet": {
            "type": "object", "additionalProperties": False, "required": ["q", "L"],
            "properties": {"q": _vec, "L": {"type": "number", "exclusiveMinimum": 0},
                           "pol": {"type": "array", "items": _complex}, "component": {"type": "integer", "minimum": 0},
                           "kind": {"enum": ["lsz", "plain"]}, "t": _num},
        },
        "state": {"oneOf": [
            {"const": "vacuum"},
            {"type": "array", "items": {"$ref": "#/$defs/packet"}},
            {"type": "object", "additionalProperties": False, "required": ["terms"],
             "properties": {"terms": {"type": "array", "items": {
                 "type": "object", "additionalProperties": False, "required": ["packets"],
                 "properties": {"coefficient": _complex,
                                "packets": {"type": "array", "items": {"$ref": "#/$defs/packet"}}}}}}},
        ]},
    },
}


class ConfigError(Exception):
    pass


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def validate_config(cfg: dict) -> None:
    """Raise ConfigError naming the deepest offending key path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (-len(e.absolute_path), str(e.absolute_path)))
    if errors:
        err = errors[0]
        # oneOf failures hide the real cause one level down
        while err.context:
            err = max(err.context, key=lambda e: len(e.absolute_path))
        raise ConfigError(f"{_path(err.absolute_path)}: {err.message}")


def load_config(path: str | None) -> dict:
    if path is None:
        cfg = {}
    else:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("<root>: config must be a JSON object")
    validate_config(cfg)
    return cfg


# --- building objects from the config ---------------------------------------------------

def _cplx(x) -> complex:
    return complex(x[0], x[1]) if isinstance(x, list) else complex(x)


def build_model(cfg: dict):
    d = cfg.get("d", 3)
    masses = [s["mass"] for s in cfg.get("species", [])]
    leaves = iter(range(10**6))

    def build(node):
        if isinstance(node, str):
            node = {"preset": node}
        if "preset" in node:
            i = next(leaves)
            name = node["preset"]
            dd = 4 if name in ("vector_d4", "dirac_d4") else d
            if dd != d and "d" in cfg:
                raise ConfigError(f"model: preset {name} needs d = 4")
            return preset(name, d=dd, mass=masses[i] if i < len(masses) else 1.0)
        parts = [build(p) for p in node["parts"]]
        if node["compose"] == "orthogonal_conjugation":
            return compose(parts[0], mode="orthogonal_conjugation", O=np.asarray(node["O"], dtype=float))
        return compose(parts[0], parts[1], mode=node["compose"])

    try:
        return build(cfg.get("model", "scalar"))
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"model: {e}") from None


def build_kernel(cfg: dict) -> InteractionKernel:
    kc = dict(cfg.get("kernel", {}))
    name = kc.pop("preset", "phi4_like")
    c4 = kc.pop("c4", 1.0)
    if "varsigma" in kc:
        kc["varsigma"] = {int(n): _cplx(v) for n, v in kc["varsigma"].items()}
    if "varsigma_default" in kc:
        kc["varsigma_default"] = _cplx(kc["varsigma_default"])
    if "U" in kc:
        kc["U"] = {int(n): tuple(_cplx(c) for c in v) for n, v in kc["U"].items()}
    if "upsilon" in kc:
        kc["upsilon"] = tuple(_cplx(c) for c in kc["upsilon"])
    try:
        if name == "free":
            base = free_kernel()
        elif name == "generic":
            base = generic_kernel(c4)
        else:
            base = phi4_like(c4)
        if not kc:
            return base
        fields = {f: getattr(base, f) for f in base.__dataclass_fields__}
        fields.update(kc)
        return InteractionKernel(**fields)
    except ValueError as e:
        raise ConfigError(f"kernel: {e}") from None


def build_quad(cfg: dict, seed: int) -> tuple:
    q = dict(cfg.get("quadrature", {}))
    mode = q.pop("mode", "gaussian")
    etas = q.pop("eta_schedule", None)
    q.setdefault("seed", seed)
    quad = QuadOptions(**q)
    return VevOptions(mode=mode, eta_schedule=tuple(etas) if etas else None, quad=quad), quad


def build_states(cfg: dict, model, seed: int) -> list:
    if "states" not in cfg:
        return pc.default_states(model, cfg.get("gram", {}).get("width", 2.0), seed)
    out = []
    sd = model.d - 1
    for si, st in enumerate(cfg["states"]):
        if st == "vacuum":
            out.append(unit())
            continue
        terms = st["terms"] if isinstance(st, dict) else [{"packets": st}]
        seq = FunctionSequence([])
        for ti, term in enumerate(terms):
            pks = []
            for pi, p in enumerate(term["packets"]):
                where = f"states[{si}]" + (f".terms[{ti}]" if isinstance(st, dict) else "") + f"[{pi}]"
                if len(p["q"]) != sd:
                    raise ConfigError(f"{where}.q: needs {sd} spatial components")
                comp = p.get("component", 0)
                if comp >= model.n_components:
                    raise ConfigError(f"{where}.component: model has {model.n_components} components")
                u = None
                if "pol" in p:
                    if len(p["pol"]) != model.n_components:
                        raise ConfigError(f"{where}.pol: needs {model.n_components} entries")
                    u = np.array([_cplx(x) for x in p["pol"]])
                pk = pc.make_packet(model, p["q"], p["L"], u, comp, p.get("t", 0.0), p.get("kind", "lsz"),
                                    rng=np.random.default_rng(seed + 1000 * si + pi))
                pks.append(pk)
            seq = seq + FunctionSequence([TensorTerm(_cplx(term.get("coefficient", 1.0)), tuple(pks))])
        out.append(seq)
    return out


# --- serialisation ------------------------------------------------------------------------

def _plain(x):
    """numpy, complex and dataclass-free containers to JSON-ready python objects."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [_plain(float(x.real)), _plain(float(x.imag))]
    if isinstance(x, (float, np.floating)):
        return float(x)
    if hasattr(x, "to_dict"):
        return _plain(x.to_dict())
    return x


def dumps(obj, indent: int = 1) -> str:
    """JSON with every float written to 17 significant digits; non-finite floats become null."""
    def enc(x, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(x, float):
            return format(x, ".17g") if math.isfinite(x) else "null"
        if isinstance(x, dict):
            if not x:
                return "{}"
            items = [f"{pad}{json.dumps(k)}: {enc(v, level + 1)}" for k, v in x.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(x, list):
            if not x:
                return "[]"
            if all(not isinstance(v, (dict, list)) for v in x):
                return "[" + ", ".join(enc(v, level + 1) for v in x) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in x) + "\n" + end + "]"
        return json.dumps(x)
    return enc(_plain(obj), 0) + "\n"


def write_csv(path: str, rows: list) -> None:
    rows = [_plain(r) for r in rows]
    cols = []
    flat = []
    for r in rows:
        fr = {}
        for k, v in r.items():
            if isinstance(v, list) and len(v) == 2 and all(isinstance(t, float) for t in v) and k not in ("out_q", "in_q"):
                fr[f"{k}_re"], fr[f"{k}_im"] = v
            elif isinstance(v, (list, dict)):
                fr[k] = json.dumps(v)
            else:
                fr[k] = v
        for k in fr:
            if k not in cols:
                cols.append(k)
        flat.append(fr)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for fr in flat:
            w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in fr.items()})


# --- commands ------------------------------------------------------------------------------

class Run:
    def __init__(self, cfg: dict, seed: int, threads: int):
        self.cfg = cfg
        self.seed = seed
        self.threads = threads
        self.model = build_model(cfg)
        self.kernel = build_kernel(cfg)
        self.options, self.quad = build_quad(cfg, seed)
        self.checks: list = []
        self.tables: dict = {}
        self.reports: list = []

    def add(self, result, table=None, name=None):
        self.checks.append(result)
        if table is not None:
            self.tables[name or result.name] = table

    def states(self):
        return build_states(self.cfg, self.model, self.seed)

    # individual commands
    def verify_model(self):
        v = self.cfg.get("verify", {})
        rep = verify_spin_model(self.model, samples=v.get("samples", 100), seed=self.seed,
                                max_rapidity=v.get("max_rapidity", 1.5))
        for key, r in rep.items():
            self.add(pc.CheckResult(f"identity_{key}", r["pass"], r["residual"], 1e-8, {}))
        self.tables["identities"] = [{"identity": k, **r} for k, r in rep.items()]

    def gram(self):
        states = self.states()
        sel = self.cfg.get("gram", {}).get("states")
        if sel is not None:
            if max(sel) >= len(states):
                raise ConfigError(f"gram.states: index {max(sel)} out of range")
            states = [states[i] for i in sel]
        from .vev_engine import gram
        G = gram(states, self.kernel, self.model, self.options)
        ratios = list(map(float, G.per_eta_min_ratio)) + [float(G.min_ratio)]
        res = pc.CheckResult(f"gram_psd_{self.model.name}", max(0.0, -min(ratios)) <= 1e-6, max(0.0, -min(ratios)),
                             1e-6, {"eigenvalues": G.eigenvalues, "per_eta_min_ratio": ratios[:-1],
                                    "etas": list(self.options.etas(self.model))})
        rows = [{"i": i, "j": j, "value": G.matrix[i, j], "error": G.errors[i, j]}
                for i in range(len(states)) for j in range(len(states))]
        self.add(res, rows, "gram_matrix")
        self.tables["gram_eigenvalues"] = [{"eta": "extrapolated", "eigenvalue": float(e)} for e in G.eigenvalues] + [
            {"eta": eta, "eigenvalue": float(e)} for eta, M in zip(self.options.etas(self.model), G.per_eta)
            for e in np.linalg.eigvalsh(0.5 * (M + M.conj().T))]

    def two_point(self):
        res = pc.check_spectral_support(self.model, self.kernel, seed=self.seed, quad=self.quad)
        rows = []
        pks = [pk for s in self.states() for t in s.terms for pk in t.factors]
        for i, a in enumerate(pks):
            for j, b in enumerate(pks):
                v = pc.two_point(a.dual(self.model.D), b, self.model, self.quad)
                rows.append({"i": i, "j": j, "W2": v})
        self.add(res, rows, "two_point")

    def scatter(self):
        sc = self.cfg.get("scattering", {})
        kins = []
        for kin in sc.get("kinematics", [{"p": 0.8, "theta": 1.0}, {"p": 0.5, "theta": 2.0}, {"p": 1.2, "theta": 1.4}]):
            if "out_q" in kin:
                kins.append((kin["out_q"], kin["in_q"]))
            else:
                kins.append(pc.cm_kinematics(kin["p"], kin["theta"], self.model.masses[0], self.model.d))
        quad = QuadOptions(**{**self.quad.__dict__, "max_nodes": max(self.quad.max_nodes, 1_500_000),
                              "nodes_per_axis": max(self.quad.nodes_per_axis, 30)})
        rows = []
        for i, (oq, iq) in enumerate(kins):
            try:
                setup = pc.ScatteringSetup(oq, iq, L_schedule=tuple(sc.get("L_schedule", (2.0, 4.0, 8.0, 16.0))),
                                           eta_coupling=sc.get("eta_coupling"), quad=quad)
                res, tab = pc.scattering_amplitude(setup, self.model, self.kernel)
            except ValueError as e:
                raise ConfigError(f"scattering.kinematics[{i}]: {e}") from None
            res.name = f"{res.name}_{i}"
            self.add(res)
            rows += [{"kinematics": i, **r} for r in tab]
        self.tables["scattering_ratio"] = rows
        res, tab = pc.scattering_shape(kins, self.model, self.kernel, L=sc.get("shape_L", 16.0), quad=quad)
        self.add(res, tab)

    def cluster(self):
        cc = self.cfg.get("cluster", {})
        states = self.states()
        fi, gi = cc.get("f", 3), cc.get("g", 4)
        if max(fi, gi) >= len(states):
            raise ConfigError(f"cluster: state index {max(fi, gi)} out of range")
        a = cc.get("direction", [0.0, 1.0] + [0.0] * (self.model.d - 2))
        if len(a) != self.model.d:
            raise ConfigError(f"cluster.direction: needs {self.model.d} components")
        widths = [pk.width for s in (states[fi], states[gi]) for t in s.terms for pk in t.factors]
        if not widths:
            raise ConfigError("cluster: states need at least one packet")
        rs = np.linspace(0.0, cc.get("widths", 20.0) * max(widths), cc.get("points", 11))
        try:
            res, rows = pc.cluster_decay(states[fi], states[gi], a, self.model, self.kernel, rs=rs)
        except ValueError as e:
            raise ConfigError(f"cluster.direction: {e}") from None
        self.add(res, rows)

    def appendix_a(self):
        res, rows = pc.check_appendix_a(seed=self.seed)
        self.add(res, rows, "singular_configurations")
        self.tables["summability"] = res.details["verdicts"]

    def oracle_check(self):
        oc = self.cfg.get("oracle_check", {})
        cases = tuple(tuple(c) for c in oc.get("cases", ((4, 2), (4, 1), (4, 3), (6, 3))))
        res, rows = pc.check_dual_path(self.model, self.kernel, cases, oc.get("configs", 20), self.seed)
        self.add(res, rows, "oracle_check")

    def suite(self):
        jobs = [lambda: pc.default_suite(self.model, self.kernel, self.seed),
                lambda: [pc.check_dual_path(self.model, self.kernel, configs=5, seed=self.seed)[0]],
                lambda: [pc.check_appendix_a(seed=self.seed)[0]],
                lambda: [pc.check_free_reduction(self.model, grams=3, seed=self.seed)[0]]]
        with ThreadPoolExecutor(max_workers=max(1, self.threads)) as ex:
            for out in [f.result() for f in [ex.submit(j) for j in jobs]]:
                for r in out:
                    self.add(r)


def _versions() -> dict:
    from importlib.metadata import PackageNotFoundError, version
    out = {"python": platform.python_version()}
    for name in ("numpy", "scipy", "sympy", "jsonschema", "artifact"):
        try:
            out[name] = version(name)
        except PackageNotFoundError:
            out[name] = "unknown"
    return out


def run(command: str, config: str | None, out: str, seed: int | None = None, threads: int | None = None,
        tolerance_scale: float = 1.0, stream=None) -> int:
    stream = stream or sys.stdout
    t0 = time.time()
    try:
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        cfg = load_config(config)
        seed = seed if seed is not None else cfg.get("seed", 0)
        threads = threads or os.cpu_count() or 1
        runner = Run(cfg, seed, threads)
        getattr(runner, command.replace("-", "_"))()
        os.makedirs(out, exist_ok=True)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2
    for r in runner.checks:
        r.tolerance *= tolerance_scale
        r.passed = bool(r.residual <= r.tolerance) if tolerance_scale != 1.0 else r.passed
    report = {
        "command": command, "config": cfg, "seed": seed, "threads": threads, "tolerance_scale": tolerance_scale,
        "model": {"name": runner.model.name, "d": runner.model.d, "masses": list(runner.model.masses)},
        "quadrature": {"vev_mode": runner.options.mode, "eta_schedule": list(runner.options.etas(runner.model)),
                       "options": dict(runner.quad.__dict__)},
        "versions": _versions(), "wall_time": time.time() - t0,
        "checks": [r.to_dict() for r in runner.checks],
        "tables": sorted(runner.tables),
        "all_pass": all(r.passed for r in runner.checks),
    }
    try:
        with open(os.path.join(out, "report.json"), "w") as fh:
            fh.write(dumps(report))
        for name, rows in runner.tables.items():
            write_csv(os.path.join(out, f"{name}.csv"), rows)
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2
    for r in runner.checks:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  residual={r.residual:.3g}  tol={r.tolerance:.3g}", file=stream)
    return 0 if report["all_pass"] else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="wightman-models", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration (defaults: scalar preset, d = 3)")
    ap.add_argument("--out", default="out", help="output directory for report.json and CSV tables")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--threads", type=int, help="worker threads for the suite (default: all cores)")
    ap.add_argument("--tolerance-scale", type=float, default=1.0, help="multiply every check tolerance")
    args = ap.parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("config error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.tolerance_scale <= 0:
        print("config error: --tolerance-scale must be positive", file=sys.stderr)
        return 2
    return run(args.command, args.config, args.out, args.seed, args.threads, args.tolerance_scale)


if __name__ == "__main__":
    sys.exit(main())
