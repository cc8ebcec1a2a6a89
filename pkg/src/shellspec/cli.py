"""Command-line front end.

Shapes are given as ``kind:params:subdiv``::

    icosphere:1.0:3            radius, subdivision level
    ellipsoid:2,1,1:{1,2,3}    semi-axes, a subdivision ladder
    spheroid:2,1:3             polar and equatorial semi-axes
    two-copy:0.79,8,0,0:2      scale t and offset z of two unit spheres
    off:path/to/mesh.off       a mesh file (no subdivision)

Every command prints (or writes with ``--out``) one JSON report whose
floats carry 17 significant digits.  Wall-clock data goes to a separate
``<out>.meta.json`` so that reports are byte-identical across runs with
the same configuration and ``SHELLSPEC_THREADS``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from ._backend import BACKEND

__all__ = ["ShapeSpec", "RunConfig", "parse_shape", "dumps", "run", "sweep", "main"]

EXPERIMENTS = ("verify", "spectrum", "lambda", "capacity", "iso", "split", "curves")


class ValidationError(ValueError):
    """Bad command line or configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


# ---------------------------------------------------------------------------
# serialization

def _num(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        return "null"
    text = format(x, ".17g")
    return text if any(c in text for c in ".en") else text + ".0"


def _plain(obj):
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if hasattr(obj, "as_dict"):
        return _plain(obj.as_dict())
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float written as ``%.17g`` and NaN/inf as ``null``."""
    out = io.StringIO()

    def emit(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if o is None:
            out.write("null")
        elif isinstance(o, bool):
            out.write("true" if o else "false")
        elif isinstance(o, int):
            out.write(str(o))
        elif isinstance(o, float):
            out.write(_num(o))
        elif isinstance(o, str):
            out.write(json.dumps(o))
        elif isinstance(o, dict):
            if not o:
                out.write("{}")
                return
            out.write("{\n")
            for i, (k, v) in enumerate(o.items()):
                out.write(f"{pad}{json.dumps(k)}: ")
                emit(v, level + 1)
                out.write(",\n" if i < len(o) - 1 else "\n")
            out.write(end + "}")
        elif isinstance(o, list):
            if not o:
                out.write("[]")
                return
            if all(isinstance(v, (int, float, bool)) or v is None for v in o):
                out.write("[")
                for i, v in enumerate(o):
                    emit(v, level + 1)
                    if i < len(o) - 1:
                        out.write(", ")
                out.write("]")
                return
            out.write("[\n")
            for i, v in enumerate(o):
                out.write(pad)
                emit(v, level + 1)
                out.write(",\n" if i < len(o) - 1 else "\n")
            out.write(end + "]")
        else:
            raise TypeError(f"cannot serialize {type(o).__name__}")

    emit(_plain(obj), 0)
    out.write("\n")
    return out.getvalue()


def _csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["shape", "m", "a", "quantity", "value"])
    for shape, m, a, q, v in rows:
        w.writerow([shape, _num(m), "" if a is None else _num(a), q,
                    _num(v) if isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, bool)
                    else str(v).lower()])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# shapes

@dataclass(frozen=True)
class ShapeSpec:
    """Parsed ``kind:params:subdiv`` shape description."""

    kind: str
    params: tuple
    subdivisions: tuple = ()
    path: str = ""
    text: str = ""

    def label(self, level: int | None = None) -> str:
        if self.kind == "off":
            return f"off:{self.path}"
        base = ",".join(format(p, "g") for p in self.params)
        return f"{self.kind}:{base}" + ("" if level is None else f":{level}")

    def levels(self):
        return list(self.subdivisions) if self.subdivisions else [None]

    def build(self, level: int | None):
        from . import mesh as M

        if self.kind == "icosphere":
            return M.generate_icosphere(self.params[0], level)
        if self.kind == "ellipsoid":
            return M.generate_ellipsoid(self.params, level)
        if self.kind == "spheroid":
            return M.generate_spheroid(self.params[0], self.params[1], level)
        if self.kind == "two-copy":
            t, z = self.params[0], self.params[1:]
            return M.two_copy(M.generate_icosphere(1.0, level), t, z)
        mesh, warns = M.load_off(self.path)
        return mesh


_N_PARAMS = {"icosphere": (1,), "ellipsoid": (3,), "spheroid": (2,), "two-copy": (4,)}


def _levels(text: str) -> tuple:
    text = text.strip()
    if text.startswith("{") and text.endswith("}"):
        parts = text[1:-1].split(",")
    elif re.fullmatch(r"\d+-\d+", text):
        lo, hi = (int(v) for v in text.split("-"))
        parts = [str(v) for v in range(lo, hi + 1)]
    else:
        parts = [text]
    try:
        levels = tuple(int(p) for p in parts)
    except ValueError:
        raise ValidationError(f"bad subdivision level(s) {text!r}") from None
    if not levels or any(v < 0 for v in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValidationError(f"subdivision ladder must be nonnegative and increasing, got {text!r}")
    return levels


def parse_shape(text: str) -> ShapeSpec:
    """Parse the shape mini-language.

    Examples
    --------
    >>> parse_shape("ellipsoid:2,1,1:{1,2}").subdivisions
    (1, 2)
    """
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    if kind == "off":
        if not rest:
            raise ValidationError("off shape needs a path: off:file.off")
        return ShapeSpec("off", (), (), rest, text)
    if kind not in _N_PARAMS:
        raise ValidationError(f"unknown shape kind {kind!r}; expected one of "
                              f"{', '.join(sorted(_N_PARAMS))}, off")
    params, _, sub = rest.rpartition(":")
    if not params:
        raise ValidationError(f"shape {text!r} must look like {kind}:params:subdiv")
    try:
        vals = tuple(float(v) for v in params.split(","))
    except ValueError:
        raise ValidationError(f"bad numeric parameters in {text!r}") from None
    if len(vals) not in _N_PARAMS[kind]:
        raise ValidationError(f"{kind} takes {_N_PARAMS[kind][0]} parameter(s), got {len(vals)}")
    if kind == "two-copy":
        if vals[0] <= 0:
            raise ValidationError("two-copy scale must be positive")
    elif any(v <= 0 or not math.isfinite(v) for v in vals):
        raise ValidationError(f"shape parameters must be positive and finite in {text!r}")
    return ShapeSpec(kind, vals, _levels(sub), "", text)


def _floats(text: str, name: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"--{name}: expected comma-separated numbers, got {text!r}") from None


# ---------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    """Everything a run depends on; two equal configs give identical reports."""

    command: str
    shape: ShapeSpec | None
    m: float = 1.0
    a: list = field(default_factory=lambda: [0.0])
    a_grid: tuple = (-0.85, 0.85, 9)
    threads: int = 1
    k: int = 8
    h: float | None = None
    t: list = field(default_factory=lambda: [1.0])
    z: list = field(default_factory=lambda: [4.0, 8.0, 16.0])
    jump_eps: float = 0.2
    bisection: bool = True
    off_dir: str | None = None
    dump_dir: str | None = None
    tolerances: dict = field(default_factory=dict)

    def validate(self):
        if not (self.m > 0 and math.isfinite(self.m)):
            raise ValidationError(f"m must be positive, got {self.m}")
        if self.threads < 1:
            raise ValidationError("thread count must be at least 1")
        if self.command in ("verify", "spectrum") and any(abs(a) > self.m for a in self.a):
            raise ValidationError("spectral parameters must lie in [-m, m]")
        if self.command == "curves":
            lo, hi, n = self.a_grid
            if not (-self.m < lo < hi < self.m) or n < 2:
                raise ValidationError("curve grid must satisfy -m < lo < hi < m with at least 2 points")

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["shape"] = self.shape.text if self.shape else None
        d["a_grid"] = list(self.a_grid)
        return d


def _threads(cli_value) -> int:
    if cli_value is not None:
        return int(cli_value)
    env = os.environ.get("SHELLSPEC_THREADS")
    if env is None or env == "":
        return 1
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"SHELLSPEC_THREADS must be an integer, got {env!r}") from None


# ---------------------------------------------------------------------------
# experiments; each returns (json payload, csv rows)

def _exp_mesh(cfg: RunConfig):
    from .mesh import mesh_stats, write_off

    out, rows = [], []
    for lv in cfg.shape.levels():
        mesh = cfg.shape.build(lv)
        st = mesh_stats(mesh).as_dict()
        st.update(label=cfg.shape.label(lv), digest=mesh.digest())
        if cfg.off_dir:
            Path(cfg.off_dir).mkdir(parents=True, exist_ok=True)
            path = Path(cfg.off_dir) / (re.sub(r"[^A-Za-z0-9_.-]+", "_", cfg.shape.label(lv)) + ".off")
            write_off(mesh, path)
            st["off_file"] = str(path)
        out.append(st)
        rows += [(st["label"], cfg.m, None, q, st[q]) for q in ("n_panels", "area", "volume", "min_quality")]
    return out, rows


def _exp_verify(cfg: RunConfig):
    from .analysis import identity_suite, observed_orders

    per, rows, sizes = [], [], []
    for i, lv in enumerate(cfg.shape.levels()):
        mesh = cfg.shape.build(lv)
        eps = cfg.jump_eps / 2**i
        res = identity_suite(mesh, cfg.m, cfg.a, jump_eps=eps)
        per.append(res)
        sizes.append(res[0].h)
        for r in res:
            for q in ("clifford", "anticommutator", "quadratic", "jump_interior", "jump_exterior"):
                rows.append((cfg.shape.label(lv), cfg.m, r.a, q, getattr(r, q)))
    table = [r.as_dict() for res in per for r in res]
    orders = {}
    if len(per) > 1:
        for j, a in enumerate(cfg.a):
            for q in ("clifford", "anticommutator", "quadratic", "jump_interior", "jump_exterior"):
                vals = [getattr(res[j], q) for res in per]
                orders[f"{q}@a={a:g}"] = {
                    "values": vals,
                    "orders": observed_orders(vals, sizes).tolist(),
                    "decreasing": bool(np.all(np.diff(vals) < 0)),
                }
    return {"rows": table, "ladder": orders}, rows


def _exp_spectrum(cfg: RunConfig):
    from .analysis import coupling_set
    from .assembly import assemble_C, dump_operator
    from .kernels import PhysicalParams

    out, rows = [], []
    for lv in cfg.shape.levels():
        mesh = cfg.shape.build(lv)
        for a in cfg.a:
            cs = coupling_set(mesh, cfg.m, a, k=cfg.k)
            d = cs.as_dict()
            d["label"] = cfg.shape.label(lv)
            if cfg.dump_dir:
                Path(cfg.dump_dir).mkdir(parents=True, exist_ok=True)
                path = Path(cfg.dump_dir) / f"C_{mesh.digest()}_a{a:+.6f}.bin"
                dump_operator(assemble_C(mesh, PhysicalParams(cfg.m, a)), path, a, cfg.m, mesh.digest())
                d["matrix_dump"] = str(path)
            out.append(d)
            for j, lam in enumerate(cs.lambdas):
                rows.append((d["label"], cfg.m, a, f"lambda_{j}", lam))
            rows.append((d["label"], cfg.m, a, "max_symmetry_residual", cs.max_symmetry_residual))
    return out, rows


def _exp_lambda(cfg: RunConfig):
    from .assembly import assemble_K, assemble_W, assembler_for
    from .kernels import PhysicalParams
    from .spectral import lambda_omega_bisect, lambda_omega_qep, operator_norm

    out, rows = [], []
    for lv in cfg.shape.levels():
        mesh = cfg.shape.build(lv)
        asm = assembler_for(mesh)
        p = PhysicalParams(cfg.m, cfg.m)
        K, W = assemble_K(mesh, p, asm), assemble_W(mesh, p, asm)
        nK, nW = operator_norm(K), operator_norm(W)
        q = lambda_omega_qep(K, W, cfg.m, nK, nW)
        d = {"label": cfg.shape.label(lv), "n_panels": mesh.n_panels, "norm_K": nK, "norm_W": nW,
             "lambda_omega": q.lambda_omega, "qep": q.as_dict()}
        if cfg.bisection:
            b = lambda_omega_bisect(K, W, cfg.m, nK, nW)
            d["bisection"] = b.as_dict()
            d["relative_agreement"] = abs(b.lambda_omega - q.lambda_omega) / q.lambda_omega
        out.append(d)
        for key in ("norm_K", "norm_W", "lambda_omega"):
            rows.append((d["label"], cfg.m, cfg.m, key, d[key]))
    return out, rows


def _exp_capacity(cfg: RunConfig):
    from .capacity import capacity, ellipsoid_capacity_quad

    out, rows = [], []
    for lv in cfg.shape.levels():
        mesh = cfg.shape.build(lv)
        rep = capacity(mesh).as_dict()
        rep["label"] = cfg.shape.label(lv)
        axes = {"icosphere": lambda p: (p[0],) * 3, "ellipsoid": lambda p: p,
                "spheroid": lambda p: (p[0], p[1], p[1])}.get(cfg.shape.kind)
        if axes is not None:
            ref = ellipsoid_capacity_quad(axes(cfg.shape.params))
            rep["oracle_cap"] = ref
            rep["relative_error"] = (rep["cap"] - ref) / ref
        out.append(rep)
        for key in ("cap", "area_over_cap", "polya_szego_margin"):
            rows.append((rep["label"], cfg.m, None, key, rep[key]))
    return out, rows


def _exp_iso(cfg: RunConfig):
    from .analysis import isoperimetric_report

    out, rows = [], []
    for lv in cfg.shape.levels():
        lab = cfg.shape.label(lv)
        r = isoperimetric_report(cfg.shape.build(lv), cfg.m, lab, bisection=cfg.bisection).as_dict()
        out.append(r)
        for key in ("lambda_qep", "rhs_sup", "rhs_inf", "margin_sup", "margin_inf", "area_over_cap"):
            rows.append((lab, cfg.m, cfg.m, key, r[key]))
    return out, rows


def _exp_split(cfg: RunConfig):
    from .analysis import split_experiment

    out, rows = [], []
    for lv in cfg.shape.levels():
        mesh = cfg.shape.build(lv)
        lab = cfg.shape.label(lv)
        for t in cfg.t:
            for r in split_experiment(mesh, t, cfg.z):
                d = r.as_dict()
                d["label"] = lab
                out.append(d)
                rows.append((lab, cfg.m, None, f"deviation_t{t:g}_z{r.z:g}", r.deviation))
                rows.append((lab, cfg.m, None, f"bound_t{t:g}_z{r.z:g}", r.bound))
    return out, rows


def _exp_curves(cfg: RunConfig):
    from .analysis import eigencurves

    lo, hi, n = cfg.a_grid
    grid = np.linspace(lo, hi, int(n))
    out, rows = [], []
    for lv in cfg.shape.levels():
        lab = cfg.shape.label(lv)
        ec = eigencurves(cfg.shape.build(lv), cfg.m, grid, k=cfg.k, h=cfg.h)
        d = ec.as_dict()
        d["label"] = lab
        gap = ec.derivative_gap()
        d["max_derivative_gap"] = float(np.nanmax(gap)) if np.any(np.isfinite(gap)) else None
        out.append(d)
        for j in range(ec.n_curves):
            for i, a in enumerate(grid):
                if np.isfinite(ec.values[j, i]):
                    rows.append((lab, cfg.m, a, f"c_{j}", ec.values[j, i]))
    return out, rows


_RUNNERS = {
    "mesh": _exp_mesh,
    "verify": _exp_verify,
    "spectrum": _exp_spectrum,
    "lambda": _exp_lambda,
    "capacity": _exp_capacity,
    "iso": _exp_iso,
    "split": _exp_split,
    "curves": _exp_curves,
}


# ---------------------------------------------------------------------------
# sweep

def _sweep_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read sweep config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"sweep config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValidationError("sweep config must be a JSON object")
    shapes = cfg.get("shapes")
    if not isinstance(shapes, list) or not shapes:
        raise ValidationError("sweep config needs a nonempty 'shapes' list")
    exps = cfg.get("experiments", ["iso"])
    bad = [e for e in exps if e not in EXPERIMENTS]
    if bad or not exps:
        raise ValidationError(f"unknown experiments {bad}; allowed: {', '.join(EXPERIMENTS)}")
    if not all(isinstance(s, str) for s in shapes):
        raise ValidationError("shapes must be strings in the kind:params:subdiv form")
    m = float(cfg.get("m", 1.0))
    if not m > 0:
        raise ValidationError("m must be positive")
    return {
        "shapes": shapes,
        "m": m,
        "experiments": exps,
        "a": [float(v) for v in cfg.get("a", [0.0])],
        "a_grid": list(cfg.get("a_grid", [-0.85, 0.85, 9])),
        "k": int(cfg.get("k", 8)),
        "output": cfg.get("output"),
        "threads": cfg.get("threads"),
        "tolerances": dict(cfg.get("tolerances", {})),
    }


def _aspect(spec: ShapeSpec) -> float:
    if spec.kind in ("ellipsoid", "spheroid", "icosphere"):
        return max(spec.params) / min(spec.params)
    return float("nan")


def sweep(config: dict, threads: int = 1):
    """Run ``config['experiments']`` on every shape; failures are recorded, not fatal.

    Returns ``(report, csv_rows, margin_table_text, n_failed)``.
    """
    jobs = [(s, exp) for s in config["shapes"] for exp in config["experiments"]]

    def work(job):
        s, exp = job
        try:
            rc = RunConfig(exp, parse_shape(s), m=config["m"], a=config["a"], a_grid=tuple(config["a_grid"]),
                           k=config["k"], threads=threads, tolerances=config["tolerances"])
            rc.validate()
            payload, rows = _RUNNERS[exp](rc)
            return {"shape": s, "experiment": exp, "status": "ok", "result": payload}, rows
        except Exception as exc:  # partial-failure policy
            return {"shape": s, "experiment": exp, "status": "failed",
                    "error": f"{type(exc).__module__}.{type(exc).__name__}: {exc}"}, []

    workers = max(1, min(threads, len(jobs)))
    blas = 1 if workers > 1 else threads
    with threadpool_limits(limits=blas):
        if workers == 1:
            results = [work(j) for j in jobs]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(work, jobs))  # input order: deterministic merge
    entries = [r for r, _ in results]
    rows = [row for _, rr in results for row in rr]
    lines = ["# shape aspect margin_sup margin_inf"]
    for e in entries:
        if e["status"] == "ok" and e["experiment"] == "iso":
            asp = _aspect(parse_shape(e["shape"]))
            for r in e["result"]:
                lines.append(f"{r['shape_id']} {_num(asp)} {_num(r['margin_sup'])} {_num(r['margin_inf'])}")
    failed = sum(e["status"] != "ok" for e in entries)
    report = {"command": "sweep", "config": config, "results": entries, "n_failed": failed}
    return report, rows, "\n".join(lines) + "\n", failed


# ---------------------------------------------------------------------------
# entry points

def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shellspec", description="Boundary-element spectral toolkit for Dirac shell interactions.")
    p.add_argument("--version", action="version", version=f"shellspec {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, shape=True):
        if shape:
            sp.add_argument("--shape", required=True, help="kind:params:subdiv, e.g. icosphere:1.0:{1,2,3}")
        sp.add_argument("--m", type=float, default=1.0, help="mass (default 1)")
        sp.add_argument("--out", help="write the JSON report here instead of stdout")
        sp.add_argument("--csv", help="also write a long-format CSV table")
        sp.add_argument("--threads", type=int, help="thread count (default: SHELLSPEC_THREADS or 1)")

    sp = sub.add_parser("mesh", help="generate or load a mesh and report statistics")
    common(sp)
    sp.add_argument("--off-dir", help="dump each mesh as OFF into this directory")
    sp = sub.add_parser("verify", help="operator identities and jump formula along a ladder")
    common(sp)
    sp.add_argument("--a", default="0", help="comma-separated spectral parameters")
    sp.add_argument("--jump-eps", type=float, default=0.2, help="normal offset on the coarsest level, halved per level")
    sp = sub.add_parser("spectrum", help="coupling constants and spectrum closure")
    common(sp)
    sp.add_argument("--a", default="0")
    sp.add_argument("--k", type=int, default=16)
    sp.add_argument("--dump-dir", help="write binary matrix dumps of C here")
    sp = sub.add_parser("lambda", help="critical coupling by QEP and bisection")
    common(sp)
    sp.add_argument("--no-bisection", action="store_true")
    sp = sub.add_parser("capacity", help="capacity and Polya-Szego margin")
    common(sp)
    sp = sub.add_parser("iso", help="isoperimetric report")
    common(sp)
    sp.add_argument("--no-bisection", action="store_true")
    sp = sub.add_parser("split", help="two-copy splitting experiment")
    common(sp)
    sp.add_argument("--t", default=f"1,{2 ** (-1 / 3)!r}")
    sp.add_argument("--z", default="4,8,16")
    sp = sub.add_parser("curves", help="eigenvalue curves c_j(a)")
    common(sp)
    sp.add_argument("--a-grid", default="-0.85,0.85,9", help="lo,hi,n")
    sp.add_argument("--k", type=int, default=8)
    sp.add_argument("--h", type=float, help="finite-difference step (default 0.05 m)")
    sp = sub.add_parser("sweep", help="run experiments over a list of shapes from a JSON config")
    sp.add_argument("config", help="JSON config: shapes, m, experiments, a, a_grid, k, output, threads")
    sp.add_argument("--out", help="output directory (overrides config 'output')")
    sp.add_argument("--threads", type=int)
    return p


def _config_from_args(ns) -> RunConfig:
    cfg = RunConfig(ns.command, parse_shape(ns.shape), m=ns.m, threads=_threads(ns.threads))
    if hasattr(ns, "a"):
        cfg.a = _floats(ns.a, "a")
    if hasattr(ns, "k"):
        cfg.k = ns.k
    if getattr(ns, "h", None) is not None:
        cfg.h = ns.h
    if hasattr(ns, "a_grid"):
        g = _floats(ns.a_grid, "a-grid")
        if len(g) != 3 or g[2] != int(g[2]):
            raise ValidationError("--a-grid takes lo,hi,n")
        cfg.a_grid = (g[0], g[1], int(g[2]))
    if hasattr(ns, "t"):
        cfg.t = _floats(ns.t, "t")
    if hasattr(ns, "z"):
        cfg.z = _floats(ns.z, "z")
    if hasattr(ns, "jump_eps"):
        cfg.jump_eps = ns.jump_eps
    cfg.bisection = not getattr(ns, "no_bisection", False)
    cfg.off_dir = getattr(ns, "off_dir", None)
    cfg.dump_dir = getattr(ns, "dump_dir", None)
    cfg.validate()
    return cfg


def _write(text: str, path: str | None, stdout):
    if path is None:
        stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _meta(started: float, threads: int) -> dict:
    return {"version": __version__, "backend": BACKEND, "threads": threads,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
            "elapsed_seconds": time.time() - started}


def _is_numerical(exc: BaseException) -> bool:
    from .spectral import SpectralError

    return isinstance(exc, (SpectralError, ArithmeticError, np.linalg.LinAlgError)) or \
        type(exc).__name__ in ("ArpackNoConvergence", "ArpackError")


def run(argv=None, stdout=None, stderr=None) -> int:
    """Execute one command line and return the exit code."""
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    started = time.time()
    try:
        ns = _parser().parse_args(argv)
        if ns.command is None:
            raise ValidationError("a subcommand is required")
        if ns.command == "sweep":
            config = _sweep_config(ns.config)
            threads = _threads(ns.threads if ns.threads is not None else config["threads"])
            if threads < 1:
                raise ValidationError("thread count must be at least 1")
            report, rows, margins, failed = sweep(config, threads)
            outdir = ns.out or config["output"]
            if outdir:
                d = Path(outdir)
                d.mkdir(parents=True, exist_ok=True)
                (d / "report.json").write_text(dumps(report))
                (d / "table.csv").write_text(_csv_text(rows))
                (d / "margins.dat").write_text(margins)
                (d / "report.meta.json").write_text(dumps(_meta(started, threads)))
            else:
                stdout.write(dumps(report))
            if failed:
                stderr.write(f"shellspec: {failed} sweep job(s) failed; see report\n")
            return 0 if failed < len(report["results"]) else 2
        cfg = _config_from_args(ns)
        with threadpool_limits(limits=cfg.threads):
            payload, rows = _RUNNERS[cfg.command](cfg)
        report = {"command": cfg.command, "config": cfg.as_dict(), "results": payload}
        _write(dumps(report), ns.out, stdout)
        if ns.out:
            Path(ns.out + ".meta.json").write_text(dumps(_meta(started, cfg.threads)))
        if ns.csv:
            _write(_csv_text(rows), ns.csv, stdout)
        return 0
    except ValidationError as exc:
        stderr.write(f"shellspec: error: {exc}\n")
        return 1
    except Exception as exc:
        where = type(exc).__module__
        if _is_numerical(exc):
            stderr.write(f"shellspec: numerical failure in {where}: {exc}\n")
            return 2
        if isinstance(exc, (ValueError, OSError)):
            stderr.write(f"shellspec: invalid input ({where}): {exc}\n")
            return 1
        raise


def main() -> None:
    sys.exit(run())
