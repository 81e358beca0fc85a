"""Experiment configuration: a sectioned ``key = value`` text format.

Sections
--------
``[problem]``
    ``dimension``, ``domain`` (``box`` or ``ball``), ``lower``/``upper`` or
    ``center``/``radius``, ``exterior`` (expression), ``lam``, ``Lam``, ``C0``.
``[grid]``
    ``nodes`` per axis; ``margin`` cells around a ball domain.
``[kernel]``
    ``family`` (``zero``, ``fractional``, ``truncated``, ``uniform``,
    ``tabulated``) and its parameters ``sigma``, ``cutoff``, ``radius``,
    ``height``, ``table`` (CSV path, relative to the config file).
``[quadrature]``
    Optional overrides of the assembly scheme fields.
``[control A B]``
    One section per control pair: ``diffusion`` (or ``diffusion11``,
    ``diffusion12``, ``diffusion22`` in 2-d), ``drift`` (or ``drift1``,
    ``drift2``), ``discount``, ``source``, ``jump`` (may use ``z``).
``[task]``
    ``name`` plus task parameters.
``[output]``
    ``dir``.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expression import Expression, ExpressionError
from .grid import BoxDomain, Grid, Region
from .kernels import LevyKernel
from .operators import EllipticityParams
from .quadrature import QuadratureScheme

TASKS = ("solve", "verify-barrier", "abp", "harnack", "holder", "envelope")

KEYS = {
    "problem": {"dimension", "domain", "lower", "upper", "center", "radius", "exterior", "lam",
                "Lam", "C0"},
    "grid": {"nodes", "margin"},
    "kernel": {"family", "sigma", "cutoff", "radius", "height", "table"},
    "quadrature": {"inner_radius_cells", "core_exponent", "shells", "nodes_per_shell",
                   "angular_nodes", "tail_tol", "r_inf_cap", "inner_radius"},
    "control": {"diffusion", "diffusion11", "diffusion12", "diffusion22", "drift", "drift1",
                "drift2", "drift3", "discount", "source", "jump"},
    "task": {"name", "seed", "solver", "drift", "tol", "exact", "manufactured", "error_bound", "dt",
             "batch", "pieces", "amplitude", "scales", "eps", "center", "spread_bound", "ratio",
             "kmax", "radius0", "function", "variant", "kind", "samples", "radii"},
    "output": {"dir"},
}


class ConfigError(ValueError):
    def __init__(self, path, line, message):
        loc = f"{path}:{line}" if line else str(path)
        super().__init__(f"{loc}: {message}")
        self.line = line


def _line_map(text: str) -> dict:
    """``(section, key) -> line`` and ``(section, None) -> header line``."""
    out, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"^\[(.+)\]$", line)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = no
            continue
        m = re.match(r"^([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            out[(section, m.group(1).strip())] = no
    return out


@dataclass
class ExperimentConfig:
    path: Path
    sections: dict
    lines: dict
    seed: int = 0
    out_dir: Path | None = None
    problem: object = None
    grid: object = None
    quad: object = None
    task: dict = field(default_factory=dict)

    # -- typed accessors ------------------------------------------------------
    def error(self, section, key, message):
        return ConfigError(self.path, self.lines.get((section, key), self.lines.get((section, None))),
                           f"[{section}] {key}: {message}" if key else f"[{section}] {message}")

    def has(self, section, key):
        return key in self.sections.get(section, {})

    def raw(self, section, key, default=None, required=False):
        sec = self.sections.get(section)
        if sec is None or key not in sec:
            if required:
                line = self.lines.get((section, None))
                raise ConfigError(self.path, line, f"[{section}] missing required key {key!r}")
            return default
        return sec[key]

    def number(self, section, key, default=None, required=False, low=None, high=None,
               strict_low=False, integer=False):
        text = self.raw(section, key, None, required)
        if text is None:
            return default
        try:
            val = int(text) if integer else float(text)
        except ValueError:
            raise self.error(section, key, f"expected {'an integer' if integer else 'a number'}, "
                                           f"got {text!r}") from None
        if low is not None and (val < low or (strict_low and val == low)):
            raise self.error(section, key, f"must be {'>' if strict_low else '>='} {low}, got {val}")
        if high is not None and val > high:
            raise self.error(section, key, f"must be <= {high}, got {val}")
        return val

    def numbers(self, section, key, default=None, required=False):
        text = self.raw(section, key, None, required)
        if text is None:
            return default
        try:
            return [float(t) for t in re.split(r"[,\s]+", text.strip()) if t]
        except ValueError:
            raise self.error(section, key, f"expected a list of numbers, got {text!r}") from None

    def choice(self, section, key, options, default=None, required=False):
        val = self.raw(section, key, default, required)
        if val is not None and val not in options:
            raise self.error(section, key, f"must be one of {', '.join(options)}, got {val!r}")
        return val

    def flag(self, section, key, default=False):
        val = self.raw(section, key)
        if val is None:
            return default
        low = val.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise self.error(section, key, f"expected a boolean, got {val!r}")

    def expression(self, section, key, d, default=None, required=False, allow_jump=False):
        text = self.raw(section, key, default, required)
        if text is None:
            return None
        try:
            return Expression(str(text), d, allow_jump=allow_jump)
        except ExpressionError as exc:
            raise self.error(section, key, str(exc)) from None


def load_config(path, seed: int | None = None, out_dir=None, task: str | None = None
                ) -> ExperimentConfig:
    """Parse and fully validate a configuration file.

    Raises
    ------
    ConfigError
        With the file name and line of the offending entry.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(path, None, "configuration file does not exist")
    text = path.read_text()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigError(path, line, f"syntax error: {exc.message.splitlines()[0]}") from None
    sections = {s: dict(parser[s]) for s in parser.sections()}
    cfg = ExperimentConfig(path, sections, _line_map(text))
    _check_keys(cfg)
    name = cfg.choice("task", "name", TASKS, required=task is None)
    if task is not None and name is not None and name != task:
        raise cfg.error("task", "name", f"config is for task {name!r}, not {task!r}")
    task = name or task
    if task not in TASKS:
        raise ConfigError(path, None, f"unknown task {task!r}")
    cfg.task = {"name": task}
    cfg.seed = int(seed) if seed is not None else int(cfg.number("task", "seed", 0, integer=True, low=0))
    cfg.out_dir = Path(out_dir) if out_dir is not None else (
        (path.parent / cfg.raw("output", "dir")) if cfg.has("output", "dir") else None)
    _build(cfg)
    return cfg


def _check_keys(cfg):
    for sec, entries in cfg.sections.items():
        kind = sec.split()[0]
        if kind not in KEYS:
            raise cfg.error(sec, None, "unknown section")
        for key in entries:
            if key not in KEYS[kind]:
                raise cfg.error(sec, key, "unknown key")


def _params(cfg):
    lam = cfg.number("problem", "lam", 1.0, strict_low=True, low=0.0)
    Lam = cfg.number("problem", "Lam", max(lam, 1.0))
    if Lam < lam:
        raise cfg.error("problem", "Lam", f"must be at least lam = {lam}, got {Lam}")
    C0 = cfg.number("problem", "C0", 0.0, low=0.0)
    return EllipticityParams(lam, Lam, C0)


def _kernel(cfg, d):
    fam = cfg.choice("kernel", "family", ("zero", "fractional", "truncated", "uniform", "tabulated"),
                     "zero")
    try:
        if fam == "zero":
            return LevyKernel.zero(d)
        if fam == "fractional":
            return LevyKernel.fractional(d, cfg.number("kernel", "sigma", required=True))
        if fam == "truncated":
            return LevyKernel.truncated_fractional(d, cfg.number("kernel", "sigma", required=True),
                                                   cfg.number("kernel", "cutoff", 1.0, low=0.0,
                                                              strict_low=True))
        if fam == "uniform":
            return LevyKernel.compact_uniform(d, cfg.number("kernel", "radius", 1.0, low=0.0,
                                                            strict_low=True),
                                              cfg.number("kernel", "height", 1.0, low=0.0))
        table = cfg.raw("kernel", "table", required=True)
        tpath = (cfg.path.parent / table)
        if not tpath.exists():
            raise cfg.error("kernel", "table", f"file {table!r} does not exist")
        return LevyKernel.from_csv(d, tpath)
    except ConfigError:
        raise
    except ValueError as exc:
        key = next((k for k in ("sigma", "cutoff", "radius", "height", "table")
                    if k in str(exc) and cfg.has("kernel", k)), "family")
        raise cfg.error("kernel", key, str(exc)) from None


def _domain(cfg, d):
    kind = cfg.choice("problem", "domain", ("box", "ball"), "box")
    if kind == "box":
        lo = cfg.numbers("problem", "lower", [-1.0] * d)
        hi = cfg.numbers("problem", "upper", [1.0] * d)
        if len(lo) == 1:
            lo = lo * d
        if len(hi) == 1:
            hi = hi * d
        if len(lo) != d or len(hi) != d:
            raise cfg.error("problem", "lower", f"bounds need {d} entries")
        if any(a >= b for a, b in zip(lo, hi)):
            raise cfg.error("problem", "upper", "each upper bound must exceed the lower bound")
        return BoxDomain(tuple(lo), tuple(hi))
    c = cfg.numbers("problem", "center", [0.0] * d)
    if len(c) == 1:
        c = c * d
    if len(c) != d:
        raise cfg.error("problem", "center", f"needs {d} entries")
    rad = cfg.number("problem", "radius", 1.0, low=0.0, strict_low=True)
    return Region.ball(tuple(c), rad)


def _grid(cfg, domain, d):
    n = cfg.number("grid", "nodes", 65, integer=True, low=3)
    if isinstance(domain, BoxDomain):
        return Grid.uniform(domain.lower, domain.upper, n)
    margin = cfg.number("grid", "margin", 2, integer=True, low=1)
    c, rad = np.asarray(domain.center), domain.radius
    # n - 1 - 2 margin cells span the ball's bounding box
    h = 2 * rad / max(n - 1 - 2 * margin, 1)
    return Grid.uniform(tuple(c - rad - margin * h), tuple(c + rad + margin * h), n)


def _quad(cfg):
    from .solver import ASSEMBLY_SCHEME

    if "quadrature" not in cfg.sections:
        return ASSEMBLY_SCHEME
    kw = {}
    for key, integer in (("inner_radius_cells", False), ("core_exponent", False), ("shells", True),
                         ("nodes_per_shell", True), ("angular_nodes", True), ("tail_tol", False),
                         ("r_inf_cap", False), ("inner_radius", False)):
        if cfg.has("quadrature", key):
            kw[key] = cfg.number("quadrature", key, integer=integer, low=0.0, strict_low=True)
    base = {f: getattr(ASSEMBLY_SCHEME, f) for f in ("inner_radius_cells", "core_exponent")}
    base.update(kw)
    try:
        return QuadratureScheme(**base)
    except ValueError as exc:
        raise cfg.error("quadrature", None, str(exc)) from None


def _controls(cfg, d):
    from .solver import ControlCoefficients

    controls = {}
    for name in cfg.sections:
        parts = name.split()
        if parts[0] != "control":
            continue
        if len(parts) != 3:
            raise cfg.error(name, None, "control sections are named '[control A B]'")
        sec = name
        # full matrices are read entrywise in two dimensions only
        if d != 2 or cfg.has(sec, "diffusion"):
            diff = _expr_field(cfg, sec, "diffusion", d, "1")
        else:
            ents = {k: _expr_field(cfg, sec, f"diffusion{k}", d, "1" if k[0] == k[1] else "0")
                    for k in ("11", "12", "22")}
            diff = _matrix_field(ents)
        if d == 1 or cfg.has(sec, "drift"):
            drift = _expr_field(cfg, sec, "drift", d, "0")
            if d > 1:
                raise cfg.error(sec, "drift", "use drift1, drift2 in two dimensions")
        else:
            comps = [_expr_field(cfg, sec, f"drift{i + 1}", d, "0") for i in range(d)]
            if any(callable(c) for c in comps):
                drift = lambda p, comps=comps: np.stack(
                    [np.broadcast_to(c(p) if callable(c) else c, (len(p),)) for c in comps], 1)
            else:
                drift = np.array(comps)
        jump_expr = cfg.expression(sec, "jump", d, "1", allow_jump=True)
        if jump_expr.is_constant():
            jump = float(jump_expr(np.zeros((1, d)))[0])
            if not 0 <= jump <= 1:
                raise cfg.error(sec, "jump", "multiplier must lie in [0, 1]")
        else:
            jump = lambda x, z, e=jump_expr: e(x, z)
        controls[(parts[1], parts[2])] = ControlCoefficients(
            diffusion=diff, drift=drift,
            discount=_expr_field(cfg, sec, "discount", d, "0"),
            source=_expr_field(cfg, sec, "source", d, "0"), jump=jump)
    if not controls:
        raise ConfigError(cfg.path, None, "at least one [control A B] section is required")
    return controls


def _expr_field(cfg, sec, key, d, default):
    e = cfg.expression(sec, key, d, default)
    if e.is_constant():
        return float(e(np.zeros((1, d)))[0])
    return lambda p, e=e: e(p)


def _matrix_field(ents):
    def value(k, p):
        v = ents[k]
        return np.broadcast_to(v(p) if callable(v) else v, (len(p),))

    if not any(callable(v) for v in ents.values()):
        return np.array([[ents["11"], ents["12"]], [ents["12"], ents["22"]]])

    def diff(p):
        a11, a12, a22 = value("11", p), value("12", p), value("22", p)
        return np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)
    return diff


def _build(cfg: ExperimentConfig):
    from .solver import HJBIProblem

    name = cfg.task["name"]
    d = cfg.number("problem", "dimension", 1, integer=True, low=1, high=3)
    P = _params(cfg)
    K = _kernel(cfg, d)
    cfg.task.update(d=d, params=P, kernel=K)
    if name == "verify-barrier":
        _task_barrier(cfg, d)
        return
    domain = _domain(cfg, d)
    cfg.grid = _grid(cfg, domain, d)
    cfg.task["domain"] = domain
    if name == "envelope":
        cfg.task["function"] = cfg.expression("task", "function", d, required=True)
        cfg.task["variant"] = cfg.choice("task", "variant", ("local", "nonlocal"), "local")
        cfg.task["tol"] = cfg.number("task", "tol", None, low=0.0)
        return
    cfg.quad = _quad(cfg)
    ext = cfg.expression("problem", "exterior", d, "0")
    controls = _controls(cfg, d)
    try:
        cfg.problem = HJBIProblem(domain, K, controls, ext, P)
        cfg.problem.validate(cfg.grid)
    except ValueError as exc:
        raise _control_error(cfg, str(exc)) from None
    t = cfg.task
    t["solver"] = cfg.choice("task", "solver", ("policy", "pseudo-time", "perron"), "policy")
    t["drift_scheme"] = cfg.choice("task", "drift", ("central", "upwind"), "central")
    t["tol"] = cfg.number("task", "tol", None, low=0.0, strict_low=True)
    t["exact"] = cfg.expression("task", "exact", d)
    t["manufactured"] = cfg.flag("task", "manufactured", False)
    if t["manufactured"] and t["exact"] is None:
        raise cfg.error("task", "manufactured", "needs an 'exact' expression")
    t["error_bound"] = cfg.number("task", "error_bound", None, low=0.0)
    t["dt"] = cfg.number("task", "dt", None, low=0.0, strict_low=True)
    if name == "abp":
        t["batch"] = cfg.number("task", "batch", 50, integer=True, low=1)
        t["pieces"] = cfg.number("task", "pieces", 3, integer=True, low=1)
        t["amplitude"] = cfg.number("task", "amplitude", 10.0, low=0.0, strict_low=True)
    if name == "harnack":
        t["scales"] = cfg.numbers("task", "scales", [1.0, 0.5, 0.25, 0.125, 0.0625])
        t["eps"] = cfg.numbers("task", "eps", [0.125, 0.25, 0.5, 1.0])
        t["center"] = cfg.numbers("task", "center", [0.0] * d)
        t["spread_bound"] = cfg.number("task", "spread_bound", 5.0, low=1.0)
    if name == "holder":
        t["center"] = cfg.numbers("task", "center", [0.0] * d)
        t["ratio"] = cfg.number("task", "ratio", 8.0, low=1.0, strict_low=True)
        t["kmax"] = cfg.number("task", "kmax", 4, integer=True, low=2)
        t["radius0"] = cfg.number("task", "radius0", 1.0, low=0.0, strict_low=True)


def _control_error(cfg, message):
    """Point a coefficient validation failure at the control entry that caused it."""
    m = re.match(r"^(diffusion|drift|discount|jump multiplier) of control \('(.+)', '(.+)'\)", message)
    if m is None:
        return cfg.error("problem", None, message)
    sec = f"control {m.group(2)} {m.group(3)}"
    field_ = "jump" if m.group(1) == "jump multiplier" else m.group(1)
    candidates = [field_] + [k for k in sorted(cfg.sections.get(sec, {})) if k.startswith(field_)]
    key = next((k for k in candidates if cfg.has(sec, k)), None)
    if sec not in cfg.sections:
        sec = next(s for s in cfg.sections if s.split()[1:] == [m.group(2), m.group(3)])
    return cfg.error(sec, key, message)


def _task_barrier(cfg, d):
    t = cfg.task
    t["kind"] = cfg.choice("task", "kind", ("special", "boundary", "global"), "special")
    t["samples"] = cfg.number("task", "samples", 1000, integer=True, low=1)
    t["scales"] = cfg.numbers("task", "scales", [2.0 ** -k for k in range(7)])
    t["radii"] = cfg.numbers("task", "radii", [0.25, 0.5, 0.75])
    if t["kind"] == "global":
        cfg.grid = None
        t["domain"] = _domain(cfg, d)
