"""Command-line front end: ``python -m hjbilab <task> --config FILE --out DIR``.

Every task writes ``report.json`` (sorted keys; the wall-clock time lives in
the single ``timestamp`` key) and ``series.csv``.  Exit status is 0 when the
task's check passes, 2 when it fails (the report is still written) and 1 on
any error.

Randomized batches draw from numpy's ``PCG64`` bit generator; member ``i`` of
a batch uses ``SeedSequence(seed).spawn(n)[i]``, so results do not depend on
the thread count.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as gio
from .config import TASKS, ConfigError, load_config
from .grid import BoxDomain, GridFunction, Region

SCHEMA_PATH = Path(__file__).with_name("report.schema.json")


class TaskResult:
    def __init__(self, passed, results, series_header, series_rows, stdout=None):
        self.passed = bool(passed)
        self.results = results
        self.series_header = series_header
        self.series_rows = series_rows
        self.stdout = stdout


def _rng(seed, n):
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def _pmap(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _as_region(domain):
    return Region.from_box(domain) if isinstance(domain, BoxDomain) else domain


class _Smooth:
    """Closed-form expression with finite-difference derivatives (step ``2e-4``)."""

    def __init__(self, expr, d):
        self.expr, self.d, self.h = expr, d, 2e-4

    def __call__(self, x):
        return self.expr(np.atleast_2d(x))

    def _est(self, x):
        from .operators import hessian_estimate

        return hessian_estimate(self, np.atleast_2d(x), self.h)

    def gradient(self, x):
        return self._est(x).gradient

    def hessian(self, x):
        return self._est(x).hessian


# -- shared solve ------------------------------------------------------------------

def _solve(cfg, prob=None):
    from .barriers import build_global_barrier
    from .solver import (barrier_pair, discretize, perron_iterate, solve_policy_iteration,
                         solve_pseudo_time)

    t = cfg.task
    prob = prob or cfg.problem
    D = discretize(prob, cfg.grid, cfg.quad, drift=t["drift_scheme"])
    tol = t["tol"] if t["tol"] is not None else D.default_tol()
    info = {"solver": t["solver"], "tol": tol, "unknowns": D.n}
    if t["solver"] == "policy":
        u = solve_policy_iteration(D, tol, info=info)
    elif t["solver"] == "pseudo-time":
        u = solve_pseudo_time(D, t["dt"], tol, info=info)
    else:
        B = build_global_barrier(prob.domain, prob.params, prob.kernel)
        lo, up, A = barrier_pair(D, B.constants["eps6"], B.function)
        info.update(barrier_amplitude=A, eps6=B.constants["eps6"])
        u = perron_iterate(D, lo, up, tol, info=info)
    info["residual"] = float(np.abs(D.residual(u.values[D.unknown])).max(initial=0.0))
    return u, D, info


def _source_field(cfg, prob):
    """``max_ab |f_ab|`` at the nodes, the right-hand side size seen by the estimates."""
    nodes = cfg.grid.nodes()
    vals = np.max([np.abs(np.broadcast_to(c.source_at(nodes), (len(nodes),)))
                   for c in prob.controls.values()], axis=0)
    return GridFunction(cfg.grid, vals, 0.0)


# -- tasks ---------------------------------------------------------------------------

def task_solve(cfg, out, threads):
    from .solver import manufactured_rhs

    t = cfg.task
    prob = cfg.problem
    exact = _Smooth(t["exact"], t["d"]) if t["exact"] is not None else None
    if t["manufactured"]:
        prob = prob.with_sources(manufactured_rhs(prob, exact))
    u, D, info = _solve(cfg, prob)
    gio.write_binary(u, out / "solution.bin")
    gio.write_csv(u, out / "solution.csv")
    nodes = cfg.grid.nodes()
    err_col = np.zeros(len(nodes))
    passed = True
    if exact is not None:
        err_col[D.unknown] = u.values[D.unknown] - exact(nodes[D.unknown])
        info["error"] = float(np.abs(err_col).max(initial=0.0))
        if t["error_bound"] is not None:
            info["error_bound"] = t["error_bound"]
            passed = info["error"] <= t["error_bound"]
    info["nodes"] = list(cfg.grid.shape)
    stdout = {k: info[k] for k in ("residual", "outer", "inner", "steps", "iterations", "error")
              if k in info}
    header = [f"x{i + 1}" for i in range(t["d"])] + ["value", "error"]
    return TaskResult(passed, info, header, np.column_stack([nodes, u.values, err_col]), stdout)


def task_verify_barrier(cfg, out, threads):
    from .barriers import (build_boundary_barrier, build_global_barrier, build_special,
                           special_samples, verify_inequality, verify_special)

    t = cfg.task
    P, K, d, n = t["params"], t["kernel"], t["d"], t["samples"]
    reports = []
    if t["kind"] == "special":
        B = build_special(P, K)
        rep = verify_special(B, P, K, t["scales"], special_samples(d, n, K, seed=cfg.seed))
        reports.append(("special", B, rep))
        passed = rep.passed
    elif t["kind"] == "boundary":
        def one(r):
            B = build_boundary_barrier(r, P, K)
            return (f"boundary r={r:g}", B,
                    verify_inequality(B, "supersolution-plus", None, P, K, n_samples=n, seed=cfg.seed))
        reports = _pmap(one, t["radii"], threads)
        passed = all(rep.passed for _, _, rep in reports)
    else:
        B = build_global_barrier(t["domain"], P, K)
        rep = verify_inequality(B, "supersolution-plus", _as_region(t["domain"]), P, K,
                                n_samples=n, seed=cfg.seed)
        eps6 = B.constants["eps6"]
        strict = bool(rep.residuals.max() <= -eps6)
        reports.append(("global", B, rep))
        passed = rep.passed and strict
    results = {"kind": t["kind"], "checks": {}}
    rows = []
    for label, B, rep in reports:
        s = rep.summary()
        s.update(eta=B.eta, constants={k: v for k, v in B.constants.items()
                                       if isinstance(v, (int, float))})
        if t["kind"] == "global":
            s["strict"] = bool(rep.residuals.max() <= -B.constants["eps6"])
        results["checks"][label] = s
        rows.append(np.column_stack([rep.points, rep.scales, rep.residuals, rep.margins, rep.budgets]))
    header = [f"x{i + 1}" for i in range(d)] + ["scale", "residual", "margin", "budget"]
    return TaskResult(passed, results, header, np.vstack(rows))


def _abp_member(cfg, rng):
    from .geometry import abp_check

    t = cfg.task
    prob = cfg.problem
    region = _as_region(prob.domain)
    g = cfg.grid
    lo, hi = np.asarray(g.box.lower), np.asarray(g.box.upper)
    boxes = []
    for _ in range(t["pieces"]):
        c = rng.uniform(lo, hi)
        w = rng.uniform(0.05, 0.5, size=len(lo)) * (hi - lo)
        boxes.append((c - w / 2, c + w / 2, rng.uniform(0.1, 1.0) * t["amplitude"]))

    def rhs(p):
        p = np.atleast_2d(p)
        out = np.zeros(len(p))
        for a, b, amp in boxes:
            out -= amp * np.all((p >= a) & (p <= b), axis=1)
        return out

    # sup-inf L u = -source, so source = -rhs gives the extremal inequality >= rhs
    member = prob.with_sources({k: (lambda p: -rhs(p)) for k in prob.controls})
    u, _, info = _solve(cfg, member)
    f = GridFunction(g, rhs(g.nodes()), 0.0)
    try:
        rep = abp_check(u, f, region, prob.params, prob.kernel)
        return dict(rep.summary(), verified=True, solve_residual=info["residual"])
    except ValueError as exc:
        return dict(verified=False, reason=str(exc), solve_residual=info["residual"])


def task_abp(cfg, out, threads):
    t = cfg.task
    rngs = _rng(cfg.seed, t["batch"])
    members = _pmap(lambda r: _abp_member(cfg, r), rngs, threads)
    ok = [m for m in members if m["verified"]]
    C = max((m["constant"] for m in ok), default=0.0)
    passed = len(ok) == len(members) and all(m["passed"] for m in ok) and math.isfinite(C)
    rows = [[i, float(m["verified"]), m.get("lhs", np.nan), m.get("exterior_term", np.nan),
             m.get("f_norm", np.nan), m.get("constant", np.nan), m.get("residual_slack", np.nan),
             m.get("contact_nodes", np.nan)] for i, m in enumerate(members)]
    results = {"batch": len(members), "verified": len(ok), "C_emp": C, "members": members}
    header = ["member", "verified", "lhs", "exterior_term", "f_norm", "constant",
              "residual_slack", "contact_nodes"]
    return TaskResult(passed, results, header, rows)


def task_harnack(cfg, out, threads):
    from .regularity import superlevel_decay, weak_harnack_check

    t = cfg.task
    u, _, info = _solve(cfg)
    f = _source_field(cfg, cfg.problem)
    rep = weak_harnack_check(u, f, t["scales"], t["eps"], t["center"], t["spread_bound"])
    decay = {}
    for l in t["scales"]:
        try:
            _, C = superlevel_decay(u, f, l, rep.eps3, center=t["center"])
            decay[str(l)] = C
        except ValueError:
            continue
    results = dict(rep.summary(), solve=info, superlevel_C=decay,
                   superlevel_C_max=max(decay.values(), default=0.0))
    rows = [[l] + [rep.ratios[e][i] for e in t["eps"]] for i, l in enumerate(t["scales"])]
    header = ["scale"] + [f"ratio_eps{e:g}" for e in t["eps"]]
    return TaskResult(rep.spread <= t["spread_bound"], results, header, rows)


def task_holder(cfg, out, threads):
    from .regularity import InsufficientDataError, holder_fit, oscillation_sequence

    t = cfg.task
    u, _, info = _solve(cfg)
    seq = oscillation_sequence(u, t["center"], t["ratio"], t["kmax"], t["radius0"])
    results = {"solve": info, "ratio": t["ratio"], "center": t["center"],
               "radii": seq.radii, "sequence": seq.values, "truncated": seq.truncated}
    try:
        alpha, C, res = holder_fit(seq)
        results.update(alpha=alpha, C=C, residual=res)
        passed = alpha > 0
    except InsufficientDataError as exc:
        results.update(alpha=None, reason=str(exc))
        passed = False
    rows = np.column_stack([np.arange(len(seq.values)), seq.radii, seq.values])
    return TaskResult(passed, results, ["k", "radius", "osc"], rows)


def task_envelope(cfg, out, threads):
    from .geometry import contact_set, convex_envelope

    t = cfg.task
    expr = t["function"]
    g = cfg.grid
    u = GridFunction(g, expr(g.nodes()), lambda p: expr(np.atleast_2d(p)))
    O = _as_region(t["domain"])
    env = convex_envelope(u, O)
    mask = contact_set(u, O, t["variant"], t["tol"])
    mask.to_csv(out / "contact.csv")
    gio.write_csv(env, out / "envelope.csv")
    inside = O.mask(g)
    below = float((env.values[inside] - u.values[inside]).max(initial=-math.inf))
    results = {"variant": t["variant"], "contact_nodes": mask.count, "tol": mask.tol,
               "nodes_in_region": int(inside.sum()), "max_envelope_minus_u": below}
    rows = np.column_stack([g.nodes(), u.values, env.values, mask.mask.astype(float)])
    header = [f"x{i + 1}" for i in range(g.d)] + ["u", "envelope", "contact"]
    return TaskResult(below <= 1e-12 * (1 + u.sup_norm()), results, header, rows)


def task_selftest(out, threads):
    """Quick closed-form checks that need no configuration."""
    from .expression import expression_eval
    from .geometry import convex_envelope
    from .grid import Grid
    from .kernels import LevyKernel
    from .operators import EllipticityParams, pucci_local_minus, pucci_local_plus
    from .solver import ControlCoefficients, HJBIProblem, discretize, solve_policy_iteration

    checks = {}
    P = EllipticityParams(1.0, 2.0, 0.0)
    X = np.diag([1.0, -1.0])
    checks["pucci_plus"] = abs(pucci_local_plus(X, P) - 1.0) <= 1e-12
    checks["pucci_minus"] = abs(pucci_local_minus(X, P) + 1.0) <= 1e-12
    checks["expression"] = (abs(expression_eval("1 - x1^2", [0.5]) - 0.75) <= 1e-15
                            and expression_eval("min(1, |x|)", [3.0, 4.0]) == 1.0)
    g = Grid.uniform((-1.0,), (1.0,), 33)
    # -u'' - 2 = 0 with u = 1 - x^2 on both sides of the box
    prob = HJBIProblem(BoxDomain((-1.0,), (1.0,)), LevyKernel.zero(1),
                       {("a", "b"): ControlCoefficients(source=-2.0)},
                       lambda p: 1.0 - np.atleast_2d(p)[:, 0] ** 2, EllipticityParams(1.0, 1.0, 0.0))
    u = solve_policy_iteration(discretize(prob, g))
    err = float(np.abs(u.values - (1.0 - g.nodes()[:, 0] ** 2)).max())
    checks["poisson_1d"] = err <= 1e-10
    g3 = Grid.uniform((-1.0,), (1.0,), 3)
    env = convex_envelope(GridFunction(g3, [0.0, 1.0, 0.0], 0.0), Region.from_box(g3.box, closed=True))
    checks["envelope"] = bool(np.allclose(env.values, 0.0))
    rows = [[i, float(v)] for i, v in enumerate(checks.values())]
    return TaskResult(all(checks.values()), {"checks": checks, "poisson_error": err},
                      ["check", "passed"], rows)


RUNNERS = {"solve": task_solve, "verify-barrier": task_verify_barrier, "abp": task_abp,
           "harnack": task_harnack, "holder": task_holder, "envelope": task_envelope}


def write_report(out: Path, task: str, result: TaskResult, seed: int, config_name):
    report = {"task": task, "passed": result.passed, "status": "pass" if result.passed else "fail",
              "seed": int(seed), "config": config_name, "results": _clean(result.results),
              "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    gio.write_series(out / "series.csv", result.series_header, result.series_rows)
    return report


def run(task: str, config=None, out=None, threads: int = 1, seed=None) -> int:
    """Execute one task and return the exit status."""
    if task == "selftest":
        out = Path(out or "selftest-out")
        out.mkdir(parents=True, exist_ok=True)
        res = task_selftest(out, threads)
        write_report(out, task, res, seed or 0, None)
        return 0 if res.passed else 2
    if config is None:
        raise ConfigError("<none>", None, f"task {task!r} needs --config")
    cfg = load_config(config, seed=seed, out_dir=out, task=task)
    out = Path(cfg.out_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    res = RUNNERS[task](cfg, out, max(1, int(threads)))
    write_report(out, task, res, cfg.seed, Path(config).name)
    if res.stdout is not None:
        print(json.dumps(_clean(res.stdout), sort_keys=True))
    return 0 if res.passed else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hjbilab", description=__doc__.splitlines()[0])
    p.add_argument("task", choices=TASKS + ("selftest",))
    p.add_argument("--config", type=Path, help="experiment configuration file")
    p.add_argument("--out", type=Path, help="output directory (default: [output] dir or ./out)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for batched tasks")
    p.add_argument("--seed", type=int, default=None, help="overrides [task] seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args.task, args.config, args.out, args.threads, args.seed)
    except Exception as exc:  # every failure maps to exit status 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
