"""Safe, vectorized closed-form expressions of the point ``x`` (and optionally a jump ``z``).

Grammar: numbers, ``+ - * / ^ **``, parentheses, comparisons, the variables
``x`` (the whole point), ``x1 .. xd`` (coordinates), ``z`` and ``z1 .. zd``
where enabled, the constants ``pi`` and ``e``, ``|...|`` for the Euclidean
norm or absolute value, and the functions ``exp log sqrt sin cos tanh abs
min max`` and ``piecewise(c1, v1, c2, v2, ..., default)``.
"""

from __future__ import annotations

import ast
import math
import re

import numpy as np


class ExpressionError(ValueError):
    """Parse or evaluation failure; parse errors carry the column."""

    def __init__(self, message, position=None):
        where = f" at position {position}" if position is not None else ""
        super().__init__(message + where)
        self.position = position


class _Vec:
    """A point-valued intermediate; only norms and coordinates may consume it."""

    def __init__(self, arr):
        self.arr = arr


_FUNCS = {
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "sin": np.sin, "cos": np.cos,
    "tanh": np.tanh,
}
_CONST = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide,
    ast.Pow: np.power, ast.Mod: np.mod,
}
_CMPOPS = {
    ast.Lt: np.less, ast.LtE: np.less_equal, ast.Gt: np.greater, ast.GtE: np.greater_equal,
    ast.Eq: np.equal, ast.NotEq: np.not_equal,
}
_COORD = re.compile(r"^([xz])(\d+)$")


def _rewrite_pipes(src: str) -> str:
    """Turn ``|a|`` into ``abs(a)``; a pipe opens unless it follows an operand."""
    out, depth = [], 0
    prev = ""
    for ch in src:
        if ch == "|":
            opening = depth == 0 or prev in ("", "(", ",", "+", "-", "*", "/", "^", "<", ">", "=", "|")
            if opening:
                out.append("abs(")
                depth += 1
                prev = "("
            else:
                out.append(")")
                depth -= 1
                prev = ")"
            continue
        out.append(ch)
        if not ch.isspace():
            prev = ch
    if depth != 0:
        raise ExpressionError("unbalanced '|'", len(src))
    return "".join(out)


class Expression:
    """Compiled expression; call with points ``(m, d)`` (and jumps ``(n, d)``).

    Parameters
    ----------
    source : str
    d : int
        Point dimension.
    allow_jump : bool
        Permit the ``z`` variables; the value then has shape ``(m, n)``.
    """

    def __init__(self, source: str, d: int, allow_jump: bool = False):
        self.source = str(source)
        self.d = d
        self.allow_jump = allow_jump
        text = _rewrite_pipes(self.source.replace("^", "**"))
        try:
            tree = ast.parse(text.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.source!r}: {exc.msg}",
                                  (exc.offset or 1) - 1) from None
        self.uses_jump = False
        self._fn = self._compile(tree.body)

    # compile to nested closures over an environment dict
    def _compile(self, node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            v = float(node.value)
            return lambda env: v
        if isinstance(node, ast.Name):
            return self._name(node)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            f = self._compile(node.operand)
            sign = -1.0 if isinstance(node.op, ast.USub) else 1.0
            return lambda env: sign * _scalar(f(env))
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op = _BINOPS[type(node.op)]
            a, b = self._compile(node.left), self._compile(node.right)
            return lambda env: op(_scalar(a(env)), _scalar(b(env)))
        if isinstance(node, ast.Compare) and len(node.ops) == 1 and type(node.ops[0]) in _CMPOPS:
            op = _CMPOPS[type(node.ops[0])]
            a, b = self._compile(node.left), self._compile(node.comparators[0])
            return lambda env: op(_scalar(a(env)), _scalar(b(env))).astype(float)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            return self._call(node)
        raise ExpressionError(f"unsupported syntax in {self.source!r}",
                              getattr(node, "col_offset", None))

    def _name(self, node):
        name = node.id
        if name in _CONST:
            v = _CONST[name]
            return lambda env: v
        if name == "x":
            return lambda env: _Vec(env["x"])
        if name == "z":
            self._need_jump(node)
            return lambda env: _Vec(env["z"])
        m = _COORD.match(name)
        if m:
            var, i = m.group(1), int(m.group(2)) - 1
            if not 0 <= i < self.d:
                raise ExpressionError(f"coordinate {name} out of range for d = {self.d}",
                                      node.col_offset)
            if var == "z":
                self._need_jump(node)
            return lambda env: env[var][..., i]
        raise ExpressionError(f"unknown name {name!r}", node.col_offset)

    def _need_jump(self, node):
        if not self.allow_jump:
            raise ExpressionError("jump variable z is not available here", node.col_offset)
        self.uses_jump = True

    def _call(self, node):
        name = node.func.id
        args = [self._compile(a) for a in node.args]
        if name in _FUNCS:
            if len(args) != 1:
                raise ExpressionError(f"{name} takes one argument", node.col_offset)
            fn, a = _FUNCS[name], args[0]
            return lambda env: fn(_scalar(a(env)))
        if name == "abs":
            if len(args) != 1:
                raise ExpressionError("abs takes one argument", node.col_offset)
            a = args[0]

            def _abs(env):
                v = a(env)
                if isinstance(v, _Vec):
                    return np.linalg.norm(v.arr, axis=-1)
                return np.abs(v)
            return _abs
        if name in ("min", "max"):
            if len(args) < 2:
                raise ExpressionError(f"{name} takes at least two arguments", node.col_offset)
            red = np.minimum if name == "min" else np.maximum

            def _mm(env):
                out = _scalar(args[0](env))
                for a in args[1:]:
                    out = red(out, _scalar(a(env)))
                return out
            return _mm
        if name == "piecewise":
            if len(args) < 3 or len(args) % 2 == 0:
                raise ExpressionError("piecewise takes (cond, value, ..., default)", node.col_offset)

            def _pw(env):
                out = _scalar(args[-1](env))
                # later pairs first so the first true condition wins
                for k in range(len(args) - 3, -1, -2):
                    cond = _scalar(args[k](env)) != 0
                    out = np.where(cond, _scalar(args[k + 1](env)), out)
                return out
            return _pw
        raise ExpressionError(f"unknown function {name!r}", node.col_offset)

    def __call__(self, x, z=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.d:
            x = x.reshape(-1, self.d)
        m = len(x)
        if self.uses_jump:
            if z is None:
                raise ExpressionError("this expression needs jump points z")
            z = np.atleast_2d(np.asarray(z, dtype=float))
            env = {"x": x[:, None, :], "z": z[None, :, :]}
            shape = (m, len(z))
        else:
            env = {"x": x}
            shape = (m,) if z is None else (m, len(np.atleast_2d(z)))
        with np.errstate(all="ignore"):
            val = _scalar(self._fn(env))
        val = np.broadcast_to(np.asarray(val, dtype=float), (m,) if not self.uses_jump else shape)
        if z is not None and not self.uses_jump:
            val = np.broadcast_to(val[:, None], shape)
        if np.isnan(val).any():
            raise ExpressionError(f"{self.source!r} evaluated to NaN")
        return np.array(val)

    def is_constant(self) -> bool:
        return not re.search(r"\b[xz]\d*\b", self.source)

    def __repr__(self):
        return f"Expression({self.source!r}, d={self.d})"


def _scalar(v):
    if isinstance(v, _Vec):
        if v.arr.shape[-1] == 1:
            return v.arr[..., 0]
        raise ExpressionError("a point cannot be used as a number; use |x| or x1, x2, ...")
    return v


def expression_eval(expr: str, x, d: int | None = None) -> float | np.ndarray:
    """Evaluate ``expr`` at one point or a batch of points."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    if d is None:
        d = 1 if arr.ndim == 0 else arr.shape[-1]
    val = Expression(expr, d)(arr.reshape(-1, d))
    return float(val[0]) if single else val
