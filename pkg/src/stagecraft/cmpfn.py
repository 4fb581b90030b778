"""Closed algebra of comparison functions.

Scalar comparison functions are expression trees over a fixed primitive
set (identity, power, linear, const, sum, product, scale, compose,
pointwise min, inverse-of, monotone table), so class membership is
decided by construction instead of by probing arbitrary callables.
Two wrappers are exposed for one-argument functions:

* ``KInfFn``: zero at zero, strictly increasing, unbounded.
* ``NonnegFn``: merely nonnegative, with an optional positive-definite
  flag.  Every ``KInfFn`` is usable as a ``NonnegFn``.

Two-argument decay bounds ``(r, t) -> value`` come in two forms:
``SeparableKL`` (``outer(decay**t * inner(r))``) and ``SampledKL`` (a
validated grid with interpolation in ``r`` and geometric extrapolation
in ``t``).  ``kl_decompose`` rewrites any of them as a separable bound
with a prescribed decay rate, which is the workhorse behind stage-cost
synthesis.

Evaluation accepts scalars or numpy arrays.  Numeric inversion is a
bracketed bisection vectorised over query points; structurally
invertible trees (powers, linear maps, tables, compositions of those)
take an exact shortcut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DecompositionError,
    DomainError,
    InvariantViolation,
    InversionError,
    KLValidityError,
    MonotoneInputError,
    ParameterError,
)

__all__ = [
    "KInfFn",
    "NonnegFn",
    "KLFn",
    "SeparableKL",
    "SampledKL",
    "identity",
    "power",
    "linear",
    "const_fn",
    "table_fn",
    "scale",
    "compose",
    "combine",
    "pointwise_min",
    "inverse_of",
    "evaluate",
    "invert",
    "weak_triangle_split",
    "kl_decompose",
    "sample_kl",
    "scale_kl",
    "fn_from_json",
    "kl_from_json",
    "DEFAULT_R_GRID",
    "DEFAULT_T_GRID",
]

# Shared validation grid: 64 log-spaced magnitudes crossed with integer
# steps 0..64.  Grid-based checks and decompositions default to it.
DEFAULT_R_GRID = np.logspace(-4.0, 4.0, 64)
DEFAULT_T_GRID = np.arange(65, dtype=float)

_INVERT_BRACKET_CAP = 200
_INVERT_MAX_BISECT = 800
_INVERT_REL_TOL = 1e-12
_ENVELOPE_EPS = 1e-9


def _errstate():
    return np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore")


def _finite_positive(value, name):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ParameterError(f"{name} must be a finite positive number, got {value!r}")
    return float(value)


# ---------------------------------------------------------------------------
# expression tree nodes
# ---------------------------------------------------------------------------


class Expr:
    """Marker base class for expression-tree nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class Identity(Expr):
    pass


@dataclass(frozen=True)
class Power(Expr):
    p: float

    def __post_init__(self):
        _finite_positive(self.p, "power exponent")


@dataclass(frozen=True)
class Linear(Expr):
    c: float

    def __post_init__(self):
        _finite_positive(self.c, "linear slope")


@dataclass(frozen=True)
class Const(Expr):
    c: float

    def __post_init__(self):
        if not (isinstance(self.c, (int, float)) and math.isfinite(self.c) and self.c >= 0):
            raise ParameterError(f"const value must be finite and nonnegative, got {self.c!r}")


@dataclass(frozen=True)
class Scale(Expr):
    c: float
    inner: Expr

    def __post_init__(self):
        _finite_positive(self.c, "scale factor")


@dataclass(frozen=True)
class Sum(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Product(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Min(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Compose(Expr):
    outer: Expr
    inner: Expr


@dataclass(frozen=True)
class InverseOf(Expr):
    inner: Expr


@dataclass(frozen=True, eq=False)
class Table(Expr):
    """Strictly increasing piecewise-linear interpolant through (0, 0).

    Beyond the last knot the final segment is continued with its own
    slope, which keeps the interpolant strictly increasing and unbounded.
    """

    xs: tuple
    ys: tuple
    _xa: np.ndarray = field(init=False, repr=False, compare=False)
    _ya: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
            raise MonotoneInputError("table needs matching 1-d knot arrays with >= 2 points")
        if xs[0] != 0.0 or ys[0] != 0.0:
            raise MonotoneInputError("table must start at the origin")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise MonotoneInputError("table knots must be finite")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise MonotoneInputError("table knots must be strictly increasing in both coordinates")
        object.__setattr__(self, "xs", tuple(float(v) for v in xs))
        object.__setattr__(self, "ys", tuple(float(v) for v in ys))
        object.__setattr__(self, "_xa", xs)
        object.__setattr__(self, "_ya", ys)


def _interp_extend(q, xs, ys):
    """np.interp plus linear continuation of the last segment."""
    out = np.interp(q, xs, ys)
    hi = q > xs[-1]
    if np.any(hi):
        slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        out = np.where(hi, ys[-1] + slope * (q - xs[-1]), out)
    return out


def _eval(expr, r):
    if isinstance(expr, Identity):
        return r
    if isinstance(expr, Power):
        return r ** expr.p
    if isinstance(expr, Linear):
        return expr.c * r
    if isinstance(expr, Const):
        return np.full_like(r, expr.c)
    if isinstance(expr, Scale):
        return expr.c * _eval(expr.inner, r)
    if isinstance(expr, Sum):
        return _eval(expr.left, r) + _eval(expr.right, r)
    if isinstance(expr, Product):
        return _eval(expr.left, r) * _eval(expr.right, r)
    if isinstance(expr, Min):
        return np.minimum(_eval(expr.left, r), _eval(expr.right, r))
    if isinstance(expr, Compose):
        return _eval(expr.outer, _eval(expr.inner, r))
    if isinstance(expr, InverseOf):
        return _invert(expr.inner, r)
    if isinstance(expr, Table):
        return _interp_extend(r, expr._xa, expr._ya)
    raise ParameterError(f"unknown expression node {type(expr).__name__}")


def _invert(expr, y):
    if isinstance(expr, Identity):
        return y
    if isinstance(expr, Power):
        return y ** (1.0 / expr.p)
    if isinstance(expr, Linear):
        return y / expr.c
    if isinstance(expr, Scale):
        return _invert(expr.inner, y / expr.c)
    if isinstance(expr, Compose):
        return _invert(expr.inner, _invert(expr.outer, y))
    if isinstance(expr, InverseOf):
        return _eval(expr.inner, y)
    if isinstance(expr, Table):
        return _interp_extend(y, expr._ya, expr._xa)
    return _invert_numeric(expr, y)


def _invert_numeric(expr, y):
    """Bracket [0, hi] by doubling, then bisect, vectorised over y."""
    y = np.asarray(y, dtype=float)
    hi = np.ones_like(y)
    for _ in range(_INVERT_BRACKET_CAP):
        short = _eval(expr, hi) < y
        if not np.any(short):
            break
        hi = np.where(short, 2.0 * hi, hi)
    else:
        raise InversionError(
            "bracket expansion hit the doubling cap; the function never reaches the target"
        )
    lo = np.zeros_like(y)
    live = y > 0.0
    for _ in range(_INVERT_MAX_BISECT):
        if not np.any(live):
            break
        mid = 0.5 * (lo + hi)
        below = _eval(expr, mid) < y
        lo = np.where(live & below, mid, lo)
        hi = np.where(live & ~below, mid, hi)
        live = live & (hi - lo > _INVERT_REL_TOL * hi)
    out = 0.5 * (lo + hi)
    return np.where(y == 0.0, 0.0, out)


# ---------------------------------------------------------------------------
# structural class checks
# ---------------------------------------------------------------------------


def _require_kinf(expr):
    """Raise unless every node preserves zero-at-zero + strict growth."""
    if isinstance(expr, (Identity, Power, Linear, Table)):
        return
    if isinstance(expr, Const):
        raise ParameterError("a constant node cannot appear in an unbounded strictly increasing tree")
    if isinstance(expr, Scale):
        _require_kinf(expr.inner)
        return
    if isinstance(expr, (Sum, Product, Min)):
        _require_kinf(expr.left)
        _require_kinf(expr.right)
        return
    if isinstance(expr, Compose):
        _require_kinf(expr.outer)
        _require_kinf(expr.inner)
        return
    if isinstance(expr, InverseOf):
        _require_kinf(expr.inner)
        return
    raise ParameterError(f"unknown expression node {type(expr).__name__}")


def _require_nonneg(expr):
    if isinstance(expr, (Identity, Power, Linear, Const, Table)):
        return
    if isinstance(expr, Scale):
        _require_nonneg(expr.inner)
        return
    if isinstance(expr, (Sum, Product, Min)):
        _require_nonneg(expr.left)
        _require_nonneg(expr.right)
        return
    if isinstance(expr, Compose):
        _require_nonneg(expr.outer)
        _require_nonneg(expr.inner)
        return
    if isinstance(expr, InverseOf):
        # only meaningful for invertible trees
        _require_kinf(expr.inner)
        return
    raise ParameterError(f"unknown expression node {type(expr).__name__}")


# ---------------------------------------------------------------------------
# wrappers
# ---------------------------------------------------------------------------


class NonnegFn:
    """Nonnegative scalar function backed by an expression tree."""

    __slots__ = ("expr", "positive_definite")

    def __init__(self, expr, positive_definite=False):
        _require_nonneg(expr)
        self.expr = expr
        self.positive_definite = bool(positive_definite)

    def eval(self, r):
        arr = np.asarray(r, dtype=float)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise DomainError(f"comparison functions are defined on [0, inf), got {r!r}")
        with _errstate():
            out = _eval(self.expr, arr)
        if np.isscalar(r) or arr.ndim == 0:
            return float(out)
        return out

    __call__ = eval

    def selfcheck(self, grid=None):
        """Verify declared properties on a grid; raise on violation."""
        grid = DEFAULT_R_GRID if grid is None else np.asarray(grid, dtype=float)
        vals = self.eval(grid)
        if np.any(vals < 0):
            raise InvariantViolation("negative value on the check grid")
        if self.positive_definite:
            if abs(self.eval(0.0)) > 1e-12:
                raise InvariantViolation("positive-definite function must vanish at zero")
            if np.any(vals[grid > 0] <= 0):
                raise InvariantViolation("positive-definite function must be positive off zero")
        return self

    def to_json(self):
        return {
            "kind": "nonneg",
            "positive_definite": self.positive_definite,
            "expr": _expr_to_obj(self.expr),
        }

    def __repr__(self):
        return f"{type(self).__name__}({_expr_repr(self.expr)})"


class KInfFn(NonnegFn):
    """Strictly increasing, unbounded, zero at zero."""

    __slots__ = ()

    def __init__(self, expr):
        _require_kinf(expr)
        super().__init__(expr, positive_definite=True)

    def invert(self, y):
        arr = np.asarray(y, dtype=float)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise DomainError(f"inverse queries must be finite and nonnegative, got {y!r}")
        with _errstate():
            out = _invert(self.expr, arr)
        if np.isscalar(y) or arr.ndim == 0:
            return float(out)
        return out

    def inverse(self):
        return KInfFn(InverseOf(self.expr))

    def selfcheck(self, grid=None):
        grid = DEFAULT_R_GRID if grid is None else np.asarray(grid, dtype=float)
        if abs(self.eval(0.0)) > 1e-12:
            raise InvariantViolation("value at zero exceeds 1e-12")
        vals = self.eval(grid)
        if np.any(np.diff(vals) <= 0):
            raise InvariantViolation("not strictly increasing on the check grid")
        _assert_unbounded(self, start=float(grid[-1]))
        return self

    def to_json(self):
        return {"kind": "kinf", "expr": _expr_to_obj(self.expr)}


def _assert_unbounded(f, start=1.0, factor=4.0, doublings=400):
    """Check that eval passes an expanding sequence of targets."""
    probe = max(1.0, start)
    target = factor * max(1.0, f.eval(probe))
    for _ in range(doublings):
        probe *= 2.0
        if f.eval(probe) >= target:
            return
    raise InvariantViolation("function failed to pass an expanding growth target")


# ---------------------------------------------------------------------------
# constructors / operations
# ---------------------------------------------------------------------------


def identity():
    return KInfFn(Identity())


def power(p):
    return KInfFn(Power(float(p)))


def linear(c):
    return KInfFn(Linear(float(c)))


def const_fn(c):
    return NonnegFn(Const(float(c)), positive_definite=False)


def table_fn(xs, ys):
    """Strictly monotone interpolant; a leading (0, 0) knot is implied."""
    xs = [float(v) for v in xs]
    ys = [float(v) for v in ys]
    if xs and xs[0] > 0.0:
        xs = [0.0] + xs
        ys = [0.0] + ys
    return KInfFn(Table(tuple(xs), tuple(ys)))


def _wrap(expr, *parts, positive_definite=None):
    """Return a KInfFn when all parts are, otherwise a NonnegFn."""
    if all(isinstance(p, KInfFn) for p in parts):
        return KInfFn(expr)
    if positive_definite is None:
        positive_definite = all(p.positive_definite for p in parts)
    return NonnegFn(expr, positive_definite=positive_definite)


def scale(c, f):
    c = _finite_positive(c, "scale factor")
    return _wrap(Scale(c, f.expr), f)


def compose(f, g):
    """Pointwise composition r -> f(g(r))."""
    return _wrap(Compose(f.expr, g.expr), f, g)


def pointwise_min(f, g):
    return _wrap(Min(f.expr, g.expr), f, g)


def inverse_of(f):
    if not isinstance(f, KInfFn):
        raise ParameterError("only strictly increasing unbounded functions can be inverted")
    return f.inverse()


def combine(f, g, mode, c1=1.0, c2=1.0):
    """Weighted pointwise combination c1*f (op) c2*g for op in sum/product/min."""
    c1 = _finite_positive(c1, "first combination weight")
    c2 = _finite_positive(c2, "second combination weight")
    left = Scale(c1, f.expr) if c1 != 1.0 else f.expr
    right = Scale(c2, g.expr) if c2 != 1.0 else g.expr
    if mode == "sum":
        expr = Sum(left, right)
        pd = f.positive_definite or g.positive_definite
    elif mode == "product":
        expr = Product(left, right)
        pd = f.positive_definite and g.positive_definite
    elif mode == "min":
        expr = Min(left, right)
        pd = f.positive_definite and g.positive_definite
    else:
        raise ParameterError(f"unknown combination mode {mode!r}")
    return _wrap(expr, f, g, positive_definite=pd)


def evaluate(f, r):
    return f.eval(r)


def invert(f, y):
    if not isinstance(f, KInfFn):
        raise ParameterError("invert expects a strictly increasing unbounded function")
    return f.invert(y)


def weak_triangle_split(alpha, a, b):
    """Split alpha(a + b) into the dominating pair (alpha(2a), alpha(2b))."""
    if a < 0 or b < 0:
        raise DomainError("split arguments must be nonnegative")
    return alpha.eval(2.0 * a), alpha.eval(2.0 * b)


def strict_table(xs, ys):
    """Monotone table through the data, repaired to strict increase.

    Duplicate abscissae keep their largest ordinate, ordinates are
    pushed up to a running maximum, and exact ties are separated by the
    smallest representable step so the result is a valid table node
    while never dropping below the input points.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    order = np.argsort(xs, kind="stable")
    xs, ys = xs[order], ys[order]
    keep_x, keep_y = [], []
    for x, y in zip(xs, ys):
        if keep_x and x == keep_x[-1]:
            keep_y[-1] = max(keep_y[-1], y)
        else:
            keep_x.append(x)
            keep_y.append(y)
    if not keep_x or keep_x[0] > 0.0:
        keep_x.insert(0, 0.0)
        keep_y.insert(0, 0.0)
    ys_out = np.maximum.accumulate(np.asarray(keep_y))
    for i in range(1, ys_out.size):
        if ys_out[i] <= ys_out[i - 1]:
            ys_out[i] = np.nextafter(ys_out[i - 1], np.inf)
    return KInfFn(Table(tuple(keep_x), tuple(float(v) for v in ys_out)))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _expr_to_obj(expr):
    if isinstance(expr, Identity):
        return {"op": "identity"}
    if isinstance(expr, Power):
        return {"op": "power", "p": expr.p}
    if isinstance(expr, Linear):
        return {"op": "linear", "c": expr.c}
    if isinstance(expr, Const):
        return {"op": "const", "c": expr.c}
    if isinstance(expr, Scale):
        return {"op": "scale", "c": expr.c, "inner": _expr_to_obj(expr.inner)}
    if isinstance(expr, Sum):
        return {"op": "sum", "left": _expr_to_obj(expr.left), "right": _expr_to_obj(expr.right)}
    if isinstance(expr, Product):
        return {"op": "product", "left": _expr_to_obj(expr.left), "right": _expr_to_obj(expr.right)}
    if isinstance(expr, Min):
        return {"op": "min", "left": _expr_to_obj(expr.left), "right": _expr_to_obj(expr.right)}
    if isinstance(expr, Compose):
        return {"op": "compose", "outer": _expr_to_obj(expr.outer), "inner": _expr_to_obj(expr.inner)}
    if isinstance(expr, InverseOf):
        return {"op": "inverse_of", "inner": _expr_to_obj(expr.inner)}
    if isinstance(expr, Table):
        return {"op": "table", "x": list(expr.xs), "y": list(expr.ys)}
    raise ParameterError(f"unknown expression node {type(expr).__name__}")


def _expr_from_obj(obj):
    if not isinstance(obj, dict) or "op" not in obj:
        raise ParameterError(f"expression object must be a dict with an 'op' key, got {obj!r}")
    op = obj["op"]
    try:
        if op == "identity":
            return Identity()
        if op == "power":
            return Power(float(obj["p"]))
        if op == "linear":
            return Linear(float(obj["c"]))
        if op == "const":
            return Const(float(obj["c"]))
        if op == "scale":
            return Scale(float(obj["c"]), _expr_from_obj(obj["inner"]))
        if op == "sum":
            return Sum(_expr_from_obj(obj["left"]), _expr_from_obj(obj["right"]))
        if op == "product":
            return Product(_expr_from_obj(obj["left"]), _expr_from_obj(obj["right"]))
        if op == "min":
            return Min(_expr_from_obj(obj["left"]), _expr_from_obj(obj["right"]))
        if op == "compose":
            return Compose(_expr_from_obj(obj["outer"]), _expr_from_obj(obj["inner"]))
        if op == "inverse_of":
            return InverseOf(_expr_from_obj(obj["inner"]))
        if op == "table":
            return Table(tuple(float(v) for v in obj["x"]), tuple(float(v) for v in obj["y"]))
    except KeyError as exc:
        raise ParameterError(f"expression op {op!r} is missing field {exc}") from exc
    raise ParameterError(f"unknown expression op {op!r}")


def fn_from_json(obj):
    """Rebuild a one-argument comparison function from its JSON form."""
    kind = obj.get("kind") if isinstance(obj, dict) else None
    if kind == "kinf":
        return KInfFn(_expr_from_obj(obj["expr"]))
    if kind == "nonneg":
        return NonnegFn(_expr_from_obj(obj["expr"]), positive_definite=bool(obj.get("positive_definite")))
    raise ParameterError(f"unknown function kind {kind!r}")


def _expr_repr(expr):
    return _expr_to_obj(expr).__repr__()


# ---------------------------------------------------------------------------
# two-argument decay bounds
# ---------------------------------------------------------------------------


class KLFn:
    """Base class for bounds beta(r, t): increasing in r, decaying in t."""

    __slots__ = ()

    def eval(self, r, t):
        raise NotImplementedError

    __call__ = eval

    def to_json(self):
        raise NotImplementedError


@dataclass(frozen=True)
class SeparableKL(KLFn):
    """beta(r, t) = outer(decay**t * inner(r)) with decay in (0, 1)."""

    outer: KInfFn
    decay: float
    inner: KInfFn

    def __post_init__(self):
        if not (isinstance(self.outer, KInfFn) and isinstance(self.inner, KInfFn)):
            raise ParameterError("separable bounds need strictly increasing unbounded factors")
        if not (0.0 < self.decay < 1.0):
            raise ParameterError(f"decay rate must lie in (0, 1), got {self.decay!r}")

    def eval(self, r, t):
        if np.any(np.asarray(t) < 0):
            raise DomainError("time argument must be nonnegative")
        return self.outer.eval(self.decay ** np.asarray(t, dtype=float) * self.inner.eval(r))

    __call__ = eval

    def to_json(self):
        return {
            "kind": "kl.separable",
            "outer": self.outer.to_json(),
            "decay": self.decay,
            "inner": self.inner.to_json(),
        }


@dataclass(frozen=True, eq=False)
class SampledKL(KLFn):
    """Grid-backed decay bound.

    Values are linearly interpolated in ``r`` (anchored at the origin
    and continued with the last slope above the grid) and in ``t``
    within the grid; past the last time column each row decays
    geometrically with the ratio of its final two columns.
    """

    r_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r_grid, dtype=float)
        t = np.asarray(self.t_grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or t.ndim != 1 or v.shape != (r.size, t.size):
            raise KLValidityError("grid shapes disagree: values must be (len(r_grid), len(t_grid))")
        if r.size < 2 or t.size < 2:
            raise KLValidityError("grids need at least two points per axis")
        if np.any(r < 0) or np.any(np.diff(r) <= 0):
            raise KLValidityError("r grid must be nonnegative and strictly increasing")
        if np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise KLValidityError("t grid must be nonnegative and strictly increasing")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise KLValidityError("values must be finite and nonnegative")
        dr = np.diff(v, axis=0)
        if np.any(dr <= 0):
            i, j = np.argwhere(dr <= 0)[0]
            raise KLValidityError(
                f"values must strictly increase in r; violated between rows {i} and {i + 1} at column {j}"
            )
        rows = v[r > 0]
        dt = np.diff(rows, axis=1)
        if np.any(dt >= 0):
            i, j = np.argwhere(dt >= 0)[0]
            raise KLValidityError(
                f"values must strictly decrease in t for r > 0; violated at row {i}, columns {j}..{j + 1}"
            )
        object.__setattr__(self, "r_grid", r)
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "values", v)

    def _column(self, t):
        """Values over r_grid at time t."""
        tg, v = self.t_grid, self.values
        if t <= tg[-1]:
            j = np.searchsorted(tg, t)
            if j < tg.size and tg[j] == t:
                return v[:, j]
            w = (t - tg[j - 1]) / (tg[j] - tg[j - 1])
            return (1.0 - w) * v[:, j - 1] + w * v[:, j]
        last, prev = v[:, -1], v[:, -2]
        with _errstate():
            ratio = np.where(prev > 0, last / prev, 0.0)
        ratio = np.clip(ratio, 0.0, 1.0 - 1e-12)
        return last * ratio ** (t - tg[-1])

    def eval(self, r, t):
        if r < 0 or t < 0:
            raise DomainError("decay bounds are defined on [0, inf) x [0, inf)")
        col = self._column(float(t))
        rg = self.r_grid
        if rg[0] > 0.0:
            rg = np.concatenate(([0.0], rg))
            col = np.concatenate(([0.0], col))
        return float(_interp_extend(np.asarray(r, dtype=float), rg, col))

    __call__ = eval

    def to_json(self):
        return {
            "kind": "kl.sampled",
            "r_grid": [float(x) for x in self.r_grid],
            "t_grid": [float(x) for x in self.t_grid],
            "values": [[float(x) for x in row] for row in self.values],
        }


def kl_from_json(obj):
    kind = obj.get("kind") if isinstance(obj, dict) else None
    if kind == "kl.separable":
        return SeparableKL(
            outer=fn_from_json(obj["outer"]),
            decay=float(obj["decay"]),
            inner=fn_from_json(obj["inner"]),
        )
    if kind == "kl.sampled":
        return SampledKL(
            r_grid=np.asarray(obj["r_grid"], dtype=float),
            t_grid=np.asarray(obj["t_grid"], dtype=float),
            values=np.asarray(obj["values"], dtype=float),
        )
    raise ParameterError(f"unknown decay-bound kind {kind!r}")


def sample_kl(fn, r_grid=None, t_grid=None):
    """Tabulate a callable (r, t) -> value into a validated SampledKL."""
    r_grid = DEFAULT_R_GRID if r_grid is None else np.asarray(r_grid, dtype=float)
    t_grid = DEFAULT_T_GRID if t_grid is None else np.asarray(t_grid, dtype=float)
    vals = np.array([[float(fn(r, t)) for t in t_grid] for r in r_grid])
    return SampledKL(r_grid=r_grid, t_grid=t_grid, values=vals)


def scale_kl(beta, c):
    """Pointwise scaling c * beta, staying within the same representation."""
    c = _finite_positive(c, "bound scale")
    if isinstance(beta, SeparableKL):
        return SeparableKL(outer=scale(c, beta.outer), decay=beta.decay, inner=beta.inner)
    if isinstance(beta, SampledKL):
        return SampledKL(r_grid=beta.r_grid, t_grid=beta.t_grid, values=c * beta.values)
    raise ParameterError(f"unknown decay-bound type {type(beta).__name__}")


def kl_grid_violations(beta, r_grid=None, t_grid=None):
    """Grid report of shape violations; empty means the bound looks valid."""
    r_grid = DEFAULT_R_GRID if r_grid is None else np.asarray(r_grid, dtype=float)
    t_grid = DEFAULT_T_GRID if t_grid is None else np.asarray(t_grid, dtype=float)
    vals = np.array([[beta.eval(r, t) for t in t_grid] for r in r_grid])
    bad = []
    if np.any(np.diff(vals, axis=0) <= 0):
        bad.append("not strictly increasing in r")
    rows = vals[r_grid > 0]
    if np.any(np.diff(rows, axis=1) >= 0):
        bad.append("not strictly decreasing in t for r > 0")
    tail = rows[:, -1]
    head = rows[:, 0]
    if np.any(tail >= head):
        bad.append("no decay over the horizon")
    return bad


# ---------------------------------------------------------------------------
# separable decomposition
# ---------------------------------------------------------------------------


def kl_decompose(beta, decay=0.5, r_grid=None, t_grid=None, slack=_ENVELOPE_EPS):
    """Dominate a decay bound by a separable one with the given rate.

    A separable input whose rate already matches is returned unchanged.
    Otherwise the inner gauge is the t = 0 slice plus the identity (a
    strict-increase repair), and the outer warp is the strictly
    increasing upper envelope of the scatter
    ``(decay**t * inner(r), beta(r, t))`` over the grid, lifted by a
    relative margin so envelope domination survives interpolation.
    Domination is re-verified on the grid before returning.
    """
    if not (0.0 < decay < 1.0):
        raise ParameterError(f"decay rate must lie in (0, 1), got {decay!r}")
    if isinstance(beta, SeparableKL) and beta.decay == decay:
        return beta
    if isinstance(beta, SampledKL):
        r_grid = beta.r_grid if r_grid is None else np.asarray(r_grid, dtype=float)
        t_grid = beta.t_grid if t_grid is None else np.asarray(t_grid, dtype=float)
    else:
        r_grid = DEFAULT_R_GRID if r_grid is None else np.asarray(r_grid, dtype=float)
        t_grid = DEFAULT_T_GRID if t_grid is None else np.asarray(t_grid, dtype=float)

    base = np.array([beta.eval(r, 0.0) for r in r_grid])
    inner = combine(strict_table(r_grid, base), identity(), "sum")

    inner_vals = inner.eval(r_grid)
    weights = decay ** t_grid
    cloud_s = (inner_vals[:, None] * weights[None, :]).ravel()
    cloud_v = np.array([[beta.eval(r, t) for t in t_grid] for r in r_grid]).ravel()

    order = np.argsort(cloud_s, kind="stable")
    s_sorted, v_sorted = cloud_s[order], cloud_v[order]
    xs, vs = [], []
    for s, v in zip(s_sorted, v_sorted):
        if xs and s == xs[-1]:
            vs[-1] = max(vs[-1], v)
        else:
            xs.append(s)
            vs.append(v)
    env = np.maximum.accumulate(np.asarray(vs))
    outer = strict_table(np.asarray(xs), env + _ENVELOPE_EPS * np.asarray(xs))

    result = SeparableKL(outer=outer, decay=decay, inner=inner)
    worst = -np.inf
    for i, r in enumerate(r_grid):
        lhs = np.array([beta.eval(r, t) for t in t_grid])
        rhs = outer.eval(weights * inner_vals[i])
        worst = max(worst, float(np.max(lhs - rhs)))
    if worst > slack:
        raise DecompositionError(
            f"envelope fails to dominate the input bound on the grid by {worst:.3e}"
        )
    return result
