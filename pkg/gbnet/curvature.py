"""
Second derivatives of the squared error `E = (f(x) - t)**2 / 2` for a single output
with linear, softmax, exponential and cubic activations, the second derivatives
induced by the gradient-boosting deltas, and the local ordering of the leading
terms of those Hessians.

For the softmax the output is written `exp(x) / s`, with the normalization term
`s` held constant.
"""

from dataclasses import dataclass
from math import log
from typing import Callable, cast

import numpy as np
import pandas as pd
import scipy.optimize as spopt

from gbnet.gbutils import ConfigurationError, DomainError, gb_error_abort
from gbnet.heads import HEAD_PRESETS, HeadSpec, head_delta

FD_STEP = 1e-4

ACTIVATION_KINDS = ("linear", "softmax", "exp", "pow3")
GB_SECOND_DERIVATIVE_KINDS = ("exp_gb", "pow3_gb", "softmax_ce")


@dataclass
class CurvaturePoint:
    """a single logit `x`, its target `t`, and the softmax normalization proxy `s > 0`"""

    x: float
    t: float
    s: float = 1.0

    def __post_init__(self) -> None:
        if not self.s > 0.0:
            gb_error_abort(f"s must be positive, not {self.s}", DomainError)


def hessian_linear(p: CurvaturePoint) -> float:
    """`d^2/dx^2` of `(x - t)^2 / 2`: always 1"""
    return 1.0


def hessian_softmax(p: CurvaturePoint) -> float:
    """`e^{2x}/s^2 - (e^x/s)(t - e^x/s)`, the second derivative of `(e^x/s - t)^2 / 2`"""
    y = np.exp(np.float64(p.x)) / p.s
    return float(y * y - y * (p.t - y))


def hessian_exp(p: CurvaturePoint) -> float:
    """`e^{2x} - e^x (t - e^x)`, the second derivative of `(e^x - t)^2 / 2`"""
    y = np.exp(np.float64(p.x))
    return float(y * y - y * (p.t - y))


def hessian_pow3(p: CurvaturePoint) -> float:
    """`9x^4 - 6x(-x^3 + t)`, the second derivative of `(x^3 - t)^2 / 2`"""
    x = np.float64(p.x)
    return float(9.0 * x**4 - 6.0 * x * (-(x**3) + p.t))


HESSIANS: dict[str, Callable[[CurvaturePoint], float]] = {
    "linear": hessian_linear,
    "softmax": hessian_softmax,
    "exp": hessian_exp,
    "pow3": hessian_pow3,
}


def generating_error(kind: str, p: CurvaturePoint) -> float:
    """
    the scalar error whose second derivative the Hessian of `kind` is

    Args:
        kind: `linear`, `softmax`, `exp` or `pow3`
        p: the point

    Returns:
        `(f(x) - t)^2 / 2`, `inf` once it overflows
    """
    x = np.float64(p.x)
    if kind == "linear":
        y = x
    elif kind == "softmax":
        y = np.exp(x) / p.s
    elif kind == "exp":
        y = np.exp(x)
    elif kind == "pow3":
        y = x**3
    else:
        gb_error_abort(f"unknown activation {kind!r}; use one of {ACTIVATION_KINDS}", ConfigurationError)
    return float(0.5 * np.square(y - p.t))


def second_difference(f: Callable[[float], float], x: float, h: float = FD_STEP) -> float:
    """central second difference `(f(x+h) - 2f(x) + f(x-h)) / h^2`"""
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)


def first_difference(f: Callable[[float], float], x: float, h: float = FD_STEP) -> float:
    """central first difference `(f(x+h) - f(x-h)) / 2h`"""
    return (f(x + h) - f(x - h)) / (2.0 * h)


def gb_second_derivative(kind: str, x: float, alpha: float) -> float:
    """
    the derivative of the delta imposed at the logit, i.e. the curvature seen by
    gradient descent with a gradient-boosting head

    Args:
        kind: `exp_gb`, `pow3_gb` or `softmax_ce`
        x: the logit
        alpha: the gain of the head

    Returns:
        `alpha e^x` for `exp_gb`, `3 alpha x^2` for `pow3_gb`,
        and 1 for `softmax_ce` (the constant value stated for cross-entropy)
    """
    if kind == "exp_gb":
        return float(alpha * np.exp(np.float64(x)))
    if kind == "pow3_gb":
        return 3.0 * alpha * x * x
    if kind == "softmax_ce":
        return 1.0
    gb_error_abort(
        f"unknown kind {kind!r}; use one of {GB_SECOND_DERIVATIVE_KINDS}", ConfigurationError
    )
    return 0.0  # for mypy


def numerical_gb_second_derivative(spec: HeadSpec, x: float, h: float = FD_STEP) -> float:
    """central difference of the scalar delta `head_delta([x], [0], spec)` with respect to `x`"""

    def delta_at(z: float) -> float:
        return float(head_delta(np.array([z]), np.array([0.0]), spec)[0])

    return first_difference(delta_at, x, h)


@dataclass
class OrderingReport:
    """
    the four leading terms `9x^4, e^{2x}, e^{2x}/s^2, 1` on a grid

    Attributes:
        s: the normalization term
        x_grid: the grid
        terms: `(n_points, 4)` array of the four terms
        holds: per point, whether the strict chain holds
        window: the longest run of consecutive grid points where it holds, as
            `(x_first, x_last)`, or `None`
    """

    s: float
    x_grid: np.ndarray
    terms: np.ndarray
    holds: np.ndarray
    window: tuple[float, float] | None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "x": self.x_grid,
                "pow3_term": self.terms[:, 0],
                "exp_term": self.terms[:, 1],
                "softmax_term": self.terms[:, 2],
                "linear_term": self.terms[:, 3],
                "chain_holds": self.holds.astype(int),
            }
        )


def first_term_ordering(x_grid: list[float] | np.ndarray, s: float) -> OrderingReport:
    """
    check `9x^4 > e^{2x} > e^{2x}/s^2 > 1` at each grid point

    Args:
        x_grid: a non-empty list of logits
        s: the normalization term, `s > 1`

    Returns:
        the OrderingReport; the chain only holds on a bounded window
    """
    if not s > 1.0:
        gb_error_abort(f"s must be larger than 1, not {s}", DomainError)
    xs = np.asarray(x_grid, dtype=np.float64).ravel()
    if xs.size == 0:
        gb_error_abort("the grid is empty", DomainError)
    with np.errstate(over="ignore"):
        pow3_term = 9.0 * xs**4
        exp_term = np.exp(2.0 * xs)
    softmax_term = exp_term / (s * s)
    linear_term = np.ones_like(xs)
    terms = np.column_stack((pow3_term, exp_term, softmax_term, linear_term))
    holds = (pow3_term > exp_term) & (exp_term > softmax_term) & (softmax_term > linear_term)

    best: tuple[int, int] | None = None
    start: int | None = None
    for i, h in enumerate(list(holds) + [False]):
        if h and start is None:
            start = i
        elif not h and start is not None:
            if best is None or i - start > best[1] - best[0] + 1:
                best = (start, i - 1)
            start = None
    window = None if best is None else (float(xs[best[0]]), float(xs[best[1]]))
    return OrderingReport(s=s, x_grid=xs, terms=terms, holds=holds, window=window)


def ordering_window(s: float) -> tuple[float, float] | None:
    """
    the exact open interval of positive `x` on which the strict chain holds

    Args:
        s: the normalization term, `s > 1`

    Returns:
        `(lo, hi)`, where `hi` is the largest root of `9x^4 = e^{2x}` and `lo` is the
        larger of `ln s` and the smaller positive root; `None` if the interval is empty
    """
    if not s > 1.0:
        gb_error_abort(f"s must be larger than 1, not {s}", DomainError)

    def gap(x: float) -> float:
        # log(9x^4) - 2x; positive where 9x^4 > e^{2x}
        return log(9.0) + 4.0 * log(x) - 2.0 * x

    # gap increases up to x = 2 and decreases afterwards
    root_low = cast(float, spopt.brentq(gap, 1e-6, 2.0))
    root_high = cast(float, spopt.brentq(gap, 2.0, 50.0))
    lo = max(root_low, log(s))
    if lo >= root_high:
        return None
    return lo, root_high


def hessian_table(points: list[CurvaturePoint], h: float = FD_STEP) -> pd.DataFrame:
    """
    closed-form Hessians against central second differences of their generating errors,
    and the second derivatives of the `exp_gb` and `pow3_gb` potentials against central
    differences of their deltas (with the preset gains)

    Args:
        points: where to evaluate
        h: the finite-difference step

    Returns:
        a data frame with columns `kind, x, t, s, closed_form, finite_difference, rel_error`;
        `rel_error` is `|a - b| / max(|a|, |b|, 1)`; past the overflow of `e^{2x}` the
        closed forms are `inf` and the differences `nan`
    """
    rows = []
    with np.errstate(over="ignore", invalid="ignore"):
        for p in points:
            rows.extend(_table_rows(p, h))
    return pd.DataFrame(
        rows,
        columns=["kind", "x", "t", "s", "closed_form", "finite_difference", "rel_error"],
    )


def _table_rows(p: CurvaturePoint, h: float) -> list[tuple]:
    rows: list[tuple] = []
    for kind, hess in HESSIANS.items():

        def err(z: float, kind: str = kind, p: CurvaturePoint = p) -> float:
            return generating_error(kind, CurvaturePoint(x=z, t=p.t, s=p.s))

        closed = hess(p)
        numeric = second_difference(err, p.x, h)
        rows.append((kind, p.x, p.t, p.s, closed, numeric, _rel(closed, numeric)))
    for kind in ("exp_gb", "pow3_gb"):
        spec = HEAD_PRESETS[kind]
        closed = gb_second_derivative(kind, p.x, cast(float, spec.alpha))
        numeric = numerical_gb_second_derivative(spec, p.x, h)
        rows.append((kind, p.x, p.t, p.s, closed, numeric, _rel(closed, numeric)))
    return rows


def _rel(a: float, b: float) -> float:
    # unit floor: some Hessians cross zero
    return abs(a - b) / max(abs(a), abs(b), 1.0)
