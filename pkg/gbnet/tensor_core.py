"""
Dense tensor arithmetic and reductions used by every other module.

A tensor is a `numpy` array of 64-bit floats in row-major (C) order; batch-first
shape conventions follow from that layout. Every operation returns a fresh array
and never modifies its inputs.
"""

from typing import Any, Callable, Literal, cast

import numpy as np
from scipy.special import expit

from gbnet.gbutils import ConfigurationError, DimensionError, DomainError, gb_error_abort

Tensor = np.ndarray
TwoArrays = tuple[np.ndarray, np.ndarray]
ThreeArrays = tuple[np.ndarray, np.ndarray, np.ndarray]
ArrayFunctionOfArray = Callable[[np.ndarray], np.ndarray]

ReduceOp = Literal["sum", "mean", "max", "argmax"]


def as_tensor(data: Any, shape: tuple[int, ...] | None = None) -> Tensor:
    """
    make a float64, C-ordered tensor from `data`

    Args:
        data: anything `np.asarray` accepts
        shape: if given, the flat data is reshaped to it; `product(shape)` must equal the size

    Returns:
        a fresh tensor
    """
    arr = np.array(data, dtype=np.float64, order="C")
    if shape is not None:
        if any(d <= 0 for d in shape):
            gb_error_abort(f"dimensions must be positive, not {shape}", DimensionError)
        if int(np.prod(shape)) != arr.size:
            gb_error_abort(
                f"shape {shape} holds {int(np.prod(shape))} values, data has {arr.size}",
                DimensionError,
            )
        arr = arr.reshape(shape)
    return arr


def check_vector(v: Any, fun_name: str | None = None) -> int:
    """
    test that `v` is a vector

    Args:
        v: a vector, we hope
        fun_name: name of the calling function

    Returns:
        the size if successful
    """
    fun_str = "" if fun_name is None else fun_name + ": "
    if not isinstance(v, np.ndarray):
        gb_error_abort(f"{fun_str}v should be a Numpy array", DimensionError)
    if v.ndim != 1:
        gb_error_abort(f"{fun_str}v should have one dimension, not {v.ndim}", DimensionError)
    return cast(int, v.size)


def check_matrix(x: Any, fun_name: str | None = None) -> tuple[int, int]:
    """
    test that `x` is a matrix

    Args:
        x: a matrix, we hope
        fun_name: name of the calling function

    Returns:
        the shape if successful
    """
    fun_str = "" if fun_name is None else fun_name + ": "
    if not isinstance(x, np.ndarray):
        gb_error_abort(f"{fun_str}x should be a Numpy array", DimensionError)
    if x.ndim != 2:
        gb_error_abort(f"{fun_str}x should have two dimensions, not {x.ndim}", DimensionError)
    return cast(tuple[int, int], x.shape)


def check_tensor(x: Any, n_dims: int, fun_name: str | None = None) -> tuple[int, ...]:
    """
    test that `x` is an `n_dims` dimensional array

    Args:
        x: an `n_dims` dimensional array, we hope
        n_dims: the number of dimensions required
        fun_name: name of the calling function

    Returns:
        the shape if successful
    """
    fun_str = "" if fun_name is None else fun_name + ": "
    if not isinstance(x, np.ndarray):
        gb_error_abort(f"{fun_str}x should be a Numpy array", DimensionError)
    if x.ndim != n_dims:
        gb_error_abort(
            f"{fun_str}x should have {n_dims} dimensions, not {x.ndim}", DimensionError
        )
    return cast(tuple[int, ...], x.shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    matrix product of two rank-2 tensors

    Args:
        a: `(m, k)`
        b: `(k, n)`

    Returns:
        the `(m, n)` product
    """
    m, k = check_matrix(a, "matmul")
    k2, n = check_matrix(b, "matmul")
    if k != k2:
        gb_error_abort(f"inner dimensions differ: {a.shape} x {b.shape}", DimensionError)
    return cast(Tensor, np.matmul(a, b))


def _relu(x: np.ndarray) -> np.ndarray:
    return cast(np.ndarray, np.maximum(x, 0.0))


def _cube(x: np.ndarray) -> np.ndarray:
    return cast(np.ndarray, x * x * x)


UNARY_FUNCTIONS: dict[str, ArrayFunctionOfArray] = {
    "exp": np.exp,
    "cube": _cube,
    "identity": lambda x: x.copy(),
    "relu": _relu,
    "sigmoid": expit,
    "tanh": np.tanh,
    "sign": np.sign,
    "abs": np.abs,
}

# derivatives of the activations a layer may use
UNARY_DERIVATIVES: dict[str, ArrayFunctionOfArray] = {
    "identity": np.ones_like,
    "relu": lambda x: (x > 0.0).astype(np.float64),
    "sigmoid": lambda x: expit(x) * (1.0 - expit(x)),
    "tanh": lambda x: 1.0 - np.tanh(x) ** 2,
    "exp": np.exp,
    "cube": lambda x: 3.0 * x * x,
}


def map_unary(x: Tensor, f: str) -> Tensor:
    """
    apply a scalar function elementwise

    Args:
        x: any tensor
        f: one of `exp, cube, identity, relu, sigmoid, tanh, sign, abs`

    Returns:
        a tensor of the same shape
    """
    fun = UNARY_FUNCTIONS.get(f)
    if fun is None:
        gb_error_abort(
            f"unknown function {f!r}; use one of {sorted(UNARY_FUNCTIONS)}",
            ConfigurationError,
        )
    return cast(Tensor, np.asarray(fun(np.asarray(x, dtype=np.float64)), dtype=np.float64))


def map_unary_derivative(x: Tensor, f: str) -> Tensor:
    """
    derivative of `map_unary(., f)`, elementwise

    Args:
        x: any tensor
        f: one of `identity, relu, sigmoid, tanh, exp, cube`

    Returns:
        a tensor of the same shape
    """
    deriv = UNARY_DERIVATIVES.get(f)
    if deriv is None:
        gb_error_abort(f"no derivative for function {f!r}", ConfigurationError)
    return cast(Tensor, np.asarray(deriv(np.asarray(x, dtype=np.float64)), dtype=np.float64))


def rms(x: Tensor) -> float:
    """
    root mean square of all the entries of `x`

    Args:
        x: a non-empty tensor

    Returns:
        `sqrt(mean(x**2))`
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        gb_error_abort("the RMS of an empty tensor is undefined", DomainError)
    flat = arr.ravel()
    return float(np.sqrt(np.dot(flat, flat) / flat.size))


def reduce(x: Tensor, op: ReduceOp, axis: int | None = None) -> Tensor | float | int:
    """
    reduce a tensor along an axis, or over all entries

    Args:
        x: a non-empty tensor
        op: `sum`, `mean`, `max` or `argmax`; `argmax` breaks ties at the lowest index
        axis: the axis; `None` reduces over all entries (argmax then returns a flat index)

    Returns:
        a tensor, or a scalar when `axis` is `None`
    """
    arr = np.asarray(x, dtype=np.float64)
    if axis is not None and not -arr.ndim <= axis < arr.ndim:
        gb_error_abort(f"axis {axis} is invalid for a tensor of rank {arr.ndim}", DimensionError)
    if arr.size == 0:
        gb_error_abort("cannot reduce an empty tensor", DomainError)
    if op == "sum":
        res = np.sum(arr, axis=axis)
    elif op == "mean":
        res = np.mean(arr, axis=axis)
    elif op == "max":
        res = np.max(arr, axis=axis)
    elif op == "argmax":
        # np.argmax returns the first occurrence of the maximum
        res_idx = np.argmax(arr, axis=axis)
        return int(res_idx) if axis is None else cast(Tensor, res_idx)
    else:
        gb_error_abort(f"unknown reduction {op!r}", ConfigurationError)
    return float(res) if axis is None else cast(Tensor, res)


def npmaxabs(arr: np.ndarray) -> float:
    """
    maximum absolute value in an array

    Args:
        arr: any Numpy array

    Returns:
        the largest element in absolute value
    """
    return float(np.max(np.abs(arr)))


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """
    largest absolute discrepancy between two arrays, relative to their scale

    Args:
        analytic: e.g. a gradient computed by backpropagation
        numeric: e.g. its finite-difference approximation
        floor: lower bound on the scale, so that all-zero arrays compare absolutely

    Returns:
        `max|a - n| / max(max|a|, max|n|, floor)`
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        gb_error_abort(f"shapes differ: {a.shape} and {n.shape}", DimensionError)
    if a.size == 0:
        return 0.0
    scale = max(npmaxabs(a), npmaxabs(n), floor)
    return npmaxabs(a - n) / scale
