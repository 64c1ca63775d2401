"""
Finite-difference verification of every backward pass, head delta, GB potential
and Hessian formula. Failures are entries in the report, never exceptions.
"""

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import pandas as pd

from gbnet import layers
from gbnet.curvature import CurvaturePoint, hessian_table
from gbnet.gb_logging import get_logger
from gbnet.gbutils import ConfigurationError, gb_error_abort
from gbnet.heads import (
    HEAD_PRESETS,
    HeadSpec,
    encode_targets,
    gb_potential,
    head_delta,
    loss_value,
)
from gbnet.layers import LayerSpec, build_network, init_parameters
from gbnet.tensor_core import max_relative_error

logger = get_logger(__name__)

FD_STEP = 1e-4
LAYER_THRESHOLD = 1e-5
HEAD_THRESHOLD = 1e-6
POTENTIAL_THRESHOLD = 1e-6
HESSIAN_THRESHOLD = 1e-4

N_HEAD_PAIRS = 200
N_HESSIAN_POINTS = 100

BACKWARD_FUNCTIONS = (
    "dense_backward",
    "conv2d_backward",
    "batchnorm_backward",
    "activation_backward",
)


def numerical_gradient(
    f: Callable[[np.ndarray], float], p: np.ndarray, h: float = FD_STEP, mode: str = "central"
) -> np.ndarray:
    """
    finite-difference gradient of a scalar function of an array of any shape

    Args:
        f: the function
        p: where we are checking the gradient; left unchanged
        h: the step
        mode: "central" or "forward" derivatives

    Returns:
        the numerical gradient, with the shape of `p`
    """
    if mode not in ("central", "forward"):
        gb_error_abort("mode must be 'central' or 'forward'", ConfigurationError)
    p1 = np.array(p, dtype=np.float64)
    flat = p1.reshape(-1)
    g = np.zeros(flat.size)
    f0 = f(p1) if mode == "forward" else 0.0
    for i in range(flat.size):
        x = flat[i]
        flat[i] = x + h
        f_plus = f(p1)
        if mode == "central":
            flat[i] = x - h
            f_minus = f(p1)
            g[i] = (f_plus - f_minus) / (2.0 * h)
        else:
            g[i] = (f_plus - f0) / h
        flat[i] = x
    return g.reshape(p1.shape)


@dataclass
class GradientCheckEntry:
    component: str
    max_rel_err: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.threshold)


@dataclass
class GradientCheckReport:
    """one entry per checked component"""

    seed: int
    entries: list[GradientCheckEntry] = field(default_factory=list)

    def add(self, component: str, max_rel_err: float, threshold: float) -> None:
        entry = GradientCheckEntry(component, float(max_rel_err), threshold)
        if not entry.passed:
            logger.warning(
                f"{component}: max relative error {max_rel_err:.3e} above {threshold:.0e}"
            )
        self.entries.append(entry)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> list[str]:
        return [e.component for e in self.entries if not e.passed]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(e.component, e.max_rel_err, e.threshold, e.passed) for e in self.entries],
            columns=["component", "max_rel_err", "threshold", "passed"],
        )


def _worst(pairs: list[tuple[np.ndarray, np.ndarray]]) -> float:
    return max(max_relative_error(a, n) for a, n in pairs)


def _check_dense(rng: np.random.Generator, backward: Callable) -> float:
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 5))
    b = rng.standard_normal(5)
    r = rng.standard_normal((3, 5))

    def loss(x_: np.ndarray, w_: np.ndarray, b_: np.ndarray) -> float:
        return float(np.sum(layers.dense_forward(x_, w_, b_)[0] * r))

    _, cache = layers.dense_forward(x, w, b)
    dx, dw, db = backward(cache, r)
    return _worst(
        [
            (dx, numerical_gradient(lambda v: loss(v, w, b), x)),
            (dw, numerical_gradient(lambda v: loss(x, v, b), w)),
            (db, numerical_gradient(lambda v: loss(x, w, v), b)),
        ]
    )


def _check_conv2d(rng: np.random.Generator, backward: Callable) -> float:
    worst = 0.0
    for stride, padding in ((1, 0), (2, 1)):
        x = rng.standard_normal((2, 2, 5, 5))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        out, cache = layers.conv2d_forward(x, k, b, stride, padding)
        r = rng.standard_normal(out.shape)

        def loss(x_: np.ndarray, k_: np.ndarray, b_: np.ndarray) -> float:
            return float(np.sum(layers.conv2d_forward(x_, k_, b_, stride, padding)[0] * r))

        dx, dk, db = backward(cache, r)
        worst = max(
            worst,
            _worst(
                [
                    (dx, numerical_gradient(lambda v: loss(v, k, b), x)),
                    (dk, numerical_gradient(lambda v: loss(x, v, b), k)),
                    (db, numerical_gradient(lambda v: loss(x, k, v), b)),
                ]
            ),
        )
    return worst


def _check_batchnorm(rng: np.random.Generator, backward: Callable) -> float:
    worst = 0.0
    for shape in ((6, 3), (3, 2, 3, 3)):
        x = rng.standard_normal(shape)
        n_feat = shape[1]
        gamma = rng.uniform(0.5, 1.5, n_feat)
        shift = rng.standard_normal(n_feat)
        mean, var = np.zeros(n_feat), np.ones(n_feat)
        r = rng.standard_normal(shape)

        def loss(x_: np.ndarray, g_: np.ndarray, s_: np.ndarray) -> float:
            out = layers.batchnorm_forward(x_, g_, s_, "train", mean, var)[0]
            return float(np.sum(out * r))

        _, cache, _, _ = layers.batchnorm_forward(x, gamma, shift, "train", mean, var)
        dx, dg, ds = backward(cache, r)
        worst = max(
            worst,
            _worst(
                [
                    (dx, numerical_gradient(lambda v: loss(v, gamma, shift), x)),
                    (dg, numerical_gradient(lambda v: loss(x, v, shift), gamma)),
                    (ds, numerical_gradient(lambda v: loss(x, gamma, v), shift)),
                ]
            ),
        )
    return worst


def _check_activations(rng: np.random.Generator, backward: Callable) -> float:
    worst = 0.0
    for fn in ("identity", "sigmoid", "tanh", "exp", "cube", "relu"):
        x = rng.standard_normal((4, 5))
        if fn == "relu":
            # keep away from the kink
            x = np.where(np.abs(x) < 0.1, x + 0.5, x)
        r = rng.standard_normal(x.shape)
        _, cache = layers.activation_forward(x, fn)
        dx = backward(cache, r)

        def loss(x_: np.ndarray, fn: str = fn) -> float:
            return float(np.sum(layers.activation_forward(x_, fn)[0] * r))

        worst = max(worst, max_relative_error(dx, numerical_gradient(loss, x)))
    return worst


def _check_network(rng: np.random.Generator, seed: int) -> float:
    specs = [
        LayerSpec("conv2d", out_channels=3, kernel_size=3, padding=1),
        LayerSpec("batchnorm"),
        LayerSpec("activation", activation="tanh"),
        LayerSpec("conv2d", out_channels=2, kernel_size=3, stride=2, padding=1),
        LayerSpec("flatten"),
        LayerSpec("dense", n_out=6),
        LayerSpec("activation", activation="sigmoid"),
        LayerSpec("dense", n_out=4),
    ]
    net = init_parameters(build_network(specs, (2, 4, 4)), "xavier", seed)
    x = rng.standard_normal((3, 2, 4, 4))
    r = rng.standard_normal((3, 4))

    def loss() -> float:
        return float(np.sum(layers.network_forward(net, x, "train") * r))

    layers.network_forward(net, x, "train")
    grads = layers.network_backward(net, r)
    pairs = []
    for i, layer in enumerate(net.params):
        for name, arr in layer.items():

            def f(v: np.ndarray, arr: np.ndarray = arr) -> float:
                saved = arr.copy()
                arr[...] = v
                val = loss()
                arr[...] = saved
                return val

            pairs.append((grads.param_grads[i][name], numerical_gradient(f, arr)))

    def f_input(v: np.ndarray) -> float:
        return float(np.sum(layers.network_forward(net, v, "train") * r))

    pairs.append((grads.input_deltas[0], numerical_gradient(f_input, x)))
    # one scale for the whole network: a bias feeding a batchnorm has a zero gradient
    analytic = np.concatenate([a.ravel() for a, _ in pairs])
    numeric = np.concatenate([n.ravel() for _, n in pairs])
    return max_relative_error(analytic, numeric)


def _check_head(rng: np.random.Generator, spec: HeadSpec, n_pairs: int) -> float:
    worst = 0.0
    for _ in range(n_pairs):
        logits = rng.standard_normal(10)
        t = encode_targets(int(rng.integers(10)), 10, spec).values
        analytic = head_delta(logits, t, spec)
        numeric = numerical_gradient(lambda v: loss_value(v, t, spec), logits)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst


def _check_potential(rng: np.random.Generator, spec: HeadSpec, n_pairs: int) -> float:
    worst = 0.0
    for _ in range(n_pairs):
        logits = rng.uniform(-3.0, 3.0, 10)
        if spec.kind == "mirror_exp_gb":
            # the mirrored potential has a kink at 0
            logits = np.where(np.abs(logits) < 0.1, logits + 0.5, logits)
        t = encode_targets(int(rng.integers(10)), 10, spec).values
        analytic = head_delta(logits, t, spec)
        numeric = numerical_gradient(lambda v: gb_potential(v, t, spec), logits)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst


def _curvature_points(rng: np.random.Generator, n: int) -> list[CurvaturePoint]:
    return [
        CurvaturePoint(
            x=float(rng.uniform(-2.0, 2.0)),
            t=float(rng.uniform(-1.0, 2.0)),
            s=float(rng.uniform(0.5, 5.0)),
        )
        for _ in range(n)
    ]


def check_gradients(
    seed: int = 0, overrides: dict[str, Callable[..., Any]] | None = None
) -> GradientCheckReport:
    """
    run all the finite-difference suites

    Args:
        seed: the same seed gives the same report
        overrides: replacements for `dense_backward`, `conv2d_backward`,
            `batchnorm_backward` or `activation_backward` in the layer suites,
            e.g. a corrupted version to check that the suite catches it

    Returns:
        the GradientCheckReport
    """
    overrides = overrides or {}
    unknown = set(overrides) - set(BACKWARD_FUNCTIONS)
    if unknown:
        gb_error_abort(f"cannot override {sorted(unknown)}", ConfigurationError)
    backward = {name: overrides.get(name, getattr(layers, name)) for name in BACKWARD_FUNCTIONS}
    rng = np.random.default_rng(seed)
    report = GradientCheckReport(seed=seed)

    report.add("dense", _check_dense(rng, backward["dense_backward"]), LAYER_THRESHOLD)
    report.add("conv2d", _check_conv2d(rng, backward["conv2d_backward"]), LAYER_THRESHOLD)
    report.add(
        "batchnorm", _check_batchnorm(rng, backward["batchnorm_backward"]), LAYER_THRESHOLD
    )
    report.add(
        "activation",
        _check_activations(rng, backward["activation_backward"]),
        LAYER_THRESHOLD,
    )
    report.add("network", _check_network(rng, seed), LAYER_THRESHOLD)

    for name in ("softmax_ce", "linear_mse", "sigmoid_mse", "tanh_mse"):
        report.add(
            f"head:{name}", _check_head(rng, HEAD_PRESETS[name], N_HEAD_PAIRS), HEAD_THRESHOLD
        )
    for name in ("exp_gb", "pow3_gb", "mirror_exp_gb"):
        report.add(
            f"potential:{name}",
            _check_potential(rng, HEAD_PRESETS[name], N_HEAD_PAIRS),
            POTENTIAL_THRESHOLD,
        )

    table = hessian_table(_curvature_points(rng, N_HESSIAN_POINTS))
    for kind, group in table.groupby("kind", sort=False):
        report.add(f"hessian:{kind}", float(group["rel_error"].max()), HESSIAN_THRESHOLD)

    logger.info(
        f"gradient check, seed {seed}: {len(report.entries) - len(report.failures())}"
        f" of {len(report.entries)} components passed"
    )
    return report
