"""
Output heads: how logits become outputs, how class labels become target vectors,
and which delta is backpropagated from the output layer.

The classical heads (`softmax_ce`, `linear_mse`, `sigmoid_mse`, `tanh_mse`)
backpropagate the true gradient of their loss. The gradient-boosting heads
(`exp_gb`, `pow3_gb`, `mirror_exp_gb`) keep linear outputs but impose an amplified
delta `f(x) - t` at the logits:

* `exp_gb`: `f(x) = alpha * exp(x)`
* `pow3_gb`: `f(x) = alpha * x**3 + beta`
* `mirror_exp_gb`: `f(x) = alpha * sign(x) * exp(|x| - 1) + beta`

For these heads `loss_value` (a squared error) is a monitoring metric only:
its gradient is not the delta that `head_delta` returns.
"""

from dataclasses import asdict, dataclass
from typing import Any, cast

import numpy as np
from scipy.special import expit, logsumexp

from gbnet.gbutils import ConfigurationError, DimensionError, DomainError, gb_error_abort
from gbnet.tensor_core import Tensor, check_vector, map_unary

HEAD_KINDS = (
    "softmax_ce",
    "linear_mse",
    "sigmoid_mse",
    "tanh_mse",
    "exp_gb",
    "pow3_gb",
    "mirror_exp_gb",
)
GB_KINDS = ("exp_gb", "pow3_gb", "mirror_exp_gb")

# logits are clamped to this value before exponentiation in the GB heads
EXP_CLAMP = 30.0

# largest log that exp() can represent in double precision
LOG_FLOAT_MAX = float(np.log(np.finfo(np.float64).max))

# (alpha, beta, target_pos, target_neg) for each kind
KIND_DEFAULTS: dict[str, tuple[float, float, float, float]] = {
    "softmax_ce": (1.0, 0.0, 1.0, 0.0),
    "linear_mse": (1.0, 0.0, 1.0, 0.0),
    "sigmoid_mse": (1.0, 0.0, 1.0, 0.0),
    "tanh_mse": (1.0, 0.0, 1.0, 0.0),
    "exp_gb": (0.1, 0.0, 16.0, 0.0),
    "pow3_gb": (0.001, 0.4, 10.0, 0.0),
    "mirror_exp_gb": (0.1, 0.0, 16.0, 0.0),
}


@dataclass(frozen=True)
class HeadSpec:
    """
    an output head; `None` fields take the defaults of the kind.

    `alpha` is the gain of the GB heads and `beta` the offset of `pow3_gb` and
    `mirror_exp_gb`; other kinds store but ignore them. Targets are
    `target_pos` for the true class and `target_neg` elsewhere.
    """

    kind: str
    alpha: float | None = None
    beta: float | None = None
    target_pos: float | None = None
    target_neg: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in HEAD_KINDS:
            gb_error_abort(
                f"unknown head kind {self.kind!r}; use one of {HEAD_KINDS}", ConfigurationError
            )
        defaults = KIND_DEFAULTS[self.kind]
        for name, default in zip(("alpha", "beta", "target_pos", "target_neg"), defaults):
            if getattr(self, name) is None:
                object.__setattr__(self, name, default)
            else:
                object.__setattr__(self, name, float(getattr(self, name)))
        if not self.target_pos > self.target_neg:  # type: ignore[operator]
            gb_error_abort(
                f"target_pos={self.target_pos} must exceed target_neg={self.target_neg}",
                ConfigurationError,
            )
        if not self.alpha > 0.0:  # type: ignore[operator]
            gb_error_abort(f"alpha must be positive, not {self.alpha}", ConfigurationError)
        if self.kind == "softmax_ce" and (self.target_pos, self.target_neg) != (1.0, 0.0):
            gb_error_abort(
                "softmax_ce uses targets {0, 1}; cross-entropy needs a distribution, not"
                f" {{{self.target_neg}, {self.target_pos}}}",
                ConfigurationError,
            )

    @property
    def is_gb(self) -> bool:
        return self.kind in GB_KINDS

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


HEAD_PRESETS: dict[str, HeadSpec] = {
    "softmax_ce": HeadSpec("softmax_ce"),
    "linear_mse": HeadSpec("linear_mse"),
    "sigmoid_mse": HeadSpec("sigmoid_mse"),
    "tanh_mse": HeadSpec("tanh_mse"),
    "exp_gb": HeadSpec("exp_gb", alpha=0.1, target_pos=16.0, target_neg=0.0),
    "exp_gb_cnn10": HeadSpec("exp_gb", alpha=0.1, target_pos=6.0, target_neg=0.0),
    "exp_gb_imagenet": HeadSpec("exp_gb", alpha=0.01, target_pos=10.0, target_neg=0.0),
    "pow3_gb": HeadSpec("pow3_gb", alpha=0.001, beta=0.4, target_pos=10.0, target_neg=0.0),
    "pow3_gb_cnn10": HeadSpec(
        "pow3_gb", alpha=0.001, beta=0.4, target_pos=10.0, target_neg=-2.0
    ),
    "mirror_exp_gb": HeadSpec("mirror_exp_gb", alpha=0.1, beta=0.0, target_pos=16.0),
}


def head_spec_from_name(name: str) -> HeadSpec:
    """
    a preset head by name (see `HEAD_PRESETS`)

    Args:
        name: e.g. `exp_gb` or `pow3_gb_cnn10`

    Returns:
        the HeadSpec
    """
    spec = HEAD_PRESETS.get(name)
    if spec is None:
        gb_error_abort(
            f"unknown head preset {name!r}; use one of {sorted(HEAD_PRESETS)}",
            ConfigurationError,
        )
    return cast(HeadSpec, spec)


def head_spec_from_dict(d: dict[str, Any]) -> HeadSpec:
    """
    a HeadSpec from its JSON form `{kind, alpha, beta, target_pos, target_neg}`;
    `kind` may also name a preset, whose values the other keys then override
    """
    unknown = set(d) - {"kind", "alpha", "beta", "target_pos", "target_neg"}
    if unknown:
        gb_error_abort(f"unknown head keys {sorted(unknown)}", ConfigurationError)
    if "kind" not in d:
        gb_error_abort("the head needs a kind", ConfigurationError)
    base = HEAD_PRESETS.get(d["kind"])
    values = base.to_dict() if base is not None else {"kind": d["kind"]}
    values.update({k: v for k, v in d.items() if k != "kind"})
    return HeadSpec(**values)


@dataclass
class TargetVector:
    """`values[class_index] == target_pos`, every other entry is `target_neg`"""

    values: np.ndarray
    class_index: int


def encode_targets(class_index: int, num_classes: int, spec: HeadSpec) -> TargetVector:
    """
    one-hot target with the magnitudes of the head

    Args:
        class_index: the true class, in `[0, num_classes)`
        num_classes: the number of classes
        spec: the head

    Returns:
        the TargetVector
    """
    if not 0 <= class_index < num_classes:
        gb_error_abort(
            f"class index {class_index} is not in [0, {num_classes})", DomainError
        )
    values = np.full(num_classes, spec.target_neg, dtype=np.float64)
    values[class_index] = spec.target_pos
    return TargetVector(values=values, class_index=int(class_index))


def encode_target_batch(labels: np.ndarray, num_classes: int, spec: HeadSpec) -> np.ndarray:
    """
    `encode_targets` for each label of a batch

    Args:
        labels: `(batch)` integer class indices
        num_classes: the number of classes
        spec: the head

    Returns:
        the `(batch, num_classes)` target matrix
    """
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        gb_error_abort(
            f"labels must lie in [0, {num_classes}), got [{labels.min()}, {labels.max()}]",
            DomainError,
        )
    targets = np.full((labels.size, num_classes), spec.target_neg, dtype=np.float64)
    targets[np.arange(labels.size), labels.astype(np.int64)] = spec.target_pos
    return targets


def _targets_array(targets: TargetVector | np.ndarray) -> np.ndarray:
    if isinstance(targets, TargetVector):
        return targets.values
    return np.asarray(targets, dtype=np.float64)


def softmax(logits: Tensor) -> Tensor:
    """
    row-wise softmax, computed after subtracting the row maximum

    Args:
        logits: `(n)` or `(batch, n)` with `n >= 1`

    Returns:
        the softmax, same shape; rows sum to one
    """
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] == 0:
        gb_error_abort("softmax needs at least one logit per row", DimensionError)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return cast(Tensor, e / np.sum(e, axis=-1, keepdims=True))


def _clamped(x: np.ndarray) -> np.ndarray:
    return cast(np.ndarray, np.minimum(x, EXP_CLAMP))


def head_outputs(logits: Tensor, spec: HeadSpec) -> Tensor:
    """
    the output activation of the head

    Args:
        logits: `(n)` or `(batch, n)`
        spec: the head

    Returns:
        the outputs, same shape
    """
    x = np.asarray(logits, dtype=np.float64)
    alpha, beta = cast(float, spec.alpha), cast(float, spec.beta)
    kind = spec.kind
    if kind == "softmax_ce":
        return softmax(x)
    if kind == "linear_mse":
        return x.copy()
    if kind == "sigmoid_mse":
        return cast(Tensor, expit(x))
    if kind == "tanh_mse":
        return np.tanh(x)
    if kind == "exp_gb":
        return alpha * np.exp(_clamped(x))
    if kind == "pow3_gb":
        return alpha * map_unary(x, "cube") + beta
    # mirror_exp_gb
    return alpha * np.sign(x) * np.exp(_clamped(np.abs(x)) - 1.0) + beta


def head_delta(logits: Tensor, targets: TargetVector | np.ndarray, spec: HeadSpec) -> Tensor:
    """
    the delta at the logits that is fed to backpropagation

    Args:
        logits: `(n)` or `(batch, n)`
        targets: a TargetVector or an array of the same shape as `logits`
        spec: the head

    Returns:
        * `softmax_ce`: `softmax(x) - t`, with `t` rescaled to {0, 1};
        * `linear_mse`: `x - t`;
        * `sigmoid_mse`, `tanh_mse`: `(f(x) - t) f'(x)`;
        * GB heads: the imposed `f(x) - t`
    """
    x = np.asarray(logits, dtype=np.float64)
    t = _targets_array(targets)
    if x.shape != t.shape:
        gb_error_abort(f"logits {x.shape} and targets {t.shape} differ", DimensionError)
    kind = spec.kind
    if kind == "softmax_ce":
        unit_t = (t == np.max(t, axis=-1, keepdims=True)).astype(np.float64)
        return softmax(x) - unit_t
    y = head_outputs(x, spec)
    if kind == "sigmoid_mse":
        return (y - t) * y * (1.0 - y)
    if kind == "tanh_mse":
        return (y - t) * (1.0 - y * y)
    return cast(Tensor, y - t)


def loss_value(logits: Tensor, targets: TargetVector | np.ndarray, spec: HeadSpec) -> float:
    """
    the loss, summed over the batch (monitoring only for the GB heads)

    Args:
        logits: `(n)` or `(batch, n)`
        targets: same shape
        spec: the head

    Returns:
        cross-entropy for `softmax_ce`; `0.5 * sum((head_outputs - t)**2)` otherwise
    """
    x = np.asarray(logits, dtype=np.float64)
    t = _targets_array(targets)
    if x.shape != t.shape:
        gb_error_abort(f"logits {x.shape} and targets {t.shape} differ", DimensionError)
    if spec.kind == "softmax_ce":
        if not np.all((t == 0.0) | (t == 1.0)):
            gb_error_abort("softmax_ce needs targets in {0, 1}", ConfigurationError)
        log_y = x - logsumexp(x, axis=-1, keepdims=True)
        return float(-np.sum(t * log_y))
    diff = head_outputs(x, spec) - t
    return float(0.5 * np.sum(diff * diff))


def gb_potential(logits: Tensor, targets: TargetVector | np.ndarray, spec: HeadSpec) -> float:
    """
    the function whose gradient is the delta imposed by a GB head (below the exp clamp)

    Args:
        logits: `(n)` or `(batch, n)`
        targets: same shape
        spec: a GB head

    Returns:
        the sum over components of
        `alpha exp(x) - t x` (`exp_gb`), `alpha x**4 / 4 + (beta - t) x` (`pow3_gb`),
        or `alpha exp(|x| - 1) + (beta - t) x` (`mirror_exp_gb`, away from 0)
    """
    if not spec.is_gb:
        gb_error_abort(f"{spec.kind} is not a gradient-boosting head", ConfigurationError)
    x = np.asarray(logits, dtype=np.float64)
    t = _targets_array(targets)
    if x.shape != t.shape:
        gb_error_abort(f"logits {x.shape} and targets {t.shape} differ", DimensionError)
    alpha, beta = cast(float, spec.alpha), cast(float, spec.beta)
    if spec.kind == "exp_gb":
        p = alpha * np.exp(x) - t * x
    elif spec.kind == "pow3_gb":
        p = alpha * x**4 / 4.0 + (beta - t) * x
    else:
        p = alpha * np.exp(np.abs(x) - 1.0) + (beta - t) * x
    return float(np.sum(p))


def exp_clamp_count(logits: Tensor, spec: HeadSpec) -> int:
    """how many logits the overflow guard of an exponential head clamps"""
    x = np.asarray(logits)
    if spec.kind == "exp_gb":
        return int(np.count_nonzero(x > EXP_CLAMP))
    if spec.kind == "mirror_exp_gb":
        return int(np.count_nonzero(np.abs(x) > EXP_CLAMP))
    return 0


@dataclass
class NormalizationTerm:
    """the softmax denominator `s = sum_i exp(x_i)` and its log"""

    s: float
    log_s: float
    saturated: bool


def normalization_term(logits_row: Tensor) -> NormalizationTerm:
    """
    the softmax normalization term of one row of logits

    Args:
        logits_row: a non-empty vector (one dimension)

    Returns:
        `log_s` by log-sum-exp (always finite for finite logits), and `s = exp(log_s)`,
        set to `inf` with `saturated=True` when it is not representable
    """
    x = np.asarray(logits_row, dtype=np.float64)
    if check_vector(x, "normalization_term") == 0:
        gb_error_abort("the normalization term of an empty row is undefined", DomainError)
    log_s = float(logsumexp(x))
    if log_s > LOG_FLOAT_MAX:
        return NormalizationTerm(s=float("inf"), log_s=log_s, saturated=True)
    return NormalizationTerm(s=float(np.exp(log_s)), log_s=log_s, saturated=False)


def predict(logits: Tensor, spec: HeadSpec | None = None) -> int | np.ndarray:
    """
    the predicted class: argmax of the logits, lowest index on ties.
    All head activations are increasing, so this is also the argmax of `head_outputs`
    except where the exponential heads clamp: logits above `EXP_CLAMP` share one output
    but keep their order here. `spec` is accepted for symmetry with the other head functions.

    Args:
        logits: `(n)` or `(batch, n)`
        spec: the head (unused)

    Returns:
        an index, or a `(batch)` array of indices
    """
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0:
        gb_error_abort("cannot predict from empty logits", DomainError)
    if x.ndim == 1:
        return int(np.argmax(x))
    return cast(np.ndarray, np.argmax(x, axis=-1))
