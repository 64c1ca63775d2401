"""
Forward and backward passes of the layers used in the networks under test
(dense, 2-D convolution, batch normalization, elementwise activations, flatten),
and their composition into a trainable `Network`.

Shapes are batch-first: dense inputs are `(batch, features)`, convolution inputs
are `(batch, channels, height, width)`.

Each `*_forward` function returns its output and a cache; the matching
`*_backward` function takes that cache and the delta arriving at the output, and
returns the delta at the input followed by the parameter gradients.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Literal, cast

import numpy as np

from gbnet.gb_logging import get_logger
from gbnet.gbutils import (
    ConfigurationError,
    DimensionError,
    DomainError,
    StateError,
    gb_error_abort,
)
from gbnet.tensor_core import (
    UNARY_DERIVATIVES,
    Tensor,
    ThreeArrays,
    check_matrix,
    check_tensor,
    map_unary,
    map_unary_derivative,
    matmul,
)

logger = get_logger(__name__)

LAYER_KINDS = ("dense", "conv2d", "batchnorm", "activation", "flatten")
INIT_SCHEMES = ("he", "xavier", "uniform")
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9

Mode = Literal["train", "eval"]


@dataclass
class LayerSpec:
    """
    describes one layer; the fields that do not apply to `kind` are ignored.
    `None` sizes are resolved from the input shape by `resolve_layer_specs`.
    """

    kind: str
    n_in: int | None = None
    n_out: int | None = None
    in_channels: int | None = None
    out_channels: int | None = None
    kernel_size: int = 3
    stride: int = 1
    padding: int = 0
    num_features: int | None = None
    activation: str = "relu"
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPSILON

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            gb_error_abort(
                f"unknown layer kind {self.kind!r}; use one of {LAYER_KINDS}",
                ConfigurationError,
            )
        if self.kind == "dense" and (self.n_out is None or self.n_out < 1):
            gb_error_abort("a dense layer needs a positive n_out", ConfigurationError)
        if self.kind == "conv2d":
            if self.out_channels is None or self.out_channels < 1:
                gb_error_abort("a conv2d layer needs positive out_channels", ConfigurationError)
            if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
                gb_error_abort(
                    f"invalid kernel_size={self.kernel_size}, stride={self.stride},"
                    f" padding={self.padding}",
                    ConfigurationError,
                )
        if self.kind == "activation" and self.activation not in UNARY_DERIVATIVES:
            gb_error_abort(
                f"unknown activation {self.activation!r}; use one of {sorted(UNARY_DERIVATIVES)}",
                ConfigurationError,
            )
        if self.kind == "batchnorm" and not (0.0 <= self.momentum < 1.0 and self.eps > 0.0):
            gb_error_abort(
                f"invalid momentum={self.momentum} or eps={self.eps}", ConfigurationError
            )

    def to_dict(self) -> dict[str, Any]:
        """the non-default fields, as in a configuration file"""
        d: dict[str, Any] = {"kind": self.kind}
        defaults = LayerSpec.__dataclass_fields__
        for name, f in defaults.items():
            value = getattr(self, name)
            if name != "kind" and value != f.default:
                d[name] = value
        return d


# ----------------------------------------------------------------------------
#  caches
# ----------------------------------------------------------------------------


@dataclass
class DenseCache:
    x: np.ndarray
    w: np.ndarray


@dataclass
class Conv2dCache:
    cols: np.ndarray
    x_shape: tuple[int, int, int, int]
    kernels: np.ndarray
    stride: int
    padding: int
    out_h: int
    out_w: int


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    axes: tuple[int, ...]
    batch_stats: bool


@dataclass
class ActivationCache:
    x: np.ndarray
    fn: str


@dataclass
class FlattenCache:
    in_shape: tuple[int, ...]


def _need_cache(cache: Any, kind: type) -> None:
    if cache is None:
        gb_error_abort("no forward cache; run the forward pass first", StateError)
    if not isinstance(cache, kind):
        gb_error_abort(f"expected a {kind.__name__}, not {type(cache).__name__}", StateError)


# ----------------------------------------------------------------------------
#  dense
# ----------------------------------------------------------------------------


def dense_forward(x: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, DenseCache]:
    """
    affine map `x @ w + b` applied to each row

    Args:
        x: `(batch, n_in)`
        w: `(n_in, n_out)`
        b: `(n_out)`

    Returns:
        the `(batch, n_out)` output and the cache
    """
    _, n_in = check_matrix(x, "dense_forward")
    n_in_w, n_out = check_matrix(w, "dense_forward")
    if n_in != n_in_w or b.shape != (n_out,):
        gb_error_abort(
            f"x {x.shape}, w {w.shape} and b {b.shape} do not agree", DimensionError
        )
    out = matmul(x, w) + b
    return out, DenseCache(x=x, w=w)


def dense_backward(cache: DenseCache | None, delta_out: Tensor) -> ThreeArrays:
    """
    gradients of the affine map

    Args:
        cache: from `dense_forward`
        delta_out: `(batch, n_out)`

    Returns:
        `delta_in (batch, n_in)`, `grad_w (n_in, n_out)`, `grad_b (n_out)`;
        `grad_b` sums the delta over the batch
    """
    _need_cache(cache, DenseCache)
    cache = cast(DenseCache, cache)
    if delta_out.shape != (cache.x.shape[0], cache.w.shape[1]):
        gb_error_abort(
            f"delta {delta_out.shape} does not match the output shape", DimensionError
        )
    delta_in = matmul(delta_out, cache.w.T)
    grad_w = matmul(cache.x.T, delta_out)
    grad_b = np.sum(delta_out, axis=0)
    return delta_in, grad_w, grad_b


# ----------------------------------------------------------------------------
#  convolution
# ----------------------------------------------------------------------------


def conv_output_size(size: int, kernel_size: int, stride: int, padding: int) -> int:
    """number of positions of a kernel along one spatial dimension"""
    return (size + 2 * padding - kernel_size) // stride + 1


def im2col(
    x: Tensor, kh: int, kw: int, stride: int = 1, padding: int = 0
) -> tuple[np.ndarray, int, int]:
    """
    expand the receptive fields of `x` into the rows of a matrix

    Args:
        x: `(N, C, H, W)`
        kh: kernel height
        kw: kernel width
        stride: the stride
        padding: zero padding on each side

    Returns:
        `cols` of shape `(N * out_h * out_w, C * kh * kw)`, and `out_h, out_w`.
        Rows are ordered by `(n, oh, ow)` and columns by `(c, i, j)`, both in
        row-major order, so that `kernels.reshape(F, -1)` lines up with the columns.
    """
    N, C, H, W = check_tensor(x, 4, "im2col")
    out_h = conv_output_size(H, kh, stride, padding)
    out_w = conv_output_size(W, kw, stride, padding)
    if out_h <= 0 or out_w <= 0:
        gb_error_abort(
            f"input {x.shape} with kernel {kh}x{kw}, stride {stride}, padding {padding}"
            f" gives output {out_h}x{out_w}",
            DimensionError,
        )
    img = np.pad(x, [(0, 0), (0, 0), (padding, padding), (padding, padding)], "constant")
    col = np.zeros((N, C, kh, kw, out_h, out_w))
    for i in range(kh):
        i_max = i + stride * out_h
        for j in range(kw):
            j_max = j + stride * out_w
            col[:, :, i, j, :, :] = img[:, :, i:i_max:stride, j:j_max:stride]
    # (N, C, kh, kw, oh, ow) -> (N, oh, ow, C, kh, kw)
    cols = col.transpose(0, 4, 5, 1, 2, 3).reshape(N * out_h * out_w, -1)
    return cols, out_h, out_w


def col2im(
    cols: np.ndarray,
    x_shape: tuple[int, int, int, int],
    kh: int,
    kw: int,
    stride: int,
    padding: int,
    out_h: int,
    out_w: int,
) -> Tensor:
    """
    adjoint of `im2col`: sums the rows of `cols` back into an image

    Args:
        cols: `(N * out_h * out_w, C * kh * kw)`
        x_shape: `(N, C, H, W)`
        kh: kernel height
        kw: kernel width
        stride: the stride
        padding: zero padding on each side
        out_h: output height
        out_w: output width

    Returns:
        the `(N, C, H, W)` image; overlapping receptive fields accumulate
    """
    N, C, H, W = x_shape
    col = cols.reshape(N, out_h, out_w, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((N, C, H + 2 * padding + stride - 1, W + 2 * padding + stride - 1))
    for i in range(kh):
        i_max = i + stride * out_h
        for j in range(kw):
            j_max = j + stride * out_w
            img[:, :, i:i_max:stride, j:j_max:stride] += col[:, :, i, j, :, :]
    return np.ascontiguousarray(img[:, :, padding : padding + H, padding : padding + W])


def conv2d_forward(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> tuple[Tensor, Conv2dCache]:
    """
    2-D cross-correlation (no kernel flip) with zero padding

    Args:
        x: `(N, C, H, W)`
        kernels: `(F, C, kh, kw)`
        bias: `(F)`, zero if `None`
        stride: the stride
        padding: zero padding on each side

    Returns:
        the `(N, F, out_h, out_w)` output and the cache
    """
    N, C, _, _ = check_tensor(x, 4, "conv2d_forward")
    F, C_k, kh, kw = check_tensor(kernels, 4, "conv2d_forward")
    if C != C_k:
        gb_error_abort(f"x has {C} channels, kernels expect {C_k}", DimensionError)
    b = np.zeros(F) if bias is None else bias
    if b.shape != (F,):
        gb_error_abort(f"bias should have shape ({F},), not {b.shape}", DimensionError)
    cols, out_h, out_w = im2col(x, kh, kw, stride, padding)
    kernels_r = kernels.reshape(F, -1)
    out_r = matmul(cols, kernels_r.T) + b
    out = np.ascontiguousarray(out_r.reshape(N, out_h, out_w, F).transpose(0, 3, 1, 2))
    cache = Conv2dCache(
        cols=cols,
        x_shape=cast(tuple[int, int, int, int], x.shape),
        kernels=kernels,
        stride=stride,
        padding=padding,
        out_h=out_h,
        out_w=out_w,
    )
    return out, cache


def conv2d_backward(cache: Conv2dCache | None, delta_out: Tensor) -> ThreeArrays:
    """
    gradients of `conv2d_forward`

    Args:
        cache: from `conv2d_forward`
        delta_out: `(N, F, out_h, out_w)`

    Returns:
        `delta_in (N, C, H, W)`, `grad_kernels (F, C, kh, kw)`, `grad_bias (F)`
    """
    _need_cache(cache, Conv2dCache)
    cache = cast(Conv2dCache, cache)
    F, _, kh, kw = cache.kernels.shape
    N = cache.x_shape[0]
    if delta_out.shape != (N, F, cache.out_h, cache.out_w):
        gb_error_abort(
            f"delta {delta_out.shape} does not match the output shape", DimensionError
        )
    delta_r = delta_out.transpose(0, 2, 3, 1).reshape(-1, F)
    grad_kernels = matmul(delta_r.T, cache.cols).reshape(cache.kernels.shape)
    grad_bias = np.sum(delta_r, axis=0)
    dcols = matmul(delta_r, cache.kernels.reshape(F, -1))
    delta_in = col2im(
        dcols,
        cache.x_shape,
        kh,
        kw,
        cache.stride,
        cache.padding,
        cache.out_h,
        cache.out_w,
    )
    return delta_in, grad_kernels, grad_bias


# ----------------------------------------------------------------------------
#  batch normalization
# ----------------------------------------------------------------------------


def _bn_axes(x: Tensor) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """reduction axes and broadcast shape for per-feature (2-D) or per-channel (4-D) statistics"""
    if x.ndim == 2:
        return (0,), (1, x.shape[1])
    if x.ndim == 4:
        return (0, 2, 3), (1, x.shape[1], 1, 1)
    gb_error_abort(f"batch normalization needs 2 or 4 dimensions, not {x.ndim}", DimensionError)
    return (), ()  # for mypy


def batchnorm_forward(
    x: Tensor,
    gamma: Tensor,
    beta_shift: Tensor,
    mode: Mode,
    running_mean: Tensor,
    running_var: Tensor,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPSILON,
) -> tuple[Tensor, BatchNormCache, Tensor, Tensor]:
    """
    per-feature standardization followed by a learned scale and shift

    Args:
        x: `(N, F)` or `(N, C, H, W)`; statistics are per column or per channel
        gamma: the scale, `(F)` or `(C)`
        beta_shift: the shift, same shape as `gamma`
        mode: `train` uses the batch statistics, `eval` the running ones
        running_mean: the running mean
        running_var: the running variance
        momentum: weight of the old running value in the moving average
        eps: variance floor

    Returns:
        the output, the cache, and the updated running mean and variance
        (unchanged copies in `eval` mode)
    """
    axes, bshape = _bn_axes(x)
    n_feat = x.shape[1]
    for name, arr in (
        ("gamma", gamma),
        ("beta_shift", beta_shift),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ):
        if arr.shape != (n_feat,):
            gb_error_abort(f"{name} should have shape ({n_feat},), not {arr.shape}", DimensionError)
    if mode == "train":
        if x.shape[0] < 2:
            gb_error_abort("batch normalization needs a batch of at least 2 in train mode", DomainError)
        mean = np.mean(x, axis=axes)
        var = np.var(x, axis=axes)
        new_mean = momentum * running_mean + (1.0 - momentum) * mean
        new_var = momentum * running_var + (1.0 - momentum) * var
    elif mode == "eval":
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean.copy(), running_var.copy()
    else:
        gb_error_abort(f"mode must be 'train' or 'eval', not {mode!r}", ConfigurationError)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.reshape(bshape) * x_hat + beta_shift.reshape(bshape)
    cache = BatchNormCache(
        x_hat=x_hat, inv_std=inv_std, gamma=gamma, axes=axes, batch_stats=mode == "train"
    )
    return out, cache, new_mean, new_var


def batchnorm_backward(cache: BatchNormCache | None, delta_out: Tensor) -> ThreeArrays:
    """
    gradients of `batchnorm_forward`, including the path through the batch statistics

    Args:
        cache: from `batchnorm_forward`
        delta_out: same shape as the input

    Returns:
        `delta_in`, `grad_gamma`, `grad_shift`
    """
    _need_cache(cache, BatchNormCache)
    cache = cast(BatchNormCache, cache)
    if delta_out.shape != cache.x_hat.shape:
        gb_error_abort(
            f"delta {delta_out.shape} does not match the output shape", DimensionError
        )
    axes = cache.axes
    bshape = (1, cache.x_hat.shape[1]) + (1,) * (cache.x_hat.ndim - 2)
    grad_gamma = np.sum(delta_out * cache.x_hat, axis=axes)
    grad_shift = np.sum(delta_out, axis=axes)
    dx_hat = delta_out * cache.gamma.reshape(bshape)
    inv_std = cache.inv_std.reshape(bshape)
    if not cache.batch_stats:
        return dx_hat * inv_std, grad_gamma, grad_shift
    m = cache.x_hat.size // cache.x_hat.shape[1]
    sum_dx_hat = np.sum(dx_hat, axis=axes).reshape(bshape)
    sum_dx_hat_x_hat = np.sum(dx_hat * cache.x_hat, axis=axes).reshape(bshape)
    delta_in = (inv_std / m) * (m * dx_hat - sum_dx_hat - cache.x_hat * sum_dx_hat_x_hat)
    return delta_in, grad_gamma, grad_shift


# ----------------------------------------------------------------------------
#  parameterless layers
# ----------------------------------------------------------------------------


def activation_forward(x: Tensor, fn: str) -> tuple[Tensor, ActivationCache]:
    """elementwise activation `fn` (`relu`, `sigmoid`, `tanh`, `identity`, ...)"""
    return map_unary(x, fn), ActivationCache(x=x, fn=fn)


def activation_backward(cache: ActivationCache | None, delta_out: Tensor) -> Tensor:
    _need_cache(cache, ActivationCache)
    cache = cast(ActivationCache, cache)
    if delta_out.shape != cache.x.shape:
        gb_error_abort(f"delta {delta_out.shape} does not match {cache.x.shape}", DimensionError)
    return cast(Tensor, delta_out * map_unary_derivative(cache.x, cache.fn))


def flatten_forward(x: Tensor) -> tuple[Tensor, FlattenCache]:
    return x.reshape(x.shape[0], -1), FlattenCache(in_shape=cast(tuple[int, ...], x.shape))


def flatten_backward(cache: FlattenCache | None, delta_out: Tensor) -> Tensor:
    _need_cache(cache, FlattenCache)
    cache = cast(FlattenCache, cache)
    if delta_out.size != int(np.prod(cache.in_shape)) or delta_out.shape[0] != cache.in_shape[0]:
        gb_error_abort(f"delta {delta_out.shape} does not match {cache.in_shape}", DimensionError)
    return delta_out.reshape(cache.in_shape)


# ----------------------------------------------------------------------------
#  networks
# ----------------------------------------------------------------------------


@dataclass
class GradientSet:
    """
    the result of a backward pass through a network

    Attributes:
        param_grads: for each layer, a dictionary of gradients keyed like `Network.params`
        input_deltas: for each layer, the delta with respect to its input
    """

    param_grads: list[dict[str, np.ndarray]]
    input_deltas: list[np.ndarray]


@dataclass
class Network:
    """
    an ordered list of resolved layer specifications with their parameters

    Attributes:
        specs: the layers, with all sizes resolved
        input_shape: the shape of one example (without the batch axis)
        shapes: the output shape of each layer (without the batch axis)
        params: per layer, `w`/`b` (dense, conv2d) or `gamma`/`beta` (batchnorm)
        state: per layer, the running `mean`/`var` of batchnorm layers
        cache: per-layer forward caches, set only by a forward pass in train mode
    """

    specs: list[LayerSpec]
    input_shape: tuple[int, ...]
    shapes: list[tuple[int, ...]]
    params: list[dict[str, np.ndarray]]
    state: list[dict[str, np.ndarray]]
    cache: list[Any] | None = field(default=None, repr=False)

    @property
    def num_outputs(self) -> int:
        return int(np.prod(self.shapes[-1]))

    @property
    def layer_kinds(self) -> list[str]:
        return [spec.kind for spec in self.specs]

    @property
    def has_batchnorm(self) -> bool:
        return "batchnorm" in self.layer_kinds

    def weight_layers(self) -> list[int]:
        """indices of the dense and conv2d layers"""
        return [i for i, spec in enumerate(self.specs) if spec.kind in ("dense", "conv2d")]

    def n_params(self) -> int:
        return sum(arr.size for layer in self.params for arr in layer.values())

    def summary(self) -> str:
        lines = [f"input {self.input_shape}"]
        for spec, shape, layer in zip(self.specs, self.shapes, self.params):
            detail = spec.activation if spec.kind == "activation" else ""
            n = sum(arr.size for arr in layer.values())
            lines.append(f"{spec.kind:<10} {detail:<8} -> {shape}  ({n} parameters)")
        return "\n".join(lines)


def resolve_layer_specs(
    specs: list[LayerSpec], input_shape: tuple[int, ...]
) -> tuple[list[LayerSpec], list[tuple[int, ...]]]:
    """
    fill in the input sizes of each layer and check that the shapes chain

    Args:
        specs: the layers; `n_in`, `in_channels`, `num_features` may be `None`
        input_shape: the shape of one example

    Returns:
        the resolved specs and the output shape of each layer
    """
    resolved: list[LayerSpec] = []
    shapes: list[tuple[int, ...]] = []
    shape = tuple(input_shape)
    for i, spec in enumerate(specs):
        if spec.kind == "dense":
            if len(shape) != 1:
                gb_error_abort(
                    f"layer {i}: dense layer gets input shape {shape}; flatten first",
                    DimensionError,
                )
            if spec.n_in is not None and spec.n_in != shape[0]:
                gb_error_abort(
                    f"layer {i}: declared n_in={spec.n_in} but the input has {shape[0]} features",
                    DimensionError,
                )
            spec = replace(spec, n_in=shape[0])
            shape = (cast(int, spec.n_out),)
        elif spec.kind == "conv2d":
            if len(shape) != 3:
                gb_error_abort(
                    f"layer {i}: conv2d layer needs (C, H, W) inputs, not {shape}", DimensionError
                )
            if spec.in_channels is not None and spec.in_channels != shape[0]:
                gb_error_abort(
                    f"layer {i}: declared in_channels={spec.in_channels} but the input has"
                    f" {shape[0]}",
                    DimensionError,
                )
            spec = replace(spec, in_channels=shape[0])
            out_h = conv_output_size(shape[1], spec.kernel_size, spec.stride, spec.padding)
            out_w = conv_output_size(shape[2], spec.kernel_size, spec.stride, spec.padding)
            if out_h <= 0 or out_w <= 0:
                gb_error_abort(
                    f"layer {i}: conv2d output would be {out_h}x{out_w}", DimensionError
                )
            shape = (cast(int, spec.out_channels), out_h, out_w)
        elif spec.kind == "batchnorm":
            if len(shape) not in (1, 3):
                gb_error_abort(f"layer {i}: batchnorm cannot take shape {shape}", DimensionError)
            if spec.num_features is not None and spec.num_features != shape[0]:
                gb_error_abort(
                    f"layer {i}: declared num_features={spec.num_features} but the input has"
                    f" {shape[0]}",
                    DimensionError,
                )
            spec = replace(spec, num_features=shape[0])
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        resolved.append(spec)
        shapes.append(shape)
    return resolved, shapes


def build_network(specs: list[LayerSpec], input_shape: tuple[int, ...]) -> Network:
    """
    make a network with zero weights, unit batchnorm scales and unit running variances;
    use `init_parameters` to draw the weights

    Args:
        specs: the layers
        input_shape: the shape of one example

    Returns:
        the network
    """
    if not specs:
        gb_error_abort("a network needs at least one layer", ConfigurationError)
    resolved, shapes = resolve_layer_specs(specs, input_shape)
    params: list[dict[str, np.ndarray]] = []
    state: list[dict[str, np.ndarray]] = []
    for spec in resolved:
        layer_params: dict[str, np.ndarray] = {}
        layer_state: dict[str, np.ndarray] = {}
        if spec.kind == "dense":
            n_in, n_out = cast(int, spec.n_in), cast(int, spec.n_out)
            layer_params = {"w": np.zeros((n_in, n_out)), "b": np.zeros(n_out)}
        elif spec.kind == "conv2d":
            c_in, c_out = cast(int, spec.in_channels), cast(int, spec.out_channels)
            k = spec.kernel_size
            layer_params = {"w": np.zeros((c_out, c_in, k, k)), "b": np.zeros(c_out)}
        elif spec.kind == "batchnorm":
            n_feat = cast(int, spec.num_features)
            layer_params = {"gamma": np.ones(n_feat), "beta": np.zeros(n_feat)}
            layer_state = {"mean": np.zeros(n_feat), "var": np.ones(n_feat)}
        params.append(layer_params)
        state.append(layer_state)
    return Network(
        specs=resolved,
        input_shape=tuple(input_shape),
        shapes=shapes,
        params=params,
        state=state,
    )


def _fans(spec: LayerSpec) -> tuple[int, int]:
    if spec.kind == "dense":
        return cast(int, spec.n_in), cast(int, spec.n_out)
    k2 = spec.kernel_size * spec.kernel_size
    return cast(int, spec.in_channels) * k2, cast(int, spec.out_channels) * k2


def init_parameters(
    net: Network,
    scheme: str = "he",
    seed: int = 0,
    bounds: tuple[float, float] = (-0.05, 0.05),
) -> Network:
    """
    draw the weights of the dense and conv2d layers; biases are set to zero,
    batchnorm scales to one and shifts to zero

    Args:
        net: the network, modified in place
        scheme: `he` (normal, std `sqrt(2/fan_in)`), `xavier`
            (normal, std `sqrt(2/(fan_in + fan_out))`) or `uniform` on `bounds`
        seed: the seed; the same seed gives bit-identical parameters
        bounds: the interval for `uniform`

    Returns:
        the network
    """
    if scheme not in INIT_SCHEMES:
        gb_error_abort(f"unknown scheme {scheme!r}; use one of {INIT_SCHEMES}", ConfigurationError)
    rng = np.random.default_rng(seed)
    for spec, layer, layer_state in zip(net.specs, net.params, net.state):
        if spec.kind in ("dense", "conv2d"):
            shape = layer["w"].shape
            fan_in, fan_out = _fans(spec)
            if scheme == "he":
                layer["w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            elif scheme == "xavier":
                layer["w"] = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)
            else:
                low, high = bounds
                layer["w"] = rng.uniform(low, high, size=shape)
            layer["b"] = np.zeros_like(layer["b"])
        elif spec.kind == "batchnorm":
            layer["gamma"] = np.ones_like(layer["gamma"])
            layer["beta"] = np.zeros_like(layer["beta"])
            layer_state["mean"] = np.zeros_like(layer_state["mean"])
            layer_state["var"] = np.ones_like(layer_state["var"])
    net.cache = None
    logger.debug(f"initialized {net.n_params()} parameters with {scheme}, seed {seed}")
    return net


def _layer_forward(
    net: Network, i: int, x: Tensor, mode: Mode
) -> tuple[Tensor, Any]:
    spec, layer = net.specs[i], net.params[i]
    if spec.kind == "dense":
        return dense_forward(x, layer["w"], layer["b"])
    if spec.kind == "conv2d":
        return conv2d_forward(x, layer["w"], layer["b"], spec.stride, spec.padding)
    if spec.kind == "batchnorm":
        layer_state = net.state[i]
        out, bn_cache, new_mean, new_var = batchnorm_forward(
            x,
            layer["gamma"],
            layer["beta"],
            mode,
            layer_state["mean"],
            layer_state["var"],
            spec.momentum,
            spec.eps,
        )
        if mode == "train":
            layer_state["mean"], layer_state["var"] = new_mean, new_var
        return out, bn_cache
    if spec.kind == "activation":
        return activation_forward(x, spec.activation)
    return flatten_forward(x)


def network_forward(net: Network, x: Tensor, mode: Mode = "eval") -> Tensor:
    """
    run the layers in order

    Args:
        net: the network
        x: `(batch,) + net.input_shape`
        mode: `train` caches per-layer state and updates batchnorm running statistics;
            `eval` uses the running statistics and leaves the network untouched

    Returns:
        the logits `(batch, num_outputs)`, before any output head
    """
    if mode not in ("train", "eval"):
        gb_error_abort(f"mode must be 'train' or 'eval', not {mode!r}", ConfigurationError)
    if x.ndim != len(net.input_shape) + 1 or tuple(x.shape[1:]) != net.input_shape:
        gb_error_abort(
            f"input of shape {x.shape} does not match (batch,) + {net.input_shape}",
            DimensionError,
        )
    caches: list[Any] = []
    out = np.asarray(x, dtype=np.float64)
    for i in range(len(net.specs)):
        out, layer_cache = _layer_forward(net, i, out, mode)
        caches.append(layer_cache)
    if mode == "train":
        net.cache = caches
    return out.reshape(out.shape[0], -1)


def network_backward(net: Network, delta: Tensor) -> GradientSet:
    """
    backpropagate the delta at the logits through all layers, last to first

    Args:
        net: the network, after a forward pass in train mode
        delta: `(batch, num_outputs)`

    Returns:
        the parameter gradients and the input delta of every layer
    """
    if net.cache is None:
        gb_error_abort("no forward cache; run network_forward in train mode first", StateError)
    caches = cast(list[Any], net.cache)
    out_shape = net.shapes[-1]
    if delta.ndim != 2 or delta.shape[1] != net.num_outputs:
        gb_error_abort(
            f"delta of shape {delta.shape} does not match (batch, {net.num_outputs})",
            DimensionError,
        )
    # each layer's backward checks the batch size against its cache
    n_layers = len(net.specs)
    param_grads: list[dict[str, np.ndarray]] = [{} for _ in range(n_layers)]
    input_deltas: list[np.ndarray] = [np.zeros(0) for _ in range(n_layers)]
    d = delta.reshape((delta.shape[0],) + out_shape)
    for i in reversed(range(n_layers)):
        kind = net.specs[i].kind
        layer_cache = caches[i]
        if kind == "dense":
            d, gw, gb = dense_backward(layer_cache, d)
            param_grads[i] = {"w": gw, "b": gb}
        elif kind == "conv2d":
            d, gw, gb = conv2d_backward(layer_cache, d)
            param_grads[i] = {"w": gw, "b": gb}
        elif kind == "batchnorm":
            d, gg, gs = batchnorm_backward(layer_cache, d)
            param_grads[i] = {"gamma": gg, "beta": gs}
        elif kind == "activation":
            d = activation_backward(layer_cache, d)
        else:
            d = flatten_backward(layer_cache, d)
        input_deltas[i] = d
    return GradientSet(param_grads=param_grads, input_deltas=input_deltas)


def check_congruent(net: Network, grads: GradientSet) -> None:
    """raise a `DimensionError` unless `grads` has one gradient per parameter, of the same shape"""
    if len(grads.param_grads) != len(net.params):
        gb_error_abort(
            f"{len(grads.param_grads)} gradient layers for {len(net.params)} network layers",
            DimensionError,
        )
    for i, (layer, layer_grads) in enumerate(zip(net.params, grads.param_grads)):
        if set(layer) != set(layer_grads):
            gb_error_abort(
                f"layer {i}: gradients for {sorted(layer_grads)}, parameters {sorted(layer)}",
                DimensionError,
            )
        for name, arr in layer.items():
            if layer_grads[name].shape != arr.shape:
                gb_error_abort(
                    f"layer {i}: gradient of {name} has shape {layer_grads[name].shape},"
                    f" parameter has {arr.shape}",
                    DimensionError,
                )
