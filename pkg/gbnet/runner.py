"""
Configuration-driven experiments: build a network and a head from a JSON
configuration, train it with SGD while recording diagnostics, repeat over seeds,
and compare heads on identical data and batch sequences.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from math import isnan
from pathlib import Path
from typing import Any, Callable, cast

import numpy as np
import pandas as pd

from gbnet.datasets import Dataset, DatasetConfig, batch_iter, load_source
from gbnet.diagnostics import (
    HIST_BINS,
    HIST_RANGE,
    DiagnosticsRecord,
    RmsAccumulator,
    convergence_epoch,
    emit_csv,
    error_rate,
    median_curve,
    record_delta_histogram,
    record_epoch_error,
    record_norm_term,
    record_rms_gradients,
    write_frame,
)
from gbnet.gb_logging import get_logger
from gbnet.gbutils import (
    ConfigurationError,
    DomainError,
    final_s,
    gb_error_abort,
    median_of,
    mkdir_if_needed,
)
from gbnet.heads import (
    HeadSpec,
    encode_target_batch,
    exp_clamp_count,
    head_delta,
    head_spec_from_dict,
    head_spec_from_name,
)
from gbnet.layers import (
    GradientSet,
    LayerSpec,
    Network,
    build_network,
    check_congruent,
    init_parameters,
    network_backward,
    network_forward,
)
from gbnet.Timer import Timer, timeit

logger = get_logger(__name__)

DIVERGENCE_CEILING = 1e6
EVAL_BATCH_SIZE = 500


# ----------------------------------------------------------------------------
#  configuration
# ----------------------------------------------------------------------------


@dataclass
class ModelConfig:
    """
    the architecture: either a named `preset` or an explicit list of `layers`

    Attributes:
        preset: `mlp`, `cnn5` or `cnn10`
        layers: LayerSpec dictionaries, e.g. `{"kind": "dense", "n_out": 10}`
        hidden: hidden widths of `mlp`
        channels: output channels of the convolutions of `cnn5` and `cnn10`
        batchnorm: whether the convolutional presets normalize after each convolution
        activation: hidden activation of the presets
        init: `he`, `xavier` or `uniform`
        init_bounds: the interval for `uniform`
    """

    preset: str | None = "mlp"
    layers: list[dict[str, Any]] | None = None
    hidden: list[int] = field(default_factory=lambda: [50])
    channels: list[int] | None = None
    batchnorm: bool = True
    activation: str = "relu"
    init: str = "he"
    init_bounds: tuple[float, float] = (-0.05, 0.05)

    def __post_init__(self) -> None:
        if self.layers is not None:
            self.preset = None
        elif self.preset not in ARCHITECTURE_PRESETS:
            gb_error_abort(
                f"unknown preset {self.preset!r}; use one of {sorted(ARCHITECTURE_PRESETS)}"
                " or give layers",
                ConfigurationError,
            )
        self.init_bounds = cast(tuple[float, float], tuple(self.init_bounds))


@dataclass
class OptimConfig:
    """
    SGD settings; `lr_per_head` maps head names to the learning rate used for them
    by `compare_heads`
    """

    lr: float = 0.1
    momentum: float = 0.0
    batch_size: int = 32
    epochs: int = 10
    lr_per_head: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.lr > 0.0:
            gb_error_abort(f"the learning rate must be positive, not {self.lr}", ConfigurationError)
        if not 0.0 <= self.momentum < 1.0:
            gb_error_abort(f"momentum must be in [0, 1), not {self.momentum}", ConfigurationError)
        if self.batch_size < 1:
            gb_error_abort(f"batch_size must be positive, not {self.batch_size}", ConfigurationError)
        if self.epochs < 1:
            gb_error_abort(f"epochs must be at least 1, not {self.epochs}", ConfigurationError)
        for name, lr in self.lr_per_head.items():
            if not lr > 0.0:
                gb_error_abort(f"learning rate {lr} for {name} is not positive", ConfigurationError)

    def lr_for(self, head_name: str) -> float:
        return float(self.lr_per_head.get(head_name, self.lr))


@dataclass
class RunSettings:
    seed: int = 0
    trials: int = 1
    workers: int = 1

    def __post_init__(self) -> None:
        if self.trials < 1:
            gb_error_abort(f"trials must be at least 1, not {self.trials}", ConfigurationError)
        if self.workers < 1:
            gb_error_abort(f"workers must be at least 1, not {self.workers}", ConfigurationError)


@dataclass
class DiagnosticsConfig:
    """
    what is recorded during training

    Attributes:
        hist_range: the range of the regular histogram bins
        hist_bins: the number of regular bins
        hist_epochs: the epochs whose first batch is binned; all epochs if `None`
        norm_term_batches: `first` batch of each epoch, or `all` batches
        rms_batches: RMS pooled over `all` batches of an epoch, or its `first` batch
        divergence_ceiling: a mean absolute output delta above this halts the run
        top_k: errors count a prediction as correct if the label is in the top k
        eval_batch_size: batch size for evaluation
    """

    hist_range: tuple[float, float] = HIST_RANGE
    hist_bins: int = HIST_BINS
    hist_epochs: list[int] | None = None
    norm_term_batches: str = "first"
    rms_batches: str = "all"
    divergence_ceiling: float = DIVERGENCE_CEILING
    top_k: int = 1
    eval_batch_size: int = EVAL_BATCH_SIZE

    def __post_init__(self) -> None:
        self.hist_range = cast(tuple[float, float], tuple(self.hist_range))
        lo, hi = self.hist_range
        if not lo < hi or self.hist_bins < 1:
            gb_error_abort(
                f"invalid histogram range {self.hist_range} or bins {self.hist_bins}",
                ConfigurationError,
            )
        if self.norm_term_batches not in ("first", "all"):
            gb_error_abort("norm_term_batches must be 'first' or 'all'", ConfigurationError)
        if self.rms_batches not in ("first", "all"):
            gb_error_abort("rms_batches must be 'first' or 'all'", ConfigurationError)
        if not self.divergence_ceiling > 0.0:
            gb_error_abort("divergence_ceiling must be positive", ConfigurationError)
        if self.top_k < 1 or self.eval_batch_size < 1:
            gb_error_abort("top_k and eval_batch_size must be positive", ConfigurationError)


@dataclass
class RunConfig:
    """a complete experiment; `head_name` labels the head in the outputs"""

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    head: HeadSpec = field(default_factory=lambda: head_spec_from_name("softmax_ce"))
    optim: OptimConfig = field(default_factory=OptimConfig)
    run: RunSettings = field(default_factory=RunSettings)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    head_name: str = "softmax_ce"

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["head"] = {"name": self.head_name, **d["head"]}
        del d["head_name"]
        return d


SECTIONS: dict[str, type] = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "optim": OptimConfig,
    "run": RunSettings,
    "diagnostics": DiagnosticsConfig,
}


def _section(cls: type, name: str, values: Any) -> Any:
    if not isinstance(values, dict):
        gb_error_abort(f"section {name} must be an object", ConfigurationError)
    allowed = {f.name for f in fields(cls)}
    unknown = set(values) - allowed
    if unknown:
        gb_error_abort(
            f"unknown keys {sorted(unknown)} in {name}; use {sorted(allowed)}", ConfigurationError
        )
    return cls(**values)


def head_from_config(value: str | dict[str, Any]) -> tuple[HeadSpec, str]:
    """a head and its label, from a preset name or a dictionary with an optional `name`"""
    if isinstance(value, str):
        return head_spec_from_name(value), value
    if not isinstance(value, dict):
        gb_error_abort("head must be a preset name or an object", ConfigurationError)
    d = dict(value)
    name = d.pop("name", None)
    spec = head_spec_from_dict(d)
    return spec, str(name if name is not None else d["kind"])


def run_config_from_dict(d: dict[str, Any]) -> RunConfig:
    """
    parse the JSON form of a RunConfig; missing sections take their defaults

    Args:
        d: the parsed JSON document

    Returns:
        the RunConfig
    """
    unknown = set(d) - set(SECTIONS) - {"head"}
    if unknown:
        gb_error_abort(f"unknown sections {sorted(unknown)}", ConfigurationError)
    kwargs: dict[str, Any] = {
        name: _section(cls, name, d[name]) for name, cls in SECTIONS.items() if name in d
    }
    if "head" in d:
        kwargs["head"], kwargs["head_name"] = head_from_config(d["head"])
    return RunConfig(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    """read a RunConfig from a JSON file"""
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            gb_error_abort(f"{path} is not valid JSON: {e}", ConfigurationError)
    return run_config_from_dict(d)


def with_head(cfg: RunConfig, head_name: str) -> RunConfig:
    """the same run with a preset head and its learning rate from `lr_per_head`"""
    return replace(
        cfg,
        head=head_spec_from_name(head_name),
        head_name=head_name,
        optim=replace(cfg.optim, lr=cfg.optim.lr_for(head_name)),
    )


# ----------------------------------------------------------------------------
#  architectures
# ----------------------------------------------------------------------------


def mlp_specs(
    input_shape: tuple[int, ...], num_classes: int, model: ModelConfig
) -> list[LayerSpec]:
    """fully connected: `input - hidden... - num_classes`, with the hidden activation"""
    specs = [LayerSpec("flatten")] if len(input_shape) > 1 else []
    for width in model.hidden:
        specs += [LayerSpec("dense", n_out=width), LayerSpec("activation", activation=model.activation)]
    return specs + [LayerSpec("dense", n_out=num_classes)]


def _conv_blocks(
    input_shape: tuple[int, ...],
    model: ModelConfig,
    channels: list[int],
    strides: list[int],
    preset: str,
) -> list[LayerSpec]:
    if len(input_shape) != 3:
        gb_error_abort(
            f"{preset} needs (C, H, W) examples, not {input_shape}; use the image layout",
            ConfigurationError,
        )
    specs = []
    for c, s in zip(channels, strides):
        specs.append(LayerSpec("conv2d", out_channels=c, kernel_size=3, stride=s, padding=1))
        if model.batchnorm:
            specs.append(LayerSpec("batchnorm"))
        specs.append(LayerSpec("activation", activation=model.activation))
    return specs


def cnn5_specs(
    input_shape: tuple[int, ...], num_classes: int, model: ModelConfig
) -> list[LayerSpec]:
    """four 3x3 convolutions, the last two strided, then a dense output layer"""
    channels = model.channels or [32, 32, 64, 64]
    if len(channels) != 4:
        gb_error_abort(f"cnn5 takes 4 channel counts, not {len(channels)}", ConfigurationError)
    specs = _conv_blocks(input_shape, model, channels, [1, 1, 2, 2], "cnn5")
    return specs + [LayerSpec("flatten"), LayerSpec("dense", n_out=num_classes)]


def cnn10_specs(
    input_shape: tuple[int, ...], num_classes: int, model: ModelConfig
) -> list[LayerSpec]:
    """nine 3x3 convolutions, every third one strided in place of pooling, then a dense output layer"""
    channels = model.channels or [32, 32, 32, 64, 64, 64, 96, 96, 96]
    if len(channels) != 9:
        gb_error_abort(f"cnn10 takes 9 channel counts, not {len(channels)}", ConfigurationError)
    specs = _conv_blocks(input_shape, model, channels, [1, 1, 2] * 3, "cnn10")
    return specs + [LayerSpec("flatten"), LayerSpec("dense", n_out=num_classes)]


ARCHITECTURE_PRESETS: dict[str, Callable[[tuple[int, ...], int, ModelConfig], list[LayerSpec]]] = {
    "mlp": mlp_specs,
    "cnn5": cnn5_specs,
    "cnn10": cnn10_specs,
}


def build_model(
    model: ModelConfig, input_shape: tuple[int, ...], num_classes: int, seed: int
) -> Network:
    """
    the network of a ModelConfig, with freshly drawn weights

    Args:
        model: the ModelConfig
        input_shape: the shape of one example
        num_classes: must equal the number of outputs
        seed: seeds the weights

    Returns:
        the network
    """
    if model.layers is not None:
        try:
            specs = [LayerSpec(**d) for d in model.layers]
        except TypeError as e:
            gb_error_abort(f"invalid layer: {e}", ConfigurationError)
    else:
        specs = ARCHITECTURE_PRESETS[cast(str, model.preset)](input_shape, num_classes, model)
    net = build_network(specs, input_shape)
    if net.num_outputs != num_classes:
        gb_error_abort(
            f"the network has {net.num_outputs} outputs for {num_classes} classes",
            ConfigurationError,
        )
    return init_parameters(net, model.init, seed, model.init_bounds)


# ----------------------------------------------------------------------------
#  training
# ----------------------------------------------------------------------------


@dataclass
class MomentumState:
    """the velocity `v` of each parameter; `None` before the first step"""

    momentum: float = 0.0
    velocity: list[dict[str, np.ndarray]] | None = None


def sgd_step(
    net: Network, grads: GradientSet, lr: float, momentum_state: MomentumState
) -> Network:
    """
    `v <- momentum * v + g; theta <- theta - lr * v`; momentum 0 is plain SGD

    Args:
        net: the network, updated in place
        grads: gradients congruent with the parameters
        lr: the learning rate, `>= 0`
        momentum_state: updated in place

    Returns:
        the network
    """
    check_congruent(net, grads)
    if lr < 0.0:
        gb_error_abort(f"the learning rate must be non-negative, not {lr}", DomainError)
    m = momentum_state.momentum
    prev = momentum_state.velocity
    velocity: list[dict[str, np.ndarray]] = []
    for i, (layer, layer_grads) in enumerate(zip(net.params, grads.param_grads)):
        layer_v = {}
        for name, g in layer_grads.items():
            v = g if prev is None else m * prev[i][name] + g
            layer[name] = layer[name] - lr * v
            layer_v[name] = v
        velocity.append(layer_v)
    momentum_state.velocity = velocity
    return net


def evaluate(net: Network, ds: Dataset, top_k: int = 1, batch_size: int = EVAL_BATCH_SIZE) -> float:
    """the error rate of the network on a dataset, in eval mode"""
    logits = np.concatenate(
        [
            network_forward(net, b.inputs, "eval")
            for b in batch_iter(ds, batch_size, shuffle=False)
        ]
    )
    return error_rate(logits, ds.labels, top_k)


def _record_errors(
    rec: DiagnosticsRecord, net: Network, data: tuple[Dataset, Dataset], epoch: int, cfg: RunConfig
) -> None:
    diag = cfg.diagnostics
    for ds in data:
        rate = evaluate(net, ds, diag.top_k, diag.eval_batch_size)
        record_epoch_error(rec, epoch, ds.split, rate)


def train_run(
    cfg: RunConfig,
    trial_seed: int,
    data: tuple[Dataset, Dataset] | None = None,
    epochs: int | None = None,
) -> tuple[Network, DiagnosticsRecord]:
    """
    train one network; the weights and the batch order depend only on `trial_seed`

    Args:
        cfg: the RunConfig
        trial_seed: seeds the weights and the batch permutation of every epoch
        data: the training and test sets; loaded from `cfg.dataset` if `None`
        epochs: overrides `cfg.optim.epochs`; 0 only evaluates the untrained network,
            recorded at epoch 0

    Returns:
        the trained network and its DiagnosticsRecord
    """
    train, test = load_source(cfg.dataset) if data is None else data
    train, test = replace(train, split="train"), replace(test, split="test")
    n_epochs = cfg.optim.epochs if epochs is None else epochs
    if n_epochs < 0:
        gb_error_abort(f"epochs must be non-negative, not {n_epochs}", DomainError)
    net = build_model(cfg.model, train.example_shape, train.num_classes, trial_seed)
    spec, diag, optim = cfg.head, cfg.diagnostics, cfg.optim
    rec = DiagnosticsRecord()
    timer = Timer()
    tag = f"{cfg.head_name} seed {trial_seed}"
    if n_epochs == 0:
        with timer.stage("eval"):
            _record_errors(rec, net, (train, test), 0, cfg)
        return net, rec

    state = MomentumState(momentum=optim.momentum)
    step = 0
    for epoch in range(1, n_epochs + 1):
        acc = RmsAccumulator(net.layer_kinds)
        with timer.stage("train"):
            batches = batch_iter(train, optim.batch_size, seed=trial_seed, epoch=epoch)
            for i_batch, batch in enumerate(batches):
                n = batch.labels.size
                if n == 1 and net.has_batchnorm:
                    logger.warning(f"{tag}: skipping a batch of size 1 at step {step}")
                    continue
                logits = network_forward(net, batch.inputs, "train")
                targets = encode_target_batch(batch.labels, train.num_classes, spec)
                delta = head_delta(logits, targets, spec)
                rec.clamp_count += exp_clamp_count(logits, spec)
                if i_batch == 0:
                    if diag.hist_epochs is None or epoch in diag.hist_epochs:
                        record_delta_histogram(rec, delta, *diag.hist_range, diag.hist_bins, epoch)
                if i_batch == 0 or diag.norm_term_batches == "all":
                    record_norm_term(rec, step, logits)
                mean_abs = float(np.mean(np.abs(delta)))
                if not np.isfinite(mean_abs) or mean_abs > diag.divergence_ceiling:
                    rec.status, rec.halt_step = "diverged", step
                    logger.warning(
                        f"{tag}: diverged at epoch {epoch}, step {step} (mean |delta| {mean_abs:.3e})"
                    )
                    break
                # gradients of the mean loss over the batch
                grads = network_backward(net, delta / n)
                if diag.rms_batches == "all" or acc.n_passes == 0:
                    acc.add(grads)
                sgd_step(net, grads, optim.lr, state)
                step += 1
        if rec.diverged:
            break
        if acc.n_passes:
            record_rms_gradients(rec, epoch, acc)
        with timer.stage("eval"):
            _record_errors(rec, net, (train, test), epoch, cfg)
        logger.info(
            f"{tag}, epoch {epoch}: train error {rec.final_error('train'):.4f},"
            f" test error {rec.final_error('test'):.4f}"
        )
    logger.info(f"{tag}: {timer.report()}")
    return net, rec


# ----------------------------------------------------------------------------
#  trials and comparisons
# ----------------------------------------------------------------------------


@dataclass
class TrialResult:
    trial: int
    seed: int
    min_error: float
    convergence_epoch: int | None
    final_error: float
    status: str


@dataclass
class TrialSummary:
    """
    per-trial results and their medians over the completed trials

    Attributes:
        head_name: the head
        results: one TrialResult per trial, in seed order
        records: one DiagnosticsRecord per trial, in seed order
        median_min_error: median of the minimum test errors
        median_convergence_epoch: median of the convergence epochs
        median_final_error: median of the last test errors
        n_completed: the number of trials the medians are taken over
    """

    head_name: str
    results: list[TrialResult]
    records: list[DiagnosticsRecord]
    median_min_error: float
    median_convergence_epoch: float
    median_final_error: float
    n_completed: int

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(
            [
                (self.head_name, r.trial, r.min_error, r.convergence_epoch, r.status)
                for r in self.results
            ],
            columns=["head", "trial", "min_error", "convergence_epoch", "status"],
        )
        df["convergence_epoch"] = df["convergence_epoch"].astype("Int64")
        return df

    def completed_records(self) -> list[DiagnosticsRecord]:
        return [rec for rec in self.records if not rec.diverged]


def _trial_result(k: int, seed: int, rec: DiagnosticsRecord) -> TrialResult:
    if rec.curve("test"):
        return TrialResult(
            trial=k,
            seed=seed,
            min_error=rec.min_error("test"),
            convergence_epoch=convergence_epoch(rec),
            final_error=rec.final_error("test"),
            status=rec.status,
        )
    return TrialResult(k, seed, float("nan"), None, float("nan"), rec.status)


def summarize_trials(
    head_name: str, seeds: list[int], records: list[DiagnosticsRecord]
) -> TrialSummary:
    """medians over the completed trials, with a warning if some diverged"""
    results = [_trial_result(k, s, rec) for k, (s, rec) in enumerate(zip(seeds, records))]
    done = [r for r in results if r.status == "completed"]
    if len(done) < len(results):
        logger.warning(
            f"{head_name}: {final_s(len(results) - len(done), 'trial')} diverged; medians over"
            f" {final_s(len(done), 'completed trial')}"
        )
    if done:
        med_min = median_of([r.min_error for r in done])
        med_conv = median_of([float(cast(int, r.convergence_epoch)) for r in done])
        med_final = median_of([r.final_error for r in done])
    else:
        med_min = med_conv = med_final = float("nan")
    return TrialSummary(
        head_name=head_name,
        results=results,
        records=records,
        median_min_error=med_min,
        median_convergence_epoch=med_conv,
        median_final_error=med_final,
        n_completed=len(done),
    )


@timeit
def run_trials(
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    data: tuple[Dataset, Dataset] | None = None,
) -> TrialSummary:
    """
    `cfg.run.trials` independent runs with seeds `seed, seed + 1, ...`, on up to
    `cfg.run.workers` threads; results are gathered in seed order

    Args:
        cfg: the RunConfig
        out_dir: if given, receives `trial_<k>/` with the diagnostics CSVs,
            `summary.csv`, `median_curve.csv` and `config.json`
        data: the training and test sets; loaded once from `cfg.dataset` if `None`

    Returns:
        the TrialSummary
    """
    data = load_source(cfg.dataset) if data is None else data
    seeds = [cfg.run.seed + k for k in range(cfg.run.trials)]
    logger.info(f"{cfg.head_name}: {final_s(len(seeds), 'trial')}, lr {cfg.optim.lr}")

    def one_trial(seed: int) -> DiagnosticsRecord:
        return train_run(cfg, seed, data)[1]

    with ThreadPoolExecutor(max_workers=cfg.run.workers) as pool:
        records = list(pool.map(one_trial, seeds))
    summary = summarize_trials(cfg.head_name, seeds, records)

    if out_dir is not None:
        out = mkdir_if_needed(out_dir)
        for k, rec in enumerate(records):
            emit_csv(rec, out / f"trial_{k}")
        write_frame(summary.to_frame(), out / "summary.csv")
        write_frame(median_curve(summary.completed_records()), out / "median_curve.csv")
        with open(out / "config.json", "w") as f:
            json.dump(cfg.to_dict(), f, indent=2)
    return summary


@timeit
def compare_heads(
    cfg_base: RunConfig,
    head_list: list[str],
    out_dir: str | Path | None = None,
    data: tuple[Dataset, Dataset] | None = None,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """
    `run_trials` for each preset head on the same data and seeds, so that every
    head sees the same initial weights and batch sequences

    Args:
        cfg_base: the RunConfig; its head is replaced, and its learning rate by
            `optim.lr_per_head` where given
        head_list: at least two preset head names
        out_dir: if given, receives one `run_trials` directory per head,
            `comparison.csv`, `ratios.csv` and `median_curves.csv`

    Returns:
        the comparison table (one row per head) and the table of pairwise
        ratios of median convergence epochs
    """
    if len(head_list) < 2:
        gb_error_abort(f"need at least two heads, not {head_list}", ConfigurationError)
    data = load_source(cfg_base.dataset) if data is None else data
    out = None if out_dir is None else mkdir_if_needed(out_dir)
    rows, curves, rms_medians = [], [], []
    seen: dict[str, int] = {}
    for name in head_list:
        cfg = with_head(cfg_base, name)
        seen[name] = seen.get(name, 0) + 1
        sub_dir = name if seen[name] == 1 else f"{name}_{seen[name]}"
        summary = run_trials(cfg, None if out is None else out / sub_dir, data)
        rows.append(
            (
                name,
                cfg.optim.lr,
                summary.median_min_error,
                summary.median_convergence_epoch,
                summary.median_final_error,
                summary.n_completed,
                cfg.run.trials,
            )
        )
        rms_medians.append((name, median_hidden_rms(summary.completed_records())))
        curve = median_curve(summary.completed_records())
        curve.insert(0, "head", name)
        curves.append(curve)
    comparison = pd.DataFrame(
        rows,
        columns=[
            "head",
            "lr",
            "median_min_error",
            "median_convergence_epoch",
            "median_final_error",
            "n_completed",
            "trials",
        ],
    )
    ratios = convergence_ratios(comparison)
    if out is not None:
        write_frame(comparison, out / "comparison.csv")
        write_frame(ratios, out / "ratios.csv")
        write_frame(rms_ratios(rms_medians), out / "rms_ratios.csv")
        write_frame(pd.concat(curves, ignore_index=True), out / "median_curves.csv")
    return comparison, ratios


def convergence_ratios(comparison: pd.DataFrame) -> pd.DataFrame:
    """
    for each ordered pair of rows, the ratio of their median convergence epochs

    Args:
        comparison: a table with columns `head` and `median_convergence_epoch`

    Returns:
        a data frame with columns `head_a, head_b, convergence_ratio`
    """
    heads = list(comparison["head"])
    epochs = list(comparison["median_convergence_epoch"])
    rows = []
    for i, (head_a, ep_a) in enumerate(zip(heads, epochs)):
        for j, (head_b, ep_b) in enumerate(zip(heads, epochs)):
            if i == j:
                continue
            ratio = float("nan") if ep_b == 0 or isnan(ep_b) else ep_a / ep_b
            rows.append((head_a, head_b, ratio))
    return pd.DataFrame(rows, columns=["head_a", "head_b", "convergence_ratio"])


def median_hidden_rms(records: list[DiagnosticsRecord]) -> pd.DataFrame:
    """
    the median over trials of the RMS delta of each hidden dense or conv2d layer

    Args:
        records: the records of the completed trials

    Returns:
        a data frame with columns `epoch, layer_index, rms_delta`; the output layer is left out
    """
    columns = ["epoch", "layer_index", "layer_kind", "rms_delta", "rms_param_grad"]
    traces = [pd.DataFrame(rec.rms_trace, columns=columns) for rec in records if rec.rms_trace]
    if not traces:
        return pd.DataFrame({"epoch": [], "layer_index": [], "rms_delta": []})
    df = pd.concat(traces, ignore_index=True)
    df = df[df["layer_index"] < df["layer_index"].max()]
    return df.groupby(["epoch", "layer_index"], as_index=False)["rms_delta"].median()


def rms_ratios(medians: list[tuple[str, pd.DataFrame]]) -> pd.DataFrame:
    """
    for each ordered pair of heads, the ratio of their median hidden-layer RMS deltas,
    epoch by epoch and layer by layer

    Args:
        medians: `(head, median_hidden_rms(...))` in comparison order

    Returns:
        a data frame with columns `epoch, layer_index, head_a, head_b, rms_ratio`
    """
    frames = []
    for i, (head_a, med_a) in enumerate(medians):
        for j, (head_b, med_b) in enumerate(medians):
            if i == j:
                continue
            both = med_a.merge(med_b, on=["epoch", "layer_index"], suffixes=("_a", "_b"))
            denom = both["rms_delta_b"].where(both["rms_delta_b"] != 0.0)
            frames.append(
                pd.DataFrame(
                    {
                        "epoch": both["epoch"].astype(int),
                        "layer_index": both["layer_index"].astype(int),
                        "head_a": head_a,
                        "head_b": head_b,
                        "rms_ratio": both["rms_delta_a"] / denom,
                    }
                )
            )
    columns = ["epoch", "layer_index", "head_a", "head_b", "rms_ratio"]
    if not frames:
        return pd.DataFrame(columns=columns)
    return pd.concat(frames, ignore_index=True)[columns]
