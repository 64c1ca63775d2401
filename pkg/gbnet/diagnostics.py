"""
Instrumentation of training runs: error curves and convergence epochs, histograms of
output deltas, per-layer RMS of the backpropagated deltas and parameter gradients,
and the trace of the softmax normalization term. Everything is written to CSV.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, cast

import numpy as np
import pandas as pd

from gbnet.gb_logging import get_logger, log_execution
from gbnet.gbutils import (
    DimensionError,
    DomainError,
    RecordingError,
    gb_error_abort,
    median_of,
    mkdir_if_needed,
)
from gbnet.heads import normalization_term, predict
from gbnet.layers import GradientSet
from gbnet.tensor_core import Tensor, rms

logger = get_logger(__name__)

HIST_RANGE = (-8.0, 12.0)
HIST_BINS = 100
CSV_FLOAT_FORMAT = "%.17g"

ERRORS_COLUMNS = ["epoch", "split", "error_rate"]
RMS_COLUMNS = ["epoch", "layer_index", "layer_kind", "rms_delta", "rms_param_grad"]
HIST_COLUMNS = ["checkpoint", "bin_lo", "bin_hi", "count"]
NORMTERM_COLUMNS = ["step", "log_s", "s", "saturated"]

RMS_LAYER_KINDS = ("dense", "conv2d")


@dataclass
class DiagnosticsRecord:
    """
    everything recorded during one training run

    Attributes:
        error_curve: `(epoch, split, error_rate)` in recording order
        rms_trace: `(epoch, layer_index, layer_kind, rms_delta, rms_param_grad)`
        delta_histograms: `(checkpoint, bin_lo, bin_hi, count)`, the two overflow bins included
        norm_term_trace: `(step, log_s, s, saturated)`
        clamp_count: logits clamped by the exponential overflow guard
        status: `completed` or `diverged`
        halt_step: the global batch index at which a diverged run stopped
    """

    error_curve: list[tuple[int, str, float]] = field(default_factory=list)
    rms_trace: list[tuple[int, int, str, float, float]] = field(default_factory=list)
    delta_histograms: list[tuple[int, float, float, int]] = field(default_factory=list)
    norm_term_trace: list[tuple[int, float, float, bool]] = field(default_factory=list)
    clamp_count: int = 0
    status: str = "completed"
    halt_step: int | None = None
    n_rms_layers: int | None = None

    def curve(self, split: str = "test") -> list[tuple[int, float]]:
        """the `(epoch, error_rate)` pairs of one split, in epoch order"""
        return [(e, r) for e, s, r in self.error_curve if s == split]

    def last_epoch(self, split: str) -> int | None:
        pairs = self.curve(split)
        return pairs[-1][0] if pairs else None

    def min_error(self, split: str = "test") -> float:
        pairs = self.curve(split)
        if not pairs:
            gb_error_abort(f"no {split} errors recorded", DomainError)
        return min(r for _, r in pairs)

    def final_error(self, split: str = "test") -> float:
        pairs = self.curve(split)
        if not pairs:
            gb_error_abort(f"no {split} errors recorded", DomainError)
        return pairs[-1][1]

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"


def error_rate(logits: Tensor, labels: np.ndarray, top_k: int = 1) -> float:
    """
    the misclassification rate

    Args:
        logits: `(batch, num_classes)`
        labels: `(batch)` class indices
        top_k: a prediction is correct if the label is among the `top_k` largest logits

    Returns:
        the fraction of misclassified examples
    """
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        gb_error_abort(f"logits {x.shape} and labels {y.shape} do not match", DimensionError)
    if x.shape[0] == 0:
        gb_error_abort("no examples", DomainError)
    if top_k == 1:
        hits = cast(np.ndarray, predict(x)) == y
    else:
        if not 1 <= top_k <= x.shape[1]:
            gb_error_abort(f"top_k must be in [1, {x.shape[1]}], not {top_k}", DomainError)
        top = np.argsort(-x, axis=1, kind="stable")[:, :top_k]
        hits = np.any(top == y[:, None], axis=1)
    return float(1.0 - np.mean(hits))


def record_epoch_error(rec: DiagnosticsRecord, epoch: int, split: str, rate: float) -> None:
    """
    append an error rate; epochs must increase strictly within each split

    Args:
        rec: the record
        epoch: the epoch (0 for the untrained network)
        split: `train` or `test`
        rate: a misclassification rate in [0, 1]
    """
    if not 0.0 <= rate <= 1.0:
        gb_error_abort(f"error rate {rate} is not in [0, 1]", RecordingError)
    last = rec.last_epoch(split)
    if last is not None and epoch <= last:
        gb_error_abort(
            f"epoch {epoch} recorded after epoch {last} for split {split}", RecordingError
        )
    rec.error_curve.append((int(epoch), split, float(rate)))


def convergence_epoch(
    error_curve: DiagnosticsRecord | Sequence[tuple[int, float]] | Sequence[float],
) -> int:
    """
    the epoch of the minimum test error, the earliest one on ties

    Args:
        error_curve: a DiagnosticsRecord (its test curve), `(epoch, rate)` pairs,
            or plain rates for epochs 1, 2, ...

    Returns:
        the epoch
    """
    if isinstance(error_curve, DiagnosticsRecord):
        pairs = error_curve.curve("test")
    else:
        items = list(error_curve)
        if items and isinstance(items[0], tuple):
            pairs = [(int(e), float(r)) for e, r in cast(list[tuple[int, float]], items)]
        else:
            pairs = [(i, float(cast(float, r))) for i, r in enumerate(items, start=1)]
    if not pairs:
        gb_error_abort("the error curve is empty", DomainError)
    pairs = sorted(pairs)
    best_epoch, best_rate = pairs[0]
    for e, r in pairs[1:]:
        if r < best_rate:
            best_epoch, best_rate = e, r
    return best_epoch


def histogram_counts(
    deltas: Tensor, range_lo: float, range_hi: float, num_bins: int
) -> tuple[np.ndarray, np.ndarray]:
    """
    uniform bins on `[range_lo, range_hi]` plus an underflow and an overflow bin

    Args:
        deltas: any tensor
        range_lo: lower edge
        range_hi: upper edge, included in the last regular bin
        num_bins: number of regular bins

    Returns:
        the `num_bins + 3` edges, from `-inf` to `inf`, and the `num_bins + 2` counts;
        non-finite values other than `-inf` go to the overflow bin
    """
    if not range_lo < range_hi:
        gb_error_abort(f"invalid range [{range_lo}, {range_hi}]", DomainError)
    if num_bins < 1:
        gb_error_abort(f"num_bins must be at least 1, not {num_bins}", DomainError)
    d = np.asarray(deltas, dtype=np.float64).ravel()
    inner = np.linspace(range_lo, range_hi, num_bins + 1)
    in_range = (d >= range_lo) & (d <= range_hi)
    counts_in, _ = np.histogram(d[in_range], bins=inner)
    n_under = int(np.count_nonzero(d < range_lo))
    n_over = d.size - n_under - int(np.count_nonzero(in_range))
    edges = np.concatenate(([-np.inf], inner, [np.inf]))
    counts = np.concatenate(([n_under], counts_in, [n_over])).astype(np.int64)
    return edges, counts


def record_delta_histogram(
    rec: DiagnosticsRecord,
    deltas: Tensor,
    range_lo: float = HIST_RANGE[0],
    range_hi: float = HIST_RANGE[1],
    num_bins: int = HIST_BINS,
    checkpoint: int = 0,
) -> np.ndarray:
    """
    bin the output deltas at a checkpoint; the counts add up to `deltas.size`

    Args:
        rec: the record
        deltas: the output deltas
        range_lo: lower edge of the regular bins
        range_hi: upper edge of the regular bins
        num_bins: number of regular bins
        checkpoint: the label of the checkpoint (the epoch in training runs)

    Returns:
        the counts
    """
    edges, counts = histogram_counts(deltas, range_lo, range_hi, num_bins)
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        rec.delta_histograms.append((int(checkpoint), float(lo), float(hi), int(c)))
    return counts


class RmsAccumulator:
    """
    pools squared deltas and parameter gradients of the dense and conv2d layers
    over several backward passes
    """

    def __init__(self, layer_kinds: list[str]) -> None:
        self.layers = [i for i, k in enumerate(layer_kinds) if k in RMS_LAYER_KINDS]
        self.kinds = [layer_kinds[i] for i in self.layers]
        n = len(self.layers)
        self.delta_sq = np.zeros(n)
        self.delta_n = np.zeros(n, dtype=np.int64)
        self.param_sq = np.zeros(n)
        self.param_n = np.zeros(n, dtype=np.int64)
        self.n_passes = 0

    def add(self, grads: GradientSet) -> None:
        if len(grads.input_deltas) <= max(self.layers, default=-1):
            gb_error_abort(
                f"{len(grads.input_deltas)} layers in the gradients; expected more than"
                f" {max(self.layers)}",
                RecordingError,
            )
        for j, i in enumerate(self.layers):
            d = grads.input_deltas[i].ravel()
            self.delta_sq[j] += float(np.dot(d, d))
            self.delta_n[j] += d.size
            for g in grads.param_grads[i].values():
                gf = g.ravel()
                self.param_sq[j] += float(np.dot(gf, gf))
                self.param_n[j] += gf.size
        self.n_passes += 1

    def values(self) -> list[tuple[int, str, float, float]]:
        """`(layer_index, layer_kind, rms_delta, rms_param_grad)` per layer"""
        if self.n_passes == 0:
            gb_error_abort("nothing accumulated", DomainError)
        rms_delta = np.sqrt(self.delta_sq / np.maximum(self.delta_n, 1))
        rms_param = np.sqrt(self.param_sq / np.maximum(self.param_n, 1))
        return [
            (i, k, float(rd), float(rp))
            for i, k, rd, rp in zip(self.layers, self.kinds, rms_delta, rms_param)
        ]


def record_rms_gradients(
    rec: DiagnosticsRecord,
    epoch: int,
    source: GradientSet | RmsAccumulator,
    layer_kinds: list[str] | None = None,
) -> None:
    """
    one RMS per dense or conv2d layer for this epoch, of the delta with respect to
    the layer's input and of its parameter gradients

    Args:
        rec: the record
        epoch: the epoch
        source: a single GradientSet, or an RmsAccumulator pooled over batches
        layer_kinds: the kinds of the network's layers; required with a GradientSet
    """
    if isinstance(source, GradientSet):
        if layer_kinds is None:
            gb_error_abort("layer_kinds is needed with a GradientSet", RecordingError)
        kinds = cast(list[str], layer_kinds)
        rows = []
        for i, k in enumerate(kinds):
            if k in RMS_LAYER_KINDS:
                param = np.concatenate([g.ravel() for g in source.param_grads[i].values()])
                rows.append((i, k, rms(source.input_deltas[i]), rms(param)))
    else:
        rows = source.values()
    if rec.n_rms_layers is None:
        rec.n_rms_layers = len(rows)
    elif rec.n_rms_layers != len(rows):
        gb_error_abort(
            f"{len(rows)} layers at epoch {epoch}, {rec.n_rms_layers} before", RecordingError
        )
    for i, k, rd, rp in rows:
        rec.rms_trace.append((int(epoch), i, k, rd, rp))


def record_norm_term(rec: DiagnosticsRecord, step: int, logits_batch: Tensor) -> None:
    """
    record the batch means of `log_s` and `s`; `s` is `inf` and the step is flagged
    as saturated if any row overflows

    Args:
        rec: the record
        step: the global batch index
        logits_batch: `(batch, num_classes)`
    """
    x = np.atleast_2d(np.asarray(logits_batch, dtype=np.float64))
    if x.shape[0] == 0:
        gb_error_abort("empty batch", DomainError)
    terms = [normalization_term(row) for row in x]
    log_s = float(np.mean([t.log_s for t in terms]))
    saturated = any(t.saturated for t in terms)
    s = float("inf") if saturated else float(np.mean([t.s for t in terms]))
    if saturated:
        logger.debug(f"step {step}: the softmax normalization term overflows")
    rec.norm_term_trace.append((int(step), log_s, s, saturated))


def record_frames(rec: DiagnosticsRecord) -> dict[str, pd.DataFrame]:
    """the four tables, keyed by file name"""
    norm_rows = [(st, ls, s, int(sat)) for st, ls, s, sat in rec.norm_term_trace]
    return {
        "errors.csv": pd.DataFrame(rec.error_curve, columns=ERRORS_COLUMNS),
        "rms.csv": pd.DataFrame(rec.rms_trace, columns=RMS_COLUMNS),
        "hist.csv": pd.DataFrame(rec.delta_histograms, columns=HIST_COLUMNS),
        "normterm.csv": pd.DataFrame(norm_rows, columns=NORMTERM_COLUMNS),
    }


def write_frame(df: pd.DataFrame, path: Path) -> None:
    """CSV with 17 significant digits and Unix line endings"""
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


@log_execution
def emit_csv(rec: DiagnosticsRecord, out_dir: str | Path) -> list[Path]:
    """
    write `errors.csv`, `rms.csv`, `hist.csv` and `normterm.csv`, overwriting

    Args:
        rec: the record
        out_dir: the directory, created if needed

    Returns:
        the four paths
    """
    out = mkdir_if_needed(out_dir)
    paths = []
    for name, df in record_frames(rec).items():
        path = out / name
        write_frame(df, path)
        paths.append(path)
    return paths


def median_curve(records: list[DiagnosticsRecord], split: str = "test") -> pd.DataFrame:
    """
    per epoch, the median error over the records that reached it

    Args:
        records: one per trial
        split: `train` or `test`

    Returns:
        a data frame with columns `epoch, median_error, n_trials`
    """
    by_epoch: dict[int, list[float]] = {}
    for rec in records:
        for e, r in rec.curve(split):
            by_epoch.setdefault(e, []).append(r)
    rows = [(e, median_of(rates), len(rates)) for e, rates in sorted(by_epoch.items())]
    return pd.DataFrame(rows, columns=["epoch", "median_error", "n_trials"])
