import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from gbnet.cli import main, parse_grid
from gbnet.datasets import DatasetConfig, load_source, write_cifar10
from gbnet.diagnostics import DiagnosticsRecord, emit_csv
from gbnet.gbutils import ConfigurationError, DomainError
from gbnet.layers import GradientSet, LayerSpec, build_network
from gbnet.runner import (
    DiagnosticsConfig,
    MomentumState,
    ModelConfig,
    OptimConfig,
    RunConfig,
    RunSettings,
    build_model,
    compare_heads,
    convergence_ratios,
    head_from_config,
    load_config,
    median_hidden_rms,
    rms_ratios,
    run_config_from_dict,
    run_trials,
    sgd_step,
    train_run,
    with_head,
)

CONFIG_DIR = Path(__file__).parents[1] / "configs"


def one_weight_net(w=1.0):
    net = build_network([LayerSpec("dense", n_out=1)], (1,))
    net.params[0]["w"][...] = w
    return net


def grads_of(gw, gb=0.0):
    return GradientSet(
        param_grads=[{"w": np.array([[gw]]), "b": np.array([gb])}],
        input_deltas=[np.zeros((1, 1))],
    )


def head_kwargs(name):
    spec, label = head_from_config(name)
    return {"head": spec, "head_name": label}


def small_config(head="linear_mse", epochs=3, trials=1, workers=1, **diag):
    blobs = {"num_classes": 3, "per_class": 40, "dim": 4, "spread": 0.5, "test_fraction": 0.25}
    return RunConfig(
        dataset=DatasetConfig(blobs=blobs),
        model=ModelConfig(hidden=[8]),
        optim=OptimConfig(lr=0.05, batch_size=16, epochs=epochs),
        run=RunSettings(seed=0, trials=trials, workers=workers),
        diagnostics=DiagnosticsConfig(**diag),
        **head_kwargs(head),
    )


def test_sgd_step_plain():
    net = one_weight_net(1.0)
    sgd_step(net, grads_of(2.0), 0.1, MomentumState())
    assert np.isclose(net.params[0]["w"][0, 0], 0.8)
    sgd_step(net, grads_of(2.0), 0.0, MomentumState())
    assert np.isclose(net.params[0]["w"][0, 0], 0.8)
    with pytest.raises(DomainError):
        sgd_step(net, grads_of(2.0), -0.1, MomentumState())


def test_sgd_step_momentum():
    net = one_weight_net(1.0)
    state = MomentumState(momentum=0.9)
    sgd_step(net, grads_of(1.0), 0.1, state)
    assert np.isclose(net.params[0]["w"][0, 0], 0.9)
    # v = 0.9 * 1 + 1
    sgd_step(net, grads_of(1.0), 0.1, state)
    assert np.isclose(state.velocity[0]["w"][0, 0], 1.9)
    assert np.isclose(net.params[0]["w"][0, 0], 0.71)


def test_sgd_step_incongruent():
    net = one_weight_net()
    bad = GradientSet(param_grads=[{"w": np.zeros((2, 1)), "b": np.zeros(1)}], input_deltas=[])
    with pytest.raises(ValueError):
        sgd_step(net, bad, 0.1, MomentumState())


def test_config_parsing():
    cfg = run_config_from_dict(
        {
            "optim": {"lr": 0.2, "lr_per_head": {"exp_gb": 0.01}},
            "head": {"name": "small_exp", "kind": "exp_gb", "alpha": 0.01},
        }
    )
    assert cfg.optim.lr == 0.2
    assert cfg.head_name == "small_exp"
    assert cfg.head.alpha == 0.01 and cfg.head.target_pos == 16.0
    assert with_head(cfg, "exp_gb").optim.lr == 0.01
    assert with_head(cfg, "pow3_gb").optim.lr == 0.2
    assert run_config_from_dict({"head": "pow3_gb"}).head.alpha == 0.001
    with pytest.raises(ConfigurationError):
        run_config_from_dict({"optim": {"learning_rate": 0.1}})
    with pytest.raises(ConfigurationError):
        run_config_from_dict({"trainer": {}})
    with pytest.raises(ConfigurationError):
        run_config_from_dict({"optim": {"momentum": 1.0}})
    with pytest.raises(ConfigurationError):
        run_config_from_dict({"model": {"preset": "resnet"}})


def test_load_shipped_configs():
    for path in sorted(CONFIG_DIR.glob("*.json")):
        cfg = load_config(path)
        assert cfg.optim.epochs >= 1
        assert cfg.head_name
    cifar = load_config(CONFIG_DIR / "cifar_cnn10.json")
    assert cifar.model.preset == "cnn10"


def test_load_config_errors(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(path)
    with pytest.raises(OSError):
        load_config(tmp_path / "missing.json")


def test_build_model_presets():
    net = build_model(ModelConfig(hidden=[7, 5]), (4,), 3, seed=0)
    assert net.layer_kinds == ["dense", "activation", "dense", "activation", "dense"]
    cnn = build_model(ModelConfig(preset="cnn5"), (3, 8, 8), 10, seed=0)
    assert cnn.layer_kinds.count("conv2d") == 4
    assert cnn.shapes[-1] == (10,)
    cnn10 = build_model(ModelConfig(preset="cnn10", batchnorm=False), (3, 8, 8), 10, seed=0)
    assert cnn10.layer_kinds.count("conv2d") == 9
    assert not cnn10.has_batchnorm
    with pytest.raises(ConfigurationError):
        build_model(ModelConfig(preset="cnn5"), (12,), 10, seed=0)
    explicit = ModelConfig(layers=[{"kind": "dense", "n_out": 3}])
    assert build_model(explicit, (4,), 3, seed=0).layer_kinds == ["dense"]
    with pytest.raises(ConfigurationError):
        build_model(explicit, (4,), 5, seed=0)


def test_train_run_zero_epochs():
    _, rec = train_run(small_config(), trial_seed=0, epochs=0)
    assert rec.curve("test")[0][0] == 0
    assert [e for e, _, _ in rec.error_curve] == [0, 0]
    assert rec.rms_trace == [] and rec.delta_histograms == []


def test_train_run_is_deterministic(tmp_path):
    cfg = small_config()
    data = load_source(cfg.dataset)
    _, rec_a = train_run(cfg, trial_seed=3, data=data)
    _, rec_b = train_run(cfg, trial_seed=3, data=data)
    emit_csv(rec_a, tmp_path / "a")
    emit_csv(rec_b, tmp_path / "b")
    for name in ("errors.csv", "rms.csv", "hist.csv", "normterm.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    _, rec_c = train_run(cfg, trial_seed=4, data=data)
    assert rec_c.rms_trace != rec_a.rms_trace


def test_train_run_learns_blobs():
    cfg = RunConfig(
        optim=OptimConfig(lr=0.05, batch_size=16, epochs=20), **head_kwargs("linear_mse")
    )
    _, rec = train_run(cfg, trial_seed=0)
    assert rec.status == "completed"
    assert rec.final_error("test") < 0.05
    assert [e for e, _ in rec.curve("train")] == list(range(1, 21))
    # two dense layers, one row each per epoch
    assert len(rec.rms_trace) == 2 * 20
    assert len(rec.norm_term_trace) == 20


def test_histograms_bounded_and_unbounded_heads():
    def first_hist(head):
        _, rec = train_run(small_config(head, epochs=1), trial_seed=0)
        return pd.DataFrame(rec.delta_histograms, columns=["checkpoint", "lo", "hi", "count"])

    soft = first_hist("softmax_ce")
    assert soft.loc[(soft["hi"] <= -1.0) | (soft["lo"] >= 1.0), "count"].sum() == 0
    exp = first_hist("exp_gb")
    assert exp.loc[exp["hi"] <= -6.0, "count"].sum() > 0


def cifar_files(path, per_file=24, n_test=16):
    rng = np.random.default_rng(3)
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]
    for name in names:
        n = n_test if name == "test_batch.bin" else per_file
        images = rng.integers(0, 256, size=(n, 3, 32, 32), dtype=np.uint8)
        write_cifar10(path / name, images, rng.integers(0, 10, size=n))


def test_cnn5_on_cifar_files(tmp_path):
    cifar_files(tmp_path)
    dataset = DatasetConfig(source="cifar10", path=str(tmp_path), layout="image", standardize=True)
    data = load_source(dataset)

    def run(head):
        cfg = RunConfig(
            dataset=dataset,
            model=ModelConfig(preset="cnn5", channels=[8, 8, 16, 16]),
            optim=OptimConfig(lr=0.01, batch_size=40, epochs=1),
            run=RunSettings(seed=0),
            diagnostics=DiagnosticsConfig(rms_batches="first"),
            **head_kwargs(head),
        )
        return train_run(cfg, trial_seed=0, data=data)[1]

    soft, exp = run("softmax_ce"), run("exp_gb")
    assert soft.error_curve[-1][0] == 1
    hist_columns = ["checkpoint", "lo", "hi", "count"]
    soft_hist = pd.DataFrame(soft.delta_histograms, columns=hist_columns)
    assert soft_hist.loc[(soft_hist["hi"] <= -1.0) | (soft_hist["lo"] >= 1.0), "count"].sum() == 0
    exp_hist = pd.DataFrame(exp.delta_histograms, columns=hist_columns)
    assert exp_hist.loc[exp_hist["hi"] <= -6.0, "count"].sum() > 0

    # same weights and first batch for both heads
    step, _, s_init, saturated = soft.norm_term_trace[0]
    assert step == 0 and not saturated
    assert 10 / 2 <= s_init <= 10 * 10
    assert exp.norm_term_trace[0][2] == s_init

    rms_columns = ["epoch", "layer", "kind", "rms_delta", "rms_grad"]
    soft_rms = pd.DataFrame(soft.rms_trace, columns=rms_columns)
    exp_rms = pd.DataFrame(exp.rms_trace, columns=rms_columns)
    conv = soft_rms["kind"] == "conv2d"
    assert conv.sum() == 4
    ratios = exp_rms.loc[conv, "rms_delta"] / soft_rms.loc[conv, "rms_delta"]
    assert (ratios > 2.0).all()

def test_divergence_is_a_status():
    cfg = small_config("exp_gb", divergence_ceiling=1e-3)
    _, rec = train_run(cfg, trial_seed=0)
    assert rec.diverged
    assert rec.halt_step == 0
    assert rec.error_curve == []
    summary = run_trials(cfg)
    assert summary.n_completed == 0
    assert np.isnan(summary.median_min_error)
    assert summary.results[0].status == "diverged"


def test_run_trials(tmp_path):
    cfg = small_config(trials=3, workers=2)
    summary = run_trials(cfg, tmp_path)
    assert [r.seed for r in summary.results] == [0, 1, 2]
    assert summary.n_completed == 3
    df = pd.read_csv(tmp_path / "summary.csv")
    assert list(df.columns) == ["head", "trial", "min_error", "convergence_epoch", "status"]
    assert len(df) == 3
    for k in range(3):
        assert (tmp_path / f"trial_{k}" / "errors.csv").exists()
    curve = pd.read_csv(tmp_path / "median_curve.csv")
    assert curve["epoch"].tolist() == [1, 2, 3]
    saved = json.loads((tmp_path / "config.json").read_text())
    assert saved["head"]["name"] == "linear_mse"
    # the threads do not change the results
    serial = run_trials(small_config(trials=3, workers=1))
    assert [r.min_error for r in serial.results] == [r.min_error for r in summary.results]


def test_rms_ratios():
    recs = [DiagnosticsRecord(), DiagnosticsRecord()]
    for rec, hidden in zip(recs, (2.0, 4.0)):
        rec.rms_trace = [(1, 0, "dense", hidden, 0.1), (1, 2, "dense", 9.0, 0.1)]
    med = median_hidden_rms(recs)
    assert med["layer_index"].tolist() == [0]
    assert med["rms_delta"].tolist() == [3.0]
    zero = med.assign(rms_delta=0.0)
    table = rms_ratios([("exp_gb", med), ("softmax_ce", med.assign(rms_delta=1.5)), ("dead", zero)])
    assert len(table) == 6
    first = table.iloc[0]
    assert (first["head_a"], first["head_b"], first["rms_ratio"]) == ("exp_gb", "softmax_ce", 2.0)
    assert table.loc[table["head_b"] == "dead", "rms_ratio"].isna().all()
    assert median_hidden_rms([]).empty
    assert rms_ratios([("a", med)]).empty

def test_compare_duplicate_heads(tmp_path):
    cfg = small_config(trials=2)
    comparison, ratios = compare_heads(cfg, ["linear_mse", "linear_mse"], tmp_path)
    assert len(comparison) == 2
    first, second = comparison.iloc[0], comparison.iloc[1]
    for col in ("median_min_error", "median_convergence_epoch", "median_final_error"):
        assert first[col] == second[col]
    assert ratios["convergence_ratio"].tolist() == [1.0, 1.0]
    rms = pd.read_csv(tmp_path / "rms_ratios.csv")
    assert list(rms.columns) == ["epoch", "layer_index", "head_a", "head_b", "rms_ratio"]
    # one hidden dense layer, three epochs, two ordered pairs
    assert len(rms) == 6
    assert rms["layer_index"].tolist() == [0] * 6
    assert rms["rms_ratio"].tolist() == [1.0] * 6
    assert (tmp_path / "linear_mse" / "summary.csv").exists()
    assert (tmp_path / "linear_mse_2" / "summary.csv").exists()
    for name in ("comparison.csv", "ratios.csv", "median_curves.csv"):
        assert (tmp_path / name).exists()
    with pytest.raises(ConfigurationError):
        compare_heads(cfg, ["linear_mse"])


def test_convergence_ratios():
    comparison = pd.DataFrame(
        {"head": ["a", "b", "c"], "median_convergence_epoch": [4.0, 8.0, float("nan")]}
    )
    ratios = convergence_ratios(comparison)
    assert len(ratios) == 6
    row = ratios[(ratios["head_a"] == "a") & (ratios["head_b"] == "b")]
    assert row["convergence_ratio"].iloc[0] == 0.5
    row = ratios[(ratios["head_a"] == "b") & (ratios["head_b"] == "a")]
    assert row["convergence_ratio"].iloc[0] == 2.0
    assert ratios[ratios["head_b"] == "c"]["convergence_ratio"].isna().all()


def test_parse_grid():
    assert np.allclose(parse_grid("2.4:3.2:0.1"), np.arange(2.4, 3.25, 0.1))
    assert parse_grid("0:1:0.5").tolist() == [0.0, 0.5, 1.0]
    with pytest.raises(DomainError):
        parse_grid("0:1")
    with pytest.raises(DomainError):
        parse_grid("1:0:0.1")


def test_cli_curvature(tmp_path):
    assert main(["curvature", "--s", "10", "--grid", "2.4:3.2:0.1", "--out", str(tmp_path)]) == 0
    ordering = pd.read_csv(tmp_path / "ordering.csv")
    assert len(ordering) == 9
    assert ordering["chain_holds"].tolist() == [1] * 9
    assert (tmp_path / "hessians.csv").exists()
    assert main(["curvature", "--s", "0.5", "--grid", "0:1:0.5"]) == 2


def test_cli_curvature_large_logits(tmp_path):
    assert main(["curvature", "--s", "10", "--grid", "0:400:100", "--out", str(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "hessians.csv")
    assert len(table) == 5 * 6
    last_exp = table[(table["kind"] == "exp") & (table["x"] == 400.0)]
    assert len(last_exp) == 1
    assert np.isposinf(last_exp["closed_form"].iloc[0])


def test_cli_check_grad(tmp_path):
    assert main(["check-grad", "--seed", "0", "--out", str(tmp_path / "grad.csv")]) == 0
    df = pd.read_csv(tmp_path / "grad.csv")
    assert df["passed"].all()


def test_cli_run(tmp_path):
    config = {
        "dataset": {"source": "blobs", "blobs": {"num_classes": 3, "per_class": 20, "dim": 4}},
        "model": {"preset": "mlp", "hidden": [6]},
        "head": "softmax_ce",
        "optim": {"lr": 0.1, "batch_size": 8, "epochs": 2},
        "run": {"seed": 5, "trials": 2},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 0
    assert len(pd.read_csv(tmp_path / "out" / "summary.csv")) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
