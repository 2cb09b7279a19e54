"""Harness, CLI and plot tests on miniature runs."""

import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from pode.autodiff import Parameter
from pode.cli import cli
from pode.data import Dataset, TimeSeriesSample, gen_synthetic_suite, save_dataset
from pode.harness import (
    Adam,
    HarnessError,
    RunConfig,
    config_from_strings,
    evaluate_checkpoint,
    evaluate_model,
    load_config,
    train,
)


def tiny_dataset(n=10, seed=0):
    return gen_synthetic_suite(n=n, seed=seed, n_points=24, n_grid=120)


def tiny_config(tmp_path, **kw):
    args = dict(mode="pode", out_dir=str(tmp_path / "run"), k=3,
                epochs_per_stage=2, batch_size=4, gru_width=8, net_width=8,
                d_latent=4, seed=0)
    args.update(kw)
    return RunConfig(**args)


# ---------------------------------------------------------------------------
# config


def test_config_file_and_overrides(tmp_path):
    path = str(tmp_path / "run.cfg")
    with open(path, "w") as fh:
        fh.write("# comment\nmode=node\nk=2\ncutoffs=2.5\nlearning_rate=0.02\n")
    cfg = load_config(path, overrides={"k": "3", "cutoffs": "1.5,9.0"})
    assert cfg.mode == "node"
    assert cfg.k == 3
    assert cfg.cutoffs == (1.5, 9.0)
    assert cfg.learning_rate == 0.02


def test_config_rejects_unknown_key():
    with pytest.raises(HarnessError):
        config_from_strings({"optimizer": "sgd"})


def test_config_rejects_bad_mode():
    with pytest.raises(HarnessError):
        RunConfig(mode="sgd")


def test_config_malformed_line(tmp_path):
    path = str(tmp_path / "run.cfg")
    with open(path, "w") as fh:
        fh.write("mode pode\n")
    with pytest.raises(HarnessError) as exc:
        load_config(path)
    assert ":1:" in str(exc.value)


def test_env_seed_override(monkeypatch):
    monkeypatch.setenv("PODE_SEED", "77")
    assert RunConfig(seed=3).seed == 77
    monkeypatch.delenv("PODE_SEED")
    assert RunConfig(seed=3).seed == 3


def test_plan_mirrors_config():
    cfg = RunConfig(k=3, epochs_per_stage=5, cutoffs=(2.0, 8.0))
    plan = cfg.plan()
    assert plan.k == 3
    assert plan.epochs_per_stage == [5, 5, 5]
    assert plan.cutoffs == (2.0, 8.0)


# ---------------------------------------------------------------------------
# optimizer


def test_adam_matches_hand_computation():
    p = Parameter(np.array([1.0]), "w")
    opt = Adam([p], lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)

    m = v = 0.0
    x = 1.0
    for step in range(1, 3):
        g = 2.0 * x  # gradient of x^2
        p.grad[...] = 2.0 * p.array
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1.0 - 0.9 ** step)
        vhat = v / (1.0 - 0.999 ** step)
        x = x - 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
        assert p.array[0] == pytest.approx(x, abs=1e-14)


def test_adam_add_params_keeps_existing_state():
    a = Parameter(np.array([1.0]), "a")
    opt = Adam([a], lr=0.1)
    a.grad[...] = 1.0
    opt.step()
    state_a = opt.state["a"][0].copy()
    b = Parameter(np.array([2.0]), "b")
    opt.add_params([a, b])  # re-adding a must not reset it
    assert np.array_equal(opt.state["a"][0], state_a)
    assert "b" in opt.state
    assert len(opt.params) == 2


# ---------------------------------------------------------------------------
# training


def test_pode_training_run_artifacts(tmp_path):
    cfg = tiny_config(tmp_path)
    model, report = train(cfg, tiny_dataset())
    out = cfg.out_dir
    for name in ("checkpoint_stage1.json", "checkpoint_stage2.json",
                 "checkpoint_stage3.json", "checkpoint_final.json",
                 "metrics.json", "run_info.json"):
        assert os.path.exists(os.path.join(out, name)), name
    assert model.stage == 3
    assert np.isfinite(report["test_mse_raw"])
    # accounting: epochs x ceil(n_train/batch) updates
    assert report["n_updates"] == 3 * 2 * 2  # 3 stages x 2 epochs x 2 batches
    assert len(report["train_curves"]) == 3


def test_node_training_same_budget(tmp_path):
    cfg = tiny_config(tmp_path, mode="node")
    model, report = train(cfg, tiny_dataset())
    assert model.stage == 3  # full depth from the start
    assert report["n_updates"] == 3 * 2 * 2  # same total budget, one stage
    assert len(report["train_curves"]) == 1
    assert len(report["train_curves"][0]) == 6


def test_budget_fairness_config_echo(tmp_path):
    pode = tiny_config(tmp_path, out_dir=str(tmp_path / "p")).echo()
    node = tiny_config(tmp_path, mode="node", out_dir=str(tmp_path / "n")).echo()
    for d in (pode, node):
        d.pop("mode")
        d.pop("out_dir")
    assert pode == node


def test_metrics_report_embeds_config(tmp_path):
    cfg = tiny_config(tmp_path)
    train(cfg, tiny_dataset())
    with open(os.path.join(cfg.out_dir, "metrics.json")) as fh:
        report = json.load(fh)
    assert report["config"] == cfg.echo()
    assert report["test_mse_raw"] >= 0.0


def test_training_determinism_byte_identical(tmp_path):
    # same config (including out_dir) and seed, run twice
    blobs = []
    for _ in range(2):
        cfg = tiny_config(tmp_path)
        train(cfg, tiny_dataset())
        with open(os.path.join(cfg.out_dir, "metrics.json"), "rb") as fh:
            blobs.append(fh.read())
    assert blobs[0] == blobs[1]


def test_divergence_reports_stage_and_epoch(tmp_path):
    ds = tiny_dataset()
    ds.samples[0].values[3] = np.nan
    cfg = tiny_config(tmp_path)
    with pytest.raises(HarnessError) as exc:
        train(cfg, ds)
    assert "stage 1" in str(exc.value)
    assert "epoch 0" in str(exc.value)


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_perfect_oracle_is_zero():
    class Oracle:
        def forecast_values(self, times, values, split):
            return values[:, split:]

    ds = tiny_dataset()
    from pode.data import fit_normalizer

    norm = fit_normalizer(ds)
    report = evaluate_model(Oracle(), ds, norm)
    # exact up to the normalize/denormalize float round trip
    assert report["mse"] == pytest.approx(0.0, abs=1e-24)


def test_evaluate_constant_mean_predictor_matches_variance():
    class MeanModel:
        def forecast_values(self, times, values, split):
            # predicts the normalized train mean, i.e. raw shift
            return np.zeros((times.shape[0], times.shape[1] - split))

    ds = tiny_dataset()
    from pode.data import fit_normalizer

    norm = fit_normalizer(ds)
    report = evaluate_model(MeanModel(), ds, norm)
    expected = np.mean([
        np.mean((s.values[s.split_index:] - norm.shift) ** 2)
        for s in ds.test
    ])
    assert report["mse"] == pytest.approx(expected, rel=1e-12)


def test_evaluate_twice_identical(tmp_path):
    cfg = tiny_config(tmp_path, k=2, cutoffs=(2.0,))
    train(cfg, tiny_dataset())
    ds_path = str(tmp_path / "ds.jsonl")
    save_dataset(tiny_dataset(), ds_path)
    ckpt = os.path.join(cfg.out_dir, "checkpoint_final.json")
    a = evaluate_checkpoint(ckpt, ds_path)
    b = evaluate_checkpoint(ckpt, ds_path)
    assert a == b
    assert a["stage"] == 2


# ---------------------------------------------------------------------------
# plots


def test_plot_svg_contract(tmp_path):
    from pode.data import fit_normalizer
    from pode.model import LatentOdeModel
    from pode.plotting import plot_sample

    ds = tiny_dataset()
    norm = fit_normalizer(ds)
    model = LatentOdeModel(seed=0, gru_width=8, net_width=8, d_latent=4)
    path = str(tmp_path / "fig.svg")
    plot_sample(model, ds.samples[0], norm, path)

    root = ET.parse(path).getroot()  # well-formed XML
    text = open(path).read()
    for color in ("green", "orange", "purple"):
        assert color in text
    polylines = [e for e in root.iter() if e.tag.endswith("polyline")]
    assert len(polylines) == 1
    assert len(polylines[0].attrib["points"].split()) >= 200
    assert "observed" in text and "ground truth" in text and "prediction" in text


# ---------------------------------------------------------------------------
# CLI


def run_cli(*argv):
    return cli(list(argv))


def test_cli_help_exits_zero(capsys):
    assert run_cli("--help") == 0
    for sub in ("generate", "ingest", "train", "eval", "plot", "baseline"):
        assert run_cli(sub, "--help") == 0
    capsys.readouterr()


def test_cli_generate_deterministic(tmp_path, capsys):
    a, b = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    assert run_cli("generate", "--n", "5", "--seed", "7", "--n-points", "24",
                   "--n-grid", "120", "--out", a) == 0
    assert run_cli("generate", "--n", "5", "--seed", "7", "--n-points", "24",
                   "--n-grid", "120", "--out", b) == 0
    assert open(a, "rb").read() == open(b, "rb").read()
    capsys.readouterr()


def test_cli_full_pipeline(tmp_path, capsys):
    ds = str(tmp_path / "ds.jsonl")
    out = str(tmp_path / "run")
    assert run_cli("generate", "--n", "10", "--seed", "1", "--n-points", "24",
                   "--n-grid", "120", "--out", ds) == 0
    assert run_cli("train", "--mode", "pode", "--dataset", ds, "--out-dir",
                   out, "--k", "2", "--cutoffs", "2.0", "--epochs-per-stage",
                   "2", "--batch-size", "4", "--gru-width", "8",
                   "--net-width", "8", "--d-latent", "4") == 0
    ckpt = os.path.join(out, "checkpoint_final.json")
    report_path = str(tmp_path / "eval.json")
    assert run_cli("eval", "--checkpoint", ckpt, "--dataset", ds,
                   "--out", report_path) == 0
    report = json.loads(open(report_path).read())
    assert np.isfinite(report["mse"])
    figs = str(tmp_path / "figs")
    assert run_cli("plot", "--checkpoint", ckpt, "--dataset", ds,
                   "--samples", "0,1", "--out-dir", figs) == 0
    assert os.path.exists(os.path.join(figs, "sample_0.svg"))
    assert os.path.exists(os.path.join(figs, "sample_1.svg"))
    assert run_cli("baseline", "--name", "static", "--dataset", ds) == 0
    capsys.readouterr()


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert run_cli("eval", "--checkpoint", "missing.json",
                   "--dataset", "missing.jsonl") == 1
    assert run_cli("train") == 1  # no dataset configured
    err = capsys.readouterr().err
    assert "error:" in err


def test_cli_unknown_flag_exits_nonzero(capsys):
    assert run_cli("generate", "--frobnicate", "--out", "x") != 0
    capsys.readouterr()
