import json
import math
from types import SimpleNamespace

import pandas as pd
import pytest

import qasa.circuit
from qasa.cli import BENCH_COLUMNS, COMPARE_COLUMNS, compare, main, markdown_table
from qasa.config import preset
from qasa.errors import NumericalAbort


@pytest.fixture
def tiny_config(tmp_path):
    def write(variant="qasa", **train_overrides):
        path = tmp_path / f"{variant}.json"
        preset(variant, "tiny", train_overrides={"epochs": 1, **train_overrides}).save(path)
        return path

    return write


def fake_run(config, out_dir=None):
    """A stand-in for a training run whose metrics only depend on the seed."""
    seed = config.train.seed
    return SimpleNamespace(checkpoint=SimpleNamespace(info={"val_mse": float(seed), "val_mae": 2.0 * seed}))


def test_generate(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (first, second):
        args = ["generate", "--task", "damped_oscillator", "--length", "2050", "--seed", "42"]
        assert main([*args, "--out", str(path)]) == 0

    frame = pd.read_csv(first)
    assert len(frame) == 2050
    assert frame["value"].iloc[0] == 1.0
    assert first.read_bytes() == second.read_bytes()


def test_that_unknown_tasks_are_usage_errors(tmp_path, capsys):
    assert main(["generate", "--task", "bogus", "--out", str(tmp_path / "s.csv")]) == 2
    assert "sawtooth" in capsys.readouterr().err


def test_train_writes_the_run_files(tiny_config, tmp_path, capsys):
    out_dir = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config()), "--out-dir", str(out_dir)]) == 0

    for name in ("config.json", "checkpoint.qasa", "metrics.csv", "predictions.csv"):
        assert (out_dir / name).is_file()
    metrics = pd.read_csv(out_dir / "metrics.csv")
    assert metrics["split"].tolist() == ["train", "val"]
    predictions = pd.read_csv(out_dir / "predictions.csv")
    assert list(predictions.columns) == ["epoch", "window_id", "prediction", "target"]
    assert "best epoch 0" in capsys.readouterr().out


def test_that_the_transformer_never_runs_the_circuit(tiny_config, tmp_path, mocker):
    spy = mocker.spy(qasa.circuit, "forward")
    assert main(["train", "--config", str(tiny_config("transformer")), "--out-dir", str(tmp_path / "t")]) == 0
    assert spy.call_count == 0
    assert main(["train", "--config", str(tiny_config("qasa")), "--out-dir", str(tmp_path / "q")]) == 0
    assert spy.call_count > 0


def test_that_reruns_give_identical_metrics(tiny_config, tmp_path):
    config = str(tiny_config(record_wall_time=False))
    for run in ("a", "b"):
        assert main(["train", "--config", config, "--out-dir", str(tmp_path / run)]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_eval(tiny_config, tmp_path, capsys):
    config = str(tiny_config())
    assert main(["train", "--config", config, "--out-dir", str(tmp_path)]) == 0
    capsys.readouterr()

    checkpoint = str(tmp_path / "checkpoint.qasa")
    assert main(["eval", "--config", config, "--checkpoint", checkpoint]) == 0
    standardized = capsys.readouterr().out
    assert standardized.startswith("mse=")
    assert main(["eval", "--config", config, "--checkpoint", checkpoint, "--raw-units"]) == 0
    assert capsys.readouterr().out != standardized

    # the desk preset windows do not fit the tiny checkpoint
    assert main(["eval", "--scale", "desk", "--checkpoint", checkpoint]) == 2


def test_that_a_corrupt_checkpoint_manifest_is_a_usage_error(tiny_config, tmp_path, capsys):
    config = str(tiny_config())
    assert main(["train", "--config", config, "--out-dir", str(tmp_path)]) == 0
    checkpoint = tmp_path / "checkpoint.qasa"
    data = checkpoint.read_bytes()
    length = int.from_bytes(data[5:13], "little")
    metadata = json.loads(data[13 : 13 + length])
    del metadata["parameters"][0]["offset"]
    encoded = json.dumps(metadata, sort_keys=True).encode()
    checkpoint.write_bytes(data[:5] + len(encoded).to_bytes(8, "little") + encoded + data[13 + length :])
    capsys.readouterr()

    assert main(["eval", "--config", config, "--checkpoint", str(checkpoint)]) == 2
    assert "manifest" in capsys.readouterr().err


def test_that_invalid_config_fields_are_named(tmp_path, capsys):
    path = tmp_path / "config.json"
    path.write_text('{"train": {"lr": -1}}')
    assert main(["train", "--config", str(path)]) == 2
    assert "train.lr" in capsys.readouterr().err


def test_that_numerical_aborts_exit_with_3(tiny_config, tmp_path, mocker):
    mocker.patch("qasa.cli.train", side_effect=NumericalAbort(0, 1, math.nan))
    assert main(["train", "--config", str(tiny_config()), "--out-dir", str(tmp_path)]) == 3


def test_that_bad_arguments_are_usage_errors(tmp_path):
    assert main([]) == 2
    assert main(["train", "--seed", "x"]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["--version"]) == 0


def test_compare_aggregates_over_seeds(mocker):
    mocker.patch("qasa.cli.run_experiment", side_effect=fake_run)

    table = compare(["arma", "sawtooth"], ["classical", "quantum"], [1, 2, 3], scale="tiny")

    assert list(table.columns) == COMPARE_COLUMNS
    assert table[["task", "model"]].values.tolist() == [
        ["arma", "classical"],
        ["arma", "quantum"],
        ["sawtooth", "classical"],
        ["sawtooth", "quantum"],
    ]
    assert table["mse_mean"].tolist() == [2.0] * 4
    assert table["mse_std"].tolist() == [1.0] * 4
    assert table["mae_std"].tolist() == [2.0] * 4
    assert "| arma | classical | 4.000000 | 2.000000 | 2.000000 | 1.000000 |" in markdown_table(table)


def test_that_compare_does_not_depend_on_the_thread_count(mocker):
    mocker.patch("qasa.cli.run_experiment", side_effect=fake_run)
    args = (["arma", "square_wave"], ["quantum"], [4, 0, 7])
    pd.testing.assert_frame_equal(compare(*args, scale="tiny"), compare(*args, scale="tiny", threads=3))


def test_that_identical_runs_have_zero_spread(tmp_path):
    out = tmp_path / "table"
    args = ["compare", "--tasks", "damped_oscillator", "--models", "quantum", "--seeds", "3", "3"]
    assert main([*args, "--scale", "tiny", "--epochs", "1", "--out", str(out)]) == 0

    table = pd.read_csv(out.with_suffix(".csv"))
    assert len(table) == 1
    assert table["mse_std"].iloc[0] == 0.0
    assert table["mae_std"].iloc[0] == 0.0
    assert out.with_suffix(".md").read_text().startswith("| Task | Model | MAE | MSE | MAE Std | MSE Std |")


def test_that_failed_runs_are_reported(tmp_path, mocker):
    def flaky(config, out_dir=None):
        if config.train.seed == 1:
            raise NumericalAbort(0, 0, math.nan)
        return fake_run(config)

    mocker.patch("qasa.cli.run_experiment", side_effect=flaky)
    out = tmp_path / "table.csv"
    args = ["compare", "--tasks", "arma", "--models", "classical", "quantum", "--seeds", "0", "1"]

    assert main([*args, "--scale", "tiny", "--out", str(out)]) == 1

    table = pd.read_csv(out)
    assert table["status"].tolist() == ["failed", "failed"]
    assert table["mse_mean"].isna().all()


def test_that_compare_needs_two_seeds(tmp_path):
    args = ["compare", "--tasks", "arma", "--seeds", "0", "--out", str(tmp_path / "t")]
    assert main(args) == 2


def test_that_thread_counts_are_validated(tmp_path, monkeypatch, mocker):
    mocker.patch("qasa.cli.run_experiment", side_effect=fake_run)
    monkeypatch.setenv("QASA_THREADS", "zero")
    args = ["compare", "--tasks", "arma", "--scale", "tiny", "--out", str(tmp_path / "t")]
    assert main(args) == 2
    monkeypatch.setenv("QASA_THREADS", "2")
    assert main(args) == 0


def test_bench(tmp_path):
    out = tmp_path / "bench.csv"
    args = ["bench", "--seq-lens", "2", "4", "8", "--variant", "transformer", "--scale", "tiny"]
    assert main([*args, "--repeats", "1", "--out", str(out)]) == 0

    table = pd.read_csv(out)
    assert list(table.columns) == BENCH_COLUMNS
    assert table["seq_len"].tolist() == [2, 4, 8]
    assert table["trials"].tolist() == [1, 1, 1]
    assert (table["median_ms"] > 0).all()


def test_that_bench_needs_ascending_lengths():
    assert main(["bench", "--seq-lens", "8", "4", "--scale", "tiny"]) == 2
