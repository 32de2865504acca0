import json

import numpy as np
import pytest

from qasa.checkpoint import MAGIC, Checkpoint
from qasa.data import SeriesSpec, make_datasets
from qasa.errors import ConfigurationError, ContractViolation
from qasa.model import Model, instantiate_config
from qasa.train import evaluate


@pytest.fixture(params=["transformer", "qasa"])
def model(request):
    return Model(instantiate_config(request.param, "tiny", seed=3))


def forge(data, edit):
    length = int.from_bytes(data[5:13], "little")
    metadata = json.loads(data[13 : 13 + length])
    edit(metadata)
    encoded = json.dumps(metadata, sort_keys=True).encode()
    return MAGIC + len(encoded).to_bytes(8, "little") + encoded + data[13 + length :]


def test_that_saving_and_loading_is_bit_exact(model, tmp_path):
    path = tmp_path / "model.qasa"
    Checkpoint.from_model(model, epoch=4, val_mse=0.125).save(path)

    loaded = Checkpoint.load(path)

    assert loaded.config == model.config
    assert loaded.info == {"epoch": 4, "val_mse": 0.125}
    assert list(loaded.state) == list(model.parameters)
    for name, values in model.state_dict().items():
        assert loaded.state[name].shape == values.shape
        assert loaded.state[name].tobytes() == values.tobytes()


def test_that_a_restored_model_evaluates_identically(model, tmp_path):
    _, val, _ = make_datasets(SeriesSpec(length=40), model.config.seq_len)
    path = tmp_path / "model.qasa"
    Checkpoint.from_model(model).save(path)

    restored = Checkpoint.load(path).to_model()

    assert evaluate(restored, val) == evaluate(model, val)


def test_that_the_layout_starts_with_magic_and_sorted_metadata(model):
    data = Checkpoint.from_model(model).to_bytes()
    assert data.startswith(MAGIC)
    length = int.from_bytes(data[5:13], "little")
    metadata = json.loads(data[13 : 13 + length])
    assert metadata["format_version"] == 1
    assert list(metadata) == sorted(metadata)
    entries = metadata["parameters"]
    assert entries[0]["offset"] == 0
    total = sum(8 * int(np.prod(entry["shape"], dtype=int)) for entry in entries)
    assert len(data) == 13 + length + total


def test_that_foreign_files_are_rejected(model):
    data = Checkpoint.from_model(model).to_bytes()
    with pytest.raises(ContractViolation):
        Checkpoint.from_bytes(b"PK\x03\x04" + data[4:])
    with pytest.raises(ContractViolation):
        Checkpoint.from_bytes(data[:-8])
    with pytest.raises(ContractViolation):
        Checkpoint.from_bytes(MAGIC + data[5:13] + b"\xff" * 10)


def test_that_unknown_format_versions_are_rejected(model):
    forged = forge(Checkpoint.from_model(model).to_bytes(), lambda metadata: metadata.update(format_version=2))
    with pytest.raises(ConfigurationError):
        Checkpoint.from_bytes(forged)


@pytest.mark.parametrize(
    "edit",
    [
        lambda metadata: metadata["parameters"][0].pop("offset"),
        lambda metadata: metadata["parameters"][0].pop("shape"),
        lambda metadata: metadata["parameters"][0].update(offset=-8),
        lambda metadata: metadata["parameters"][0].update(offset=1.5),
        lambda metadata: metadata["parameters"][0].update(offset="0"),
        lambda metadata: metadata["parameters"][0].update(shape=[-1]),
        lambda metadata: metadata["parameters"].insert(0, 7),
        lambda metadata: metadata.update(parameters={}),
        lambda metadata: metadata.pop("config"),
    ],
)
def test_that_malformed_manifests_are_contract_violations(model, edit):
    with pytest.raises(ContractViolation):
        Checkpoint.from_bytes(forge(Checkpoint.from_model(model).to_bytes(), edit))
