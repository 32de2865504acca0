"""Binary checkpoint files.

Layout: the magic bytes ``b"QASA1"``, an unsigned 64-bit little-endian length of the
metadata, the UTF-8 JSON metadata (sorted keys), and the parameter values as contiguous
little-endian 64-bit floats in the order of the parameter manifest. The metadata holds
``format_version``, the model ``config``, the ``parameters`` manifest (a list of
``{path, shape, offset}`` entries, `offset` counting bytes from the start of the values)
and free-form training ``info``.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .model import Model, ModelConfig

__all__ = ["MAGIC", "FORMAT_VERSION", "Checkpoint"]

logger = logging.getLogger(__name__)

MAGIC = b"QASA1"
FORMAT_VERSION = 1

_LENGTH = struct.Struct("<Q")
_FLOAT = np.dtype("<f8")


@dataclass
class Checkpoint:
    """A snapshot of a model's configuration and parameters.

    Parameters
    ----------
    config : ModelConfig
        The configuration of the model.

    state : dict
        Parameter arrays by path, in manifest order.

    info : dict, optional
        JSON-serializable training information, e.g. the epoch and validation MSE at
        which the snapshot was taken.
    """

    config: ModelConfig
    state: Dict[str, np.ndarray]
    info: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Model, **info) -> "Checkpoint":
        return cls(model.config, model.state_dict(), dict(info))

    def to_model(self) -> Model:
        return Model(self.config, self.state)

    def to_bytes(self) -> bytes:
        manifest, chunks, offset = [], [], 0
        for path, values in self.state.items():
            chunk = np.ascontiguousarray(values, dtype=_FLOAT).tobytes()
            manifest.append({"path": path, "shape": list(np.shape(values)), "offset": offset})
            chunks.append(chunk)
            offset += len(chunk)
        metadata = json.dumps(
            {
                "format_version": FORMAT_VERSION,
                "config": self.config.to_dict(),
                "parameters": manifest,
                "info": self.info,
            },
            sort_keys=True,
        ).encode("utf-8")
        return MAGIC + _LENGTH.pack(len(metadata)) + metadata + b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        header = len(MAGIC) + _LENGTH.size
        if data[: len(MAGIC)] != MAGIC or len(data) < header:
            raise ContractViolation("Not a checkpoint: the magic bytes do not match.")
        (length,) = _LENGTH.unpack_from(data, len(MAGIC))
        try:
            metadata = json.loads(data[header : header + length].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ContractViolation(f"Corrupt checkpoint metadata: {e}")

        if not isinstance(metadata, dict):
            raise ContractViolation("Corrupt checkpoint metadata: expected a JSON object.")
        version = metadata.get("format_version")
        if version != FORMAT_VERSION:
            raise ConfigurationError(
                f"Unsupported checkpoint format version {version}, expected {FORMAT_VERSION}."
            )
        if not isinstance(metadata.get("parameters"), list) or "config" not in metadata:
            raise ContractViolation("Corrupt checkpoint metadata: the config or the manifest is missing.")

        values = memoryview(data)[header + length :]
        state = {}
        for entry in metadata["parameters"]:
            path, shape, start = _manifest_entry(entry)
            count = int(np.prod(shape, dtype=int))
            if start + count * _FLOAT.itemsize > len(values):
                raise ContractViolation(
                    f"Truncated checkpoint: parameter '{path}' runs past the end of the file."
                )
            state[path] = (
                np.frombuffer(values, dtype=_FLOAT, count=count, offset=start)
                .astype(np.float64)
                .reshape(shape)
            )
        return cls(ModelConfig.from_dict(metadata["config"]), state, metadata.get("info", {}))

    def save(self, path: Union[str, Path]):
        Path(path).write_bytes(self.to_bytes())
        logger.debug("Wrote checkpoint to %s", path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def _manifest_entry(entry) -> Tuple[str, Tuple[int, ...], int]:
    try:
        path, shape, offset = entry["path"], tuple(entry["shape"]), entry["offset"]
    except (KeyError, TypeError) as e:
        raise ContractViolation(f"Corrupt checkpoint manifest entry {entry!r}: {e!r}.")
    valid_offset = isinstance(offset, int) and not isinstance(offset, bool) and offset >= 0
    valid_shape = all(isinstance(extent, int) and extent >= 0 for extent in shape)
    if not isinstance(path, str) or not valid_offset or not valid_shape:
        raise ContractViolation(f"Corrupt checkpoint manifest entry {entry!r}.")
    return path, shape, offset
