"""
Checkpoint container.

    8 bytes   magic "DBTACKPT"
    4 bytes   little-endian manifest length N
    N bytes   UTF-8 JSON manifest: {"arrays": [{"name", "shape", "dtype"}, ...],
                                    "config": {...}, "epoch": int, "history": [...]}
    ...       raw buffers in manifest order

Float tensors are stored as "f32le"; integer buffers (batch-norm counters) as
"i64le". The same container holds frozen-branch weight files.
"""
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from encoder import parameter_checksum
from errors import CheckpointError
from history import TrainingHistory

logger = logging.getLogger(__name__)

MAGIC = b"DBTACKPT"
DTYPES = {"f32le": np.dtype("<f4"), "i64le": np.dtype("<i8")}


@dataclass
class Checkpoint:
    """Parameters plus the metadata echoed into the manifest."""

    state: dict
    config: dict = field(default_factory=dict)
    epoch: int = 0
    history: list = field(default_factory=list)

    def restore(self, model):
        """Load the stored parameters into ``model`` (strict)."""
        try:
            model.load_state_dict(self.state, strict=True)
        except RuntimeError as e:
            raise CheckpointError(f"Checkpoint does not match the model: {e}") from e
        return model

    def training_history(self):
        return TrainingHistory.from_list(self.history)


def _encode(tensor):
    tensor = tensor.detach().cpu().contiguous()
    if tensor.is_floating_point():
        return "f32le", tensor.to(torch.float32).numpy().astype(DTYPES["f32le"], copy=False)
    if tensor.dtype in (torch.int64, torch.int32, torch.int16, torch.int8, torch.uint8, torch.bool):
        return "i64le", tensor.to(torch.int64).numpy().astype(DTYPES["i64le"], copy=False)
    raise CheckpointError(f"Unsupported tensor dtype {tensor.dtype}")


def write_container(path, arrays, **metadata):
    """
    Write named tensors and JSON metadata.

    Args:
        path (str | Path): Destination file
        arrays (dict): Name -> tensor, written in insertion order
        **metadata: Extra JSON-serializable manifest entries
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    entries, buffers = [], []
    for name, tensor in arrays.items():
        dtype, array = _encode(tensor)
        entries.append({"name": name, "shape": list(array.shape), "dtype": dtype})
        buffers.append(array.tobytes())

    manifest = json.dumps({"arrays": entries, **metadata}).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for buffer in buffers:
            f.write(buffer)
    os.replace(tmp, path)


def read_container(path):
    """
    Read a container.

    Returns:
        tuple: (manifest dict without 'arrays', dict name -> torch.Tensor)

    Raises:
        CheckpointError: If the file is missing, has the wrong magic or is truncated
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    data = path.read_bytes()

    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    header = len(MAGIC) + 4
    if len(data) < header:
        raise CheckpointError(f"{path} is truncated")
    (length,) = struct.unpack("<I", data[len(MAGIC):header])
    try:
        manifest = json.loads(data[header:header + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path} has a corrupt manifest: {e}") from e

    arrays = {}
    offset = header + length
    for entry in manifest.pop("arrays", []):
        dtype = DTYPES.get(entry.get("dtype"))
        if dtype is None:
            raise CheckpointError(f"{path}: unsupported dtype {entry.get('dtype')!r} for {entry.get('name')}")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path} is truncated at array '{entry['name']}'")
        array = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset).reshape(shape)
        arrays[entry["name"]] = torch.from_numpy(array.copy())
        offset += nbytes
    return manifest, arrays


def save_checkpoint(path, model, config=None, epoch=0, history=None):
    """
    Save a model with its configuration, epoch counter and metric history.

    Args:
        path (str | Path): Destination file
        model (nn.Module): Model whose state_dict is stored
        config (TrainConfig, optional): Echoed into the manifest
        epoch (int, optional): Completed epochs
        history (TrainingHistory, optional): Metric history
    """
    config_dict = config.model_dump(mode="json") if config is not None else {}
    records = history.to_list() if history is not None else []
    write_container(path, model.state_dict(), config=config_dict, epoch=int(epoch), history=records)
    logger.info("Saved checkpoint %s (epoch %d)", path, epoch)


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint."""
    manifest, arrays = read_container(path)
    return Checkpoint(
        state=arrays,
        config=manifest.get("config", {}),
        epoch=int(manifest.get("epoch", 0)),
        history=list(manifest.get("history", [])),
    )


PRIOR_PREFIX = "encoder.prior."


def save_prior_weights(path, branch):
    """Write a frozen-branch weights file."""
    write_container(path, branch.state_dict(), checksum=parameter_checksum(branch))


def load_prior_weights(path, branch):
    """
    Load frozen-branch weights.

    Array names may be the branch's own state_dict keys or carry the
    'encoder.prior.' prefix of a full model checkpoint.

    Raises:
        CheckpointError: If names or shapes do not match the branch
    """
    _, arrays = read_container(path)
    expected = branch.state_dict()
    state = {}
    for name, tensor in arrays.items():
        key = name[len(PRIOR_PREFIX):] if name.startswith(PRIOR_PREFIX) else name
        if key in expected:
            state[key] = tensor
    missing = sorted(set(expected) - set(state))
    if missing:
        raise CheckpointError(f"{path} lacks prior-branch arrays: {', '.join(missing)}")
    for key, tensor in state.items():
        if tuple(tensor.shape) != tuple(expected[key].shape):
            raise CheckpointError(
                f"{path}: '{key}' has shape {tuple(tensor.shape)}, expected {tuple(expected[key].shape)}"
            )
    branch.load_state_dict(state, strict=True)
    logger.info("Loaded prior-branch weights from %s", path)
    return branch


def prior_checksum(model):
    """SHA-256 of the frozen branch's tensors, or None when the model has none."""
    branch = model.prior_branch
    return parameter_checksum(branch) if branch is not None else None
