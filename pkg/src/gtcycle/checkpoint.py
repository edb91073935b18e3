"""Self-describing, versioned checkpoint files.

Layout: one JSON header line (format version, model config, vocabulary hash,
tensor directory with dtypes/shapes/offsets) followed by the raw tensor
bytes, little-endian, in directory order. Two identical models produce
byte-identical files, so checkpoint equality can be tested by hashing.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, Seq2SeqModel

FORMAT_VERSION = 1

_DTYPES = {
    "float32": (torch.float32, np.float32),
    "float64": (torch.float64, np.float64),
}


class CheckpointError(RuntimeError):
    """Unreadable, incompatible, or corrupt checkpoint file."""


def save_checkpoint(path: str | Path, model: Seq2SeqModel, vocab_hash: str) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        array = tensor.detach().cpu().numpy()
        dtype = str(tensor.dtype).removeprefix("torch.")
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {dtype} for {name}")
        raw = np.ascontiguousarray(array).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(tensor.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "vocab_sha256": vocab_hash,
        "tensors": entries,
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + b"".join(blobs)
    Path(path).write_bytes(payload)


def load_checkpoint(path: str | Path) -> tuple[Seq2SeqModel, str]:
    """Rebuild the model from a checkpoint; returns (model, vocab_hash)."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    newline = data.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(data[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} not supported (expected {FORMAT_VERSION})"
        )
    config = ModelConfig.from_dict(header["model_config"])
    body = data[newline + 1 :]
    state = {}
    model_dtype = torch.float32
    for entry in header["tensors"]:
        torch_dtype, np_dtype = _DTYPES[entry["dtype"]]
        start, nbytes = entry["offset"], entry["nbytes"]
        raw = body[start : start + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        array = np.frombuffer(raw, dtype=np_dtype).reshape(entry["shape"]).copy()
        state[entry["name"]] = torch.from_numpy(array)
        model_dtype = torch_dtype
    model = Seq2SeqModel(config, dtype=model_dtype)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: state does not match config: {exc}") from exc
    return model, header["vocab_sha256"]
