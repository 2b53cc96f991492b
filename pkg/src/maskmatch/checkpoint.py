"""Self-describing binary checkpoint container.

Layout: magic ``MMCK``, u32 version, u64 metadata length, a UTF-8 JSON
metadata block, then the raw little-endian tensor payload. The metadata
records every tensor's name, dtype, shape, and byte offset plus all
scalar state (iteration, threshold state, seed, configs), so a file can
be validated fully before any state is constructed. Floats survive the
JSON round trip exactly (shortest-repr encoding), and tensors are raw
bytes, so save/load is bit-exact.

Under the package's counter-based seeding discipline the root seed plus
the iteration counter *is* the complete generator state, so no separate
bit-generator snapshots are needed.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError
from .thresholds import ThresholdState

MAGIC = b"MMCK"
VERSION = 1
_HEAD = struct.Struct("<4sIQ")


@dataclass
class Checkpoint:
    iteration: int
    seed: int
    params: dict
    optimizer: dict          # {"step": int, "m": {...}, "v": {...}}
    threshold_state: ThresholdState
    trainer_config: dict     # fully resolved config as plain data
    version: int = VERSION


def _flatten_tensors(ckpt):
    tensors = {}
    for k, v in ckpt.params.items():
        tensors[f"param/{k}"] = v
    for k, v in ckpt.optimizer.get("m", {}).items():
        tensors[f"adam_m/{k}"] = v
    for k, v in ckpt.optimizer.get("v", {}).items():
        tensors[f"adam_v/{k}"] = v
    tensors["threshold/nu_local"] = ckpt.threshold_state.nu_local
    return tensors


def save_checkpoint(path, ckpt):
    tensors = _flatten_tensors(ckpt)
    directory = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        directory.append({"name": name, "dtype": arr.dtype.str,
                          "shape": list(arr.shape), "offset": offset,
                          "nbytes": arr.nbytes})
        offset += arr.nbytes
    ts = ckpt.threshold_state
    meta = {
        "iteration": ckpt.iteration,
        "seed": ckpt.seed,
        "adam_step": ckpt.optimizer.get("step", 0),
        "threshold": {"mode": ts.mode, "tau_global": ts.tau_global,
                      "momentum": ts.momentum, "iteration": ts.iteration,
                      "fixed_value": ts.fixed_value},
        "trainer_config": ckpt.trainer_config,
        "tensors": directory,
    }
    blob = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for entry in directory:
            fh.write(np.ascontiguousarray(tensors[entry["name"]]).tobytes())


def load_checkpoint(path, expect_param_shapes=None):
    """Read and fully validate a checkpoint.

    ``expect_param_shapes`` maps parameter names to shapes (e.g. from a
    freshly initialized model); any mismatch raises before state is built.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _HEAD.size:
        raise CheckpointError(f"{path}: shorter than header")
    magic, version, meta_len = _HEAD.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    meta_end = _HEAD.size + meta_len
    if len(blob) < meta_end:
        raise CheckpointError(f"{path}: metadata truncated")
    try:
        meta = json.loads(blob[_HEAD.size:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata: {exc}") from exc

    payload = blob[meta_end:]
    expected_bytes = sum(e["nbytes"] for e in meta["tensors"])
    if len(payload) != expected_bytes:
        raise CheckpointError(
            f"{path}: tensor payload is {len(payload)} bytes, expected {expected_bytes}")

    tensors = {}
    for entry in meta["tensors"]:
        arr = np.frombuffer(payload, dtype=np.dtype(entry["dtype"]),
                            count=int(np.prod(entry["shape"], dtype=np.int64)),
                            offset=entry["offset"]).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr

    params = {k[len("param/"):]: v for k, v in tensors.items()
              if k.startswith("param/")}
    if expect_param_shapes is not None:
        for name, shape in expect_param_shapes.items():
            if name not in params:
                raise CheckpointError(f"{path}: missing parameter {name}")
            if tuple(params[name].shape) != tuple(shape):
                raise CheckpointError(
                    f"{path}: parameter {name} has shape {params[name].shape}, "
                    f"expected {tuple(shape)}")
        extra = set(params) - set(expect_param_shapes)
        if extra:
            raise CheckpointError(f"{path}: unexpected parameters {sorted(extra)}")

    optimizer = {
        "step": int(meta["adam_step"]),
        "m": {k[len("adam_m/"):]: v for k, v in tensors.items()
              if k.startswith("adam_m/")},
        "v": {k[len("adam_v/"):]: v for k, v in tensors.items()
              if k.startswith("adam_v/")},
    }
    thr = meta["threshold"]
    state = ThresholdState(mode=thr["mode"], tau_global=thr["tau_global"],
                           nu_local=tensors["threshold/nu_local"],
                           momentum=thr["momentum"], iteration=thr["iteration"],
                           fixed_value=thr["fixed_value"])
    return Checkpoint(iteration=int(meta["iteration"]), seed=int(meta["seed"]),
                      params=params, optimizer=optimizer, threshold_state=state,
                      trainer_config=meta["trainer_config"], version=version)


def config_to_plain(config):
    """Dataclass (possibly nested) to JSON-serializable plain data."""
    return dataclasses.asdict(config)
