"""Single-file binary checkpoints with bit-exact round trips.

Layout, all little-endian:

    bytes 0..7    magic  b"BMAECKPT"
    bytes 8..11   uint32 format version (currently 1)
    bytes 12..19  uint64 metadata byte length
    ...           metadata: utf-8 text, one "key = value" per line
    ...           tensor payload: raw float32 row-major arrays, params in
                  declaration order followed by the optimizer's first and
                  second moments in the same order
    last 8 bytes  blake2b-64 digest of everything before it

The metadata block records both configs, the epoch/step counters, the
training rng's bit-generator state, and a tensor manifest that the loader
verifies against the config-derived declaration order.  save -> load -> save
is byte-identical, and resuming from a checkpoint reproduces the
uninterrupted run exactly because the rng state travels with the tensors.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, fields

import numpy as np

from .errors import CheckpointError
from .ioutil import atomic_write
from .model import ModelConfig, ModelParams, param_order

MAGIC = b"BMAECKPT"
FORMAT_VERSION = 1
_DIGEST_SIZE = 8

_BOOL_FIELDS = {"tie_output_embeddings"}


@dataclass
class Checkpoint:
    """Everything needed to resume training mid-run or embed afterwards."""

    model_config: ModelConfig
    train_config: "TrainConfig"
    params: ModelParams
    opt_m: dict
    opt_v: dict
    step: int
    epoch: int
    rng_state: dict


def _rng_state_items(rng_state: dict) -> list[tuple[str, str]]:
    inner = rng_state["state"]
    return [
        ("rng.bit_generator", rng_state["bit_generator"]),
        ("rng.state", str(inner["state"])),
        ("rng.inc", str(inner["inc"])),
        ("rng.has_uint32", str(rng_state["has_uint32"])),
        ("rng.uinteger", str(rng_state["uinteger"])),
    ]


def _parse_rng_state(meta: dict) -> dict:
    return {
        "bit_generator": meta["rng.bit_generator"],
        "state": {"state": int(meta["rng.state"]), "inc": int(meta["rng.inc"])},
        "has_uint32": int(meta["rng.has_uint32"]),
        "uinteger": int(meta["rng.uinteger"]),
    }


def _config_items(prefix: str, cfg) -> list[tuple[str, str]]:
    out = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        out.append((f"{prefix}.{f.name}", repr(value) if isinstance(value, bool) else str(value)))
    return out


def _parse_config(cls, prefix: str, meta: dict):
    kwargs = {}
    for f in fields(cls):
        raw = meta[f"{prefix}.{f.name}"]
        if f.name in _BOOL_FIELDS:
            kwargs[f.name] = raw == "True"
        elif f.type in ("int", int):
            kwargs[f.name] = int(raw)
        elif f.type in ("float", float):
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = raw
    return cls(**kwargs)


def _tensor_sequence(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    names = [name for name, _ in param_order(ckpt.model_config)]
    out = [(f"param.{n}", ckpt.params[n]) for n in names]
    out += [(f"adam_m.{n}", ckpt.opt_m[n]) for n in names]
    out += [(f"adam_v.{n}", ckpt.opt_v[n]) for n in names]
    return out


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    tensors = _tensor_sequence(ckpt)
    meta_items = [("format_version", str(FORMAT_VERSION))]
    meta_items += _config_items("model", ckpt.model_config)
    meta_items += _config_items("train", ckpt.train_config)
    meta_items += [("step", str(ckpt.step)), ("epoch", str(ckpt.epoch))]
    meta_items += _rng_state_items(ckpt.rng_state)
    meta_items.append(("tensor_count", str(len(tensors))))
    for i, (name, arr) in enumerate(tensors):
        shape = "x".join(str(s) for s in arr.shape) or "scalar"
        meta_items.append((f"tensor.{i}", f"{name} {shape}"))
    meta = "".join(f"{k} = {v}\n" for k, v in meta_items).encode("utf-8")

    digest = hashlib.blake2b(digest_size=_DIGEST_SIZE)
    with atomic_write(path, mode="wb") as handle:

        def emit(chunk: bytes):
            digest.update(chunk)
            handle.write(chunk)

        emit(MAGIC)
        emit(struct.pack("<I", FORMAT_VERSION))
        emit(struct.pack("<Q", len(meta)))
        emit(meta)
        for _, arr in tensors:
            emit(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        handle.write(digest.digest())


def load_checkpoint(path) -> Checkpoint:
    from .train import TrainConfig  # avoid a circular import at module load

    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    if len(blob) < len(MAGIC) + 12 + _DIGEST_SIZE:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    body, stored_digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    digest = hashlib.blake2b(body, digest_size=_DIGEST_SIZE).digest()
    if digest != stored_digest:
        raise CheckpointError(f"{path}: checksum mismatch, file corrupt or truncated")

    offset = len(MAGIC)
    (version,) = struct.unpack_from("<I", body, offset)
    offset += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} not supported (expected {FORMAT_VERSION})"
        )
    (meta_len,) = struct.unpack_from("<Q", body, offset)
    offset += 8
    meta_blob = body[offset : offset + meta_len]
    offset += meta_len
    meta = {}
    for line in meta_blob.decode("utf-8").splitlines():
        key, _, value = line.partition(" = ")
        meta[key] = value

    model_config = _parse_config(ModelConfig, "model", meta)
    train_config = _parse_config(TrainConfig, "train", meta)
    names = [name for name, _ in param_order(model_config)]
    shapes = dict(param_order(model_config))
    expected = (
        [f"param.{n}" for n in names]
        + [f"adam_m.{n}" for n in names]
        + [f"adam_v.{n}" for n in names]
    )
    n_tensors = int(meta["tensor_count"])
    if n_tensors != len(expected):
        raise CheckpointError(
            f"{path}: manifest lists {n_tensors} tensors, config implies {len(expected)}"
        )
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for i, full_name in enumerate(expected):
        manifest_name, _, manifest_shape = meta[f"tensor.{i}"].partition(" ")
        if manifest_name != full_name:
            raise CheckpointError(
                f"{path}: tensor {i} is {manifest_name}, expected {full_name}"
            )
        group, _, name = full_name.partition(".")
        shape = shapes[name]
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        groups[group][name] = arr.copy()
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} unexpected trailing bytes")

    return Checkpoint(
        model_config=model_config,
        train_config=train_config,
        params=ModelParams(model_config, groups["param"]),
        opt_m=groups["adam_m"],
        opt_v=groups["adam_v"],
        step=int(meta["step"]),
        epoch=int(meta["epoch"]),
        rng_state=_parse_rng_state(meta),
    )
