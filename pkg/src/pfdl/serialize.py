"""Versioned binary persistence.

Model checkpoints: magic "PFDL", format version u32, the architecture,
then layer arrays in trunk, cls_head, aux_head order, row-major float64
little-endian. Dataset files ("PFDD") and client-state files ("PFDS")
follow the same header discipline. Readers validate magic and version and
raise DataError with file context on any mismatch or truncation.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from . import nn
from .client import ClientState
from .data import DomainSpec, TaskDataset, domain_from_dict, domain_to_dict
from .errors import DataError

MODEL_MAGIC = b"PFDL"
DATA_MAGIC = b"PFDD"
STATE_MAGIC = b"PFDS"
FORMAT_VERSION = 1


def _read_exact(fh, n: int, ctx: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(f"{ctx}: truncated file (wanted {n} bytes, got {len(buf)})")
    return buf


def _check_header(fh, magic: bytes, ctx: str) -> None:
    got = _read_exact(fh, 4, ctx)
    if got != magic:
        raise DataError(f"{ctx}: bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4, ctx))
    if version != FORMAT_VERSION:
        raise DataError(f"{ctx}: unsupported format version {version}")


def _write_f64(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_f64(fh, shape, ctx: str) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    buf = _read_exact(fh, 8 * count, ctx)
    return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)


# ---------------------------------------------------------------- models


def write_model(fh, model: nn.PersonalModel) -> None:
    fh.write(MODEL_MAGIC)
    fh.write(struct.pack("<I", FORMAT_VERSION))
    arch = model.arch
    fh.write(struct.pack("<III", arch.input_dim, arch.num_classes, len(arch.hidden_dims)))
    fh.write(struct.pack(f"<{len(arch.hidden_dims)}I", *arch.hidden_dims))
    for layer in nn.iter_layers(model):
        _write_f64(fh, layer.weights)
        _write_f64(fh, layer.bias)


def read_model(fh, ctx: str = "checkpoint") -> nn.PersonalModel:
    _check_header(fh, MODEL_MAGIC, ctx)
    input_dim, num_classes, depth = struct.unpack("<III", _read_exact(fh, 12, ctx))
    hidden = struct.unpack(f"<{depth}I", _read_exact(fh, 4 * depth, ctx))
    arch = nn.ArchSpec(input_dim=input_dim, hidden_dims=tuple(hidden), num_classes=num_classes)
    trunk = []
    fan_in = arch.input_dim
    for h in arch.hidden_dims:
        trunk.append(nn.LayerParams(_read_f64(fh, (h, fan_in), ctx), _read_f64(fh, (h,), ctx)))
        fan_in = h
    cls_head = nn.LayerParams(_read_f64(fh, (arch.num_classes, fan_in), ctx),
                              _read_f64(fh, (arch.num_classes,), ctx))
    aux_head = nn.LayerParams(_read_f64(fh, (1, fan_in), ctx), _read_f64(fh, (1,), ctx))
    return nn.PersonalModel(trunk=trunk, cls_head=cls_head, aux_head=aux_head, arch=arch)


def save_model(path, model: nn.PersonalModel) -> None:
    with open(path, "wb") as fh:
        write_model(fh, model)


def load_model(path) -> nn.PersonalModel:
    with open(path, "rb") as fh:
        return read_model(fh, ctx=str(path))


def model_bytes(model: nn.PersonalModel) -> bytes:
    buf = io.BytesIO()
    write_model(buf, model)
    return buf.getvalue()


# ---------------------------------------------------------------- datasets


def save_dataset(path, task: TaskDataset) -> None:
    with open(path, "wb") as fh:
        fh.write(DATA_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        dom = json.dumps(domain_to_dict(task.domain)).encode()
        fh.write(struct.pack("<IIIq", task.task_id, task.num_classes,
                             task.train_x.shape[1], int(task.seed)))
        fh.write(struct.pack("<I", len(dom)))
        fh.write(dom)
        fh.write(struct.pack("<QQ", task.train_x.shape[0], task.test_x.shape[0]))
        _write_f64(fh, task.train_x)
        fh.write(np.ascontiguousarray(task.train_y, dtype="<u4").tobytes())
        _write_f64(fh, task.test_x)
        fh.write(np.ascontiguousarray(task.test_y, dtype="<u4").tobytes())


def load_dataset(path) -> TaskDataset:
    ctx = str(path)
    with open(path, "rb") as fh:
        _check_header(fh, DATA_MAGIC, ctx)
        task_id, num_classes, dim, seed = struct.unpack("<IIIq", _read_exact(fh, 20, ctx))
        (dom_len,) = struct.unpack("<I", _read_exact(fh, 4, ctx))
        try:
            domain = domain_from_dict(json.loads(_read_exact(fh, dom_len, ctx)))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise DataError(f"{ctx}: bad domain block ({e})") from e
        n_train, n_test = struct.unpack("<QQ", _read_exact(fh, 16, ctx))
        train_x = _read_f64(fh, (n_train, dim), ctx)
        train_y = np.frombuffer(_read_exact(fh, 4 * n_train, ctx), dtype="<u4").astype(np.int64)
        test_x = _read_f64(fh, (n_test, dim), ctx)
        test_y = np.frombuffer(_read_exact(fh, 4 * n_test, ctx), dtype="<u4").astype(np.int64)
    return TaskDataset(task_id=task_id, domain=domain, num_classes=num_classes,
                       train_x=train_x, train_y=train_y, test_x=test_x, test_y=test_y,
                       seed=seed)


# ---------------------------------------------------------------- client states


def save_client_state(dir_path, state: ClientState) -> tuple[Path, Path]:
    """Pool, bindings and activity as one binary record; the matching
    history goes to a JSON sidecar. Returns (state path, sidecar path)."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    path = dir_path / f"client_{state.client_id:03d}.state"
    sidecar = dir_path / f"client_{state.client_id:03d}.rho.json"
    with open(path, "wb") as fh:
        fh.write(STATE_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<II", state.client_id, len(state.pool)))
        fh.write(struct.pack("<I", len(state.task_bindings)))
        for task_id in sorted(state.task_bindings):
            fh.write(struct.pack("<II", task_id, state.task_bindings[task_id]))
        for model in state.pool:
            write_model(fh, model)
    sidecar.write_text(json.dumps(state.rho_history, indent=1) + "\n")
    return path, sidecar


def load_client_state(path) -> ClientState:
    """Rebuild a client at a task boundary (snapshots are not persisted)."""
    ctx = str(path)
    with open(path, "rb") as fh:
        _check_header(fh, STATE_MAGIC, ctx)
        client_id, pool_size = struct.unpack("<II", _read_exact(fh, 8, ctx))
        (n_bind,) = struct.unpack("<I", _read_exact(fh, 4, ctx))
        bindings = {}
        for _ in range(n_bind):
            t, idx = struct.unpack("<II", _read_exact(fh, 8, ctx))
            bindings[t] = idx
        pool = [read_model(fh, ctx) for _ in range(pool_size)]
    state = ClientState(client_id=client_id, pool=pool, task_bindings=bindings)
    name = str(path)
    sidecar = Path(name[: -len(".state")] + ".rho.json" if name.endswith(".state")
                   else name + ".rho.json")
    if sidecar.exists():
        state.rho_history = json.loads(sidecar.read_text())
    return state
