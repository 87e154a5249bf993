"""Binary container for named float64 arrays (checkpoints and datasets).

Layout, all little-endian:
    magic   4 bytes  "NCKP"
    version u32      (currently 1)
    count   u32      number of entries
  then per entry:
    name_len u32, name UTF-8, rank u32, dims u64 x rank, payload f64

Integers ride along as exact floats; 64-bit RNG words are stored by bit
pattern (see _u64_to_f64) so nothing is lost.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"NCKP"
VERSION = 1


def write_entries(path, entries: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes(order="C"))


def read_entries(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}Q", blob, off) if rank else ()
        off += 8 * rank
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).copy()
        off += 8 * size
        entries[name] = arr.reshape(shape)
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return entries


def _u64_to_f64(x: int) -> np.ndarray:
    return np.frombuffer(np.array([x], dtype="<u8").tobytes(), dtype="<f8").copy()


def _f64_to_u64(arr: np.ndarray) -> int:
    return int(np.frombuffer(np.asarray(arr, dtype="<f8").tobytes(), dtype="<u8")[0])


def save_dataset(path, dataset) -> None:
    write_entries(path, {
        "raw_image": dataset.raw_image,
        "raw_text": dataset.raw_text,
        "labels": dataset.labels.astype(np.float64),
    })


def load_dataset(path):
    from .data import PairDataset

    e = read_entries(path)
    for key in ("raw_image", "raw_text", "labels"):
        if key not in e:
            raise CheckpointError(f"{path}: dataset entry {key!r} missing")
    return PairDataset(
        raw_image=e["raw_image"],
        raw_text=e["raw_text"],
        labels=e["labels"].astype(np.int64),
    )


def _opt_entries(prefix: str, opt) -> dict[str, np.ndarray]:
    out = {f"{prefix}/t": np.array([float(opt.t)])}
    for block, slots in opt.slots.items():
        for slot_name, arr in slots.items():
            out[f"{prefix}/{block}/{slot_name}"] = arr
    return out


def _load_opt(prefix: str, entries, opt) -> None:
    opt.t = int(entries[f"{prefix}/t"][0])
    head = f"{prefix}/"
    opt.slots = {}
    for name, arr in entries.items():
        if name.startswith(head) and name != f"{prefix}/t":
            block, slot_name = name[len(head):].rsplit("/", 1)
            opt.slots.setdefault(block, {})[slot_name] = arr.copy()


def save_state(path, state) -> None:
    """Serialize everything a resumed run needs to continue bitwise."""
    entries: dict[str, np.ndarray] = {}
    for name, arr in state.encoder.blocks.items():
        entries[f"encoder/{name}"] = arr
    entries["kappa"] = state.kappa
    entries["step"] = np.array([float(state.step)])
    entries["rng/seed"] = _u64_to_f64(state.rng.seed)
    entries["rng/counter"] = _u64_to_f64(state.rng.counter)
    if state.perm is not None:
        entries["sampler/perm"] = state.perm.astype(np.float64)
        entries["sampler/pos"] = np.array([float(state.perm_pos)])
    entries.update(_opt_entries("enc_opt", state.enc_opt))
    if state.tau_opt is not None:
        entries.update(_opt_entries("tau_opt", state.tau_opt))
    if state.ema is not None:
        entries["ema/u1"] = state.ema.u1
        entries["ema/u2"] = state.ema.u2
        entries["ema/initialized"] = state.ema.initialized.astype(np.float64)
    if state.npn is not None:
        for name, arr in state.npn.blocks.items():
            entries[f"npn/{name}"] = arr
        entries["npn/version"] = np.array([float(state.npn.version)])
    if state.npn_opt is not None:
        entries.update(_opt_entries("npn_opt", state.npn_opt))
    write_entries(path, entries)


def load_state(path, state) -> None:
    """Restore arrays into an already-built TrainState of the same shape."""
    from .numerics import Rng

    e = read_entries(path)
    for name, arr in state.encoder.blocks.items():
        arr[...] = e[f"encoder/{name}"]
    state.kappa[...] = e["kappa"]
    state.step = int(e["step"][0])
    state.rng = Rng.from_state(_f64_to_u64(e["rng/seed"]), _f64_to_u64(e["rng/counter"]))
    if "sampler/perm" in e:
        state.perm = e["sampler/perm"].astype(np.int64)
        state.perm_pos = int(e["sampler/pos"][0])
    else:
        state.perm = None
        state.perm_pos = 0
    _load_opt("enc_opt", e, state.enc_opt)
    if state.tau_opt is not None:
        _load_opt("tau_opt", e, state.tau_opt)
    if state.ema is not None:
        state.ema.u1[...] = e["ema/u1"]
        state.ema.u2[...] = e["ema/u2"]
        state.ema.initialized[...] = e["ema/initialized"] != 0.0
    if state.npn is not None:
        for name, arr in state.npn.blocks.items():
            arr[...] = e[f"npn/{name}"]
        state.npn.version = int(e["npn/version"][0])
    if state.npn_opt is not None:
        _load_opt("npn_opt", e, state.npn_opt)
