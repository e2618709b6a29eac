"""On-disk formats.

Snapshot sets and POD bases are directories holding a JSON header and raw
little-endian float64 payloads stored column-major. Checkpoints are single
binary files::

    magic (8 bytes) | version u32 | header length u32 | JSON header
    | float64 LE parameter payload | CRC-32 u32 (over everything before it)
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from . import nn
from .fom import ParameterSample, ProblemKind, ProblemSpec, SnapshotSet
from .model import DlRomArchitecture, ModelParameters, NormStats, init_parameters
from .pod import PODBasis

HEADER = "header.json"
MAGIC = b"DLROMCKP"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def _write_matrix(path, A):
    A = np.asarray(A, dtype="<f8")
    atomic_write_bytes(path, A.tobytes(order="F"))


def _read_matrix(path, shape):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file {path}")
    raw = path.read_bytes()
    expected = 8 * int(np.prod(shape))
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape, order="F").astype(float)


def _dump_json(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


# --- snapshot sets ---------------------------------------------------------


def spec_to_dict(spec: ProblemSpec):
    return {
        "kind": spec.kind.value,
        "L": spec.L,
        "T": spec.T,
        "N_h": spec.N_h,
        "N_t": spec.N_t,
        "substeps": spec.substeps,
        "constants": _jsonable(spec.constants),
    }


def spec_from_dict(d):
    constants = dict(d["constants"])
    if "bounds" in constants:
        constants["bounds"] = [tuple(b) for b in constants["bounds"]]
    return ProblemSpec(
        ProblemKind(d["kind"]), float(d["L"]), float(d["T"]), int(d["N_h"]), int(d["N_t"]),
        constants, int(d.get("substeps", 1)),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_snapshot_set(snap: SnapshotSet, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = {
        "format": "dlrom-snapshots",
        "version": FORMAT_VERSION,
        "spec": spec_to_dict(snap.spec),
        "S_shape": list(snap.S.shape),
        "M_shape": list(snap.M.shape),
        "params": [[float(v) for v in p.mu] for p in snap.params],
    }
    _write_matrix(d / "S.bin", snap.S)
    _write_matrix(d / "M.bin", snap.M)
    atomic_write_text(d / HEADER, _dump_json(header))


def load_snapshot_set(directory) -> SnapshotSet:
    d = Path(directory)
    missing = [str(d / f) for f in (HEADER, "S.bin", "M.bin") if not (d / f).exists()]
    if missing:
        raise FileNotFoundError("missing " + ", ".join(missing))
    header = json.loads((d / HEADER).read_text())
    if header.get("format") != "dlrom-snapshots":
        raise ValueError(f"{d} is not a snapshot set")
    spec = spec_from_dict(header["spec"])
    S = _read_matrix(d / "S.bin", tuple(header["S_shape"]))
    M = _read_matrix(d / "M.bin", tuple(header["M_shape"]))
    params = [ParameterSample(tuple(mu), spec.bounds) for mu in header["params"]]
    return SnapshotSet(S, M, spec, params)


# --- POD bases -------------------------------------------------------------


def save_pod_basis(basis: PODBasis, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = {
        "format": "dlrom-pod",
        "version": FORMAT_VERSION,
        "V_shape": list(basis.V.shape),
        "n_singular_values": int(len(basis.singular_values)),
        "weighted": basis.weight is not None,
        "rank_deficient": bool(basis.rank_deficient),
    }
    _write_matrix(d / "V.bin", basis.V)
    _write_matrix(d / "sigma.bin", np.asarray(basis.singular_values)[:, None])
    if basis.weight is not None:
        _write_matrix(d / "weight.bin", basis.weight)
    atomic_write_text(d / HEADER, _dump_json(header))


def load_pod_basis(directory) -> PODBasis:
    d = Path(directory)
    if not (d / HEADER).exists():
        raise FileNotFoundError(f"missing {d / HEADER}")
    header = json.loads((d / HEADER).read_text())
    if header.get("format") != "dlrom-pod":
        raise ValueError(f"{d} is not a POD basis")
    V = _read_matrix(d / "V.bin", tuple(header["V_shape"]))
    sigma = _read_matrix(d / "sigma.bin", (header["n_singular_values"], 1))[:, 0]
    weight = None
    if header["weighted"]:
        nh = V.shape[0]
        weight = _read_matrix(d / "weight.bin", (nh, nh))
    return PODBasis(V, sigma, weight, bool(header["rank_deficient"]))


# --- checkpoints -----------------------------------------------------------


def _layer_descriptor(p: nn.LayerParams):
    return {"kind": p.kind, "stride": p.stride, "activation": p.activation,
            "W_shape": list(p.weights.shape), "b_shape": list(p.bias.shape)}


def checkpoint_bytes(model: ModelParameters) -> bytes:
    norm = model.norm
    header = {
        "architecture": _jsonable(model.architecture.to_dict()),
        "precision": "f32" if model.dtype == np.float32 else "f64",
        "norm": None if norm is None else {
            "s_min": float(norm.s_min), "s_max": float(norm.s_max),
            "m_min": [float(v) for v in norm.m_min], "m_max": [float(v) for v in norm.m_max],
        },
        "layers": [_layer_descriptor(p) for p in model.layers()],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.asarray(a, dtype="<f8").tobytes(order="C") for a in model.arrays())
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(hbytes)) + hbytes + payload
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(model: ModelParameters, path):
    atomic_write_bytes(path, checkpoint_bytes(model))


def checkpoint_from_bytes(raw: bytes, source="checkpoint") -> ModelParameters:
    fixed = len(MAGIC) + 8
    if len(raw) < fixed:
        raise CheckpointTruncatedError(f"{source}: file too short ({len(raw)} bytes)")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic bytes)")
    version, hlen = struct.unpack("<II", raw[len(MAGIC):fixed])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{source}: format version {version}, expected {FORMAT_VERSION}")
    if len(raw) < fixed + hlen + 4:
        raise CheckpointTruncatedError(f"{source}: truncated header")
    try:
        header = json.loads(raw[fixed:fixed + hlen].decode("utf-8"))
        n_values = sum(int(np.prod(l["W_shape"])) + int(np.prod(l["b_shape"])) for l in header["layers"])
    except (ValueError, KeyError, TypeError) as exc:
        if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != struct.unpack("<I", raw[-4:])[0]:
            raise CheckpointChecksumError(f"{source}: checksum mismatch") from exc
        raise CheckpointError(f"{source}: malformed header") from exc
    expected = fixed + hlen + 8 * n_values + 4
    if len(raw) < expected:
        raise CheckpointTruncatedError(f"{source}: expected {expected} bytes, found {len(raw)}")
    if len(raw) > expected:
        raise CheckpointError(f"{source}: {len(raw) - expected} trailing bytes")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointChecksumError(f"{source}: checksum mismatch")

    arch = DlRomArchitecture(**header["architecture"])
    dtype = np.float32 if header["precision"] == "f32" else np.float64
    model = init_parameters(arch, seed=0, dtype=np.float64)
    layers = model.layers()
    if len(layers) != len(header["layers"]):
        raise CheckpointError(f"{source}: layer count does not match the architecture")
    values = np.frombuffer(raw, dtype="<f8", count=n_values, offset=fixed + hlen)
    pos = 0
    for p, desc in zip(layers, header["layers"]):
        if list(p.weights.shape) != desc["W_shape"] or p.kind != desc["kind"]:
            raise CheckpointError(f"{source}: layer layout does not match the architecture")
        for arr in p.arrays():
            arr[...] = values[pos:pos + arr.size].reshape(arr.shape)
            pos += arr.size
    model = model.astype(dtype)
    nd = header["norm"]
    if nd is not None:
        model.norm = NormStats(nd["s_min"], nd["s_max"], np.array(nd["m_min"]), np.array(nd["m_max"]))
    return model


def load_checkpoint(path) -> ModelParameters:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}")
    return checkpoint_from_bytes(path.read_bytes(), str(path))
