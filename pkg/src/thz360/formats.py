"""On-disk formats: saliency stacks (SMAP), head traces (CSV), checkpoints (NNCK)."""

from __future__ import annotations

import csv
import struct
from collections import defaultdict
from pathlib import Path

import numpy as np

SMAP_MAGIC = b"SMAP"
NNCK_MAGIC = b"NNCK"
TRACE_HEADER = ["user_id", "video_id", "frame_index", "theta_rad", "phi_rad"]


class FormatError(ValueError):
    pass


def write_smap(path, frames: np.ndarray) -> None:
    """Write an (F, H, W) stack as little-endian float32."""
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 3:
        raise ValueError("expected an (F, H, W) array")
    f, h, w = frames.shape
    with open(path, "wb") as fh:
        fh.write(SMAP_MAGIC)
        fh.write(struct.pack("<III", w, h, f))
        fh.write(frames.tobytes(order="C"))


def read_smap(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != SMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    w, h, f = struct.unpack_from("<III", data, 4)
    body = np.frombuffer(data, dtype="<f4", offset=16)
    if body.size != w * h * f:
        raise FormatError(f"{path}: expected {w * h * f} floats, found {body.size}")
    return body.reshape(f, h, w).astype(float)


def write_traces(path, traces: dict) -> None:
    """``traces[(user, video)]`` is an (n_frames, 2) array of (theta, phi)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRACE_HEADER)
        for (user, video) in sorted(traces):
            for k, (th, ph) in enumerate(traces[(user, video)]):
                wr.writerow([user, video, k, repr(float(th)), repr(float(ph))])


def read_traces(path) -> dict:
    rows = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != TRACE_HEADER:
            raise FormatError(f"{path}: unexpected header {header}")
        for line in rd:
            u, v, k = int(line[0]), int(line[1]), int(line[2])
            rows[(u, v)].append((k, float(line[3]), float(line[4])))
    out = {}
    for key, items in rows.items():
        items.sort()
        if [k for k, _, _ in items] != list(range(len(items))):
            raise FormatError(f"{path}: frames of {key} are not contiguous")
        out[key] = np.array([(th, ph) for _, th, ph in items])
    return out


def write_checkpoint(path, layer_spec: str, params: np.ndarray) -> None:
    spec = layer_spec.encode("utf-8")
    params = np.asarray(params, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(NNCK_MAGIC)
        fh.write(struct.pack("<I", len(spec)))
        fh.write(spec)
        fh.write(struct.pack("<Q", params.size))
        fh.write(params.tobytes())


def read_checkpoint(path) -> tuple[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != NNCK_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    (n,) = struct.unpack_from("<I", data, 4)
    spec = data[8:8 + n].decode("utf-8")
    (count,) = struct.unpack_from("<Q", data, 8 + n)
    params = np.frombuffer(data, dtype="<f8", count=count, offset=16 + n)
    return spec, params.copy()
