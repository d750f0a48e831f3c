"""Binary and text artifact formats with JSON sidecars.

Voxel volumes: 8-byte magic ``HELMVOL1``, three little-endian uint32 dims,
then float64 little-endian samples in C order.  Boundary matrices: magic
``HELMDNM1``, little-endian uint32 (rows, cols), then complex128
little-endian entries in C order (row = probe index, column = Gamma cell).
Every binary artifact gets a ``<name>.json`` sidecar carrying metadata and
the configuration hash; JSON is serialized canonically (sorted keys) so
identical runs produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC_VOL = b"HELMVOL1"
MAGIC_DNM = b"HELMDNM1"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_sidecar(path, meta: dict) -> Path:
    sp = sidecar_path(path)
    sp.write_text(canonical_json(meta))
    return sp


def read_sidecar(path) -> dict:
    return json.loads(sidecar_path(path).read_text())


def write_volume(path, volume: np.ndarray, meta: dict | None = None) -> Path:
    """Write a real voxel volume in the HELMVOL1 format (+ JSON sidecar)."""
    path = Path(path)
    vol = np.ascontiguousarray(np.asarray(volume, dtype="<f8"))
    if vol.ndim != 3:
        raise ValueError("volume must be a 3D array")
    with open(path, "wb") as fh:
        fh.write(MAGIC_VOL)
        fh.write(struct.pack("<III", *vol.shape))
        fh.write(vol.tobytes(order="C"))
    if meta is not None:
        write_sidecar(path, meta)
    return path


def read_volume(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC_VOL:
        raise ParseError(f"{path}: bad magic {raw[:8]!r}, expected {MAGIC_VOL!r}")
    nx, ny, nz = struct.unpack("<III", raw[8:20])
    data = np.frombuffer(raw[20:], dtype="<f8", count=nx * ny * nz)
    meta = read_sidecar(path) if sidecar_path(path).exists() else {}
    return data.reshape(nx, ny, nz).copy(), meta


def write_matrix(path, matrix: np.ndarray, meta: dict | None = None) -> Path:
    """Write a complex matrix in the HELMDNM1 format (+ JSON sidecar)."""
    path = Path(path)
    mat = np.ascontiguousarray(np.asarray(matrix, dtype="<c16"))
    if mat.ndim != 2:
        raise ValueError("matrix must be 2D")
    with open(path, "wb") as fh:
        fh.write(MAGIC_DNM)
        fh.write(struct.pack("<II", *mat.shape))
        fh.write(mat.tobytes(order="C"))
    if meta is not None:
        write_sidecar(path, meta)
    return path


def read_matrix(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC_DNM:
        raise ParseError(f"{path}: bad magic {raw[:8]!r}, expected {MAGIC_DNM!r}")
    rows, cols = struct.unpack("<II", raw[8:16])
    data = np.frombuffer(raw[16:], dtype="<c16", count=rows * cols)
    meta = read_sidecar(path) if sidecar_path(path).exists() else {}
    return data.reshape(rows, cols).copy(), meta


def write_samples_csv(path, kgrid: np.ndarray, values: np.ndarray, l: float, trace_path: str) -> Path:
    """Fourier samples as CSV: kx, ky, kz, re, im, l, path."""
    path = Path(path)
    lines = ["kx,ky,kz,re_d,im_d,l,path"]
    for kvec, val in zip(kgrid, values):
        lines.append(
            f"{kvec[0]!r},{kvec[1]!r},{kvec[2]!r},{val.real!r},{val.imag!r},{l!r},{trace_path}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def read_samples_csv(path) -> tuple[np.ndarray, np.ndarray, float, str]:
    lines = Path(path).read_text().strip().splitlines()
    ks, vals = [], []
    l_value, trace_path = 0.0, "B"
    for line in lines[1:]:
        kx, ky, kz, re, im, l_value, trace_path = line.split(",")
        ks.append([float(kx), float(ky), float(kz)])
        vals.append(complex(float(re), float(im)))
        l_value = float(l_value)
    return np.array(ks), np.array(vals), l_value, trace_path


def write_pgm(path, image: np.ndarray) -> Path:
    """8-bit grayscale PGM (P5) of a 2D array, normalized to its max."""
    path = Path(path)
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("image must be 2D")
    peak = float(img.max())
    scaled = np.zeros_like(img) if peak == 0 else img / peak * 255.0
    data = np.clip(np.round(scaled), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(data.tobytes(order="C"))
    return path
