"""Dense tensor interchange: the ``.ovt`` format, PGM masks, PLY meshes.

An ``.ovt`` file is the 8-byte tag ``OVFTENS1``, a UTF-8 JSON header padded
with spaces so that tag + header is a multiple of 64 bytes, then the raw
row-major little-endian payload.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from PIL import Image
from plyfile import PlyData, PlyElement

from .errors import BadMagic, IoFailure, ShapeMismatch, TensorFormatError, TruncatedPayload

MAGIC = b"OVFTENS1"
HEADER_ALIGN = 64

DTYPES = {
    "f32": np.dtype("<f4"),
    "u8": np.dtype("u1"),
    "i32": np.dtype("<i4"),
}


def _dtype_tag(arr: np.ndarray) -> str:
    kind = arr.dtype.kind
    if kind == "f":
        return "f32"
    if kind == "b" or arr.dtype == np.uint8:
        return "u8"
    if kind in "iu":
        return "i32"
    raise TypeError(f"unsupported dtype {arr.dtype}")


def _encode_header(tag: str, shape) -> bytes:
    offset = HEADER_ALIGN
    while True:
        body = json.dumps(
            {"dtype": tag, "shape": [int(s) for s in shape], "byte_offset": offset},
            separators=(",", ":"),
        ).encode("utf-8")
        need = len(MAGIC) + len(body)
        if need <= offset:
            return MAGIC + body + b" " * (offset - need)
        offset = -(-need // HEADER_ALIGN) * HEADER_ALIGN


def tensor_bytes(t) -> bytes:
    """Exact bytes ``write_tensor`` would put on disk."""
    arr = np.asarray(t)
    tag = _dtype_tag(arr)
    if tag == "f32":
        out = np.asarray(arr, dtype=DTYPES["f32"], order="C")
        if not np.all(np.isfinite(out)):
            raise ValueError("tensor contains non-finite values")
    else:
        if tag == "i32" and arr.size and (arr.min() < np.iinfo(np.int32).min or arr.max() > np.iinfo(np.int32).max):
            raise ValueError("integer tensor does not fit in int32")
        out = np.asarray(arr, dtype=DTYPES[tag], order="C")
    return _encode_header(tag, out.shape) + out.tobytes(order="C")


def write_tensor(t, path) -> None:
    data = tensor_bytes(t)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: magic is {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    # header length is not stored separately; the JSON object ends at the first '}' followed by padding
    end = raw.find(b"}", len(MAGIC))
    if end < 0:
        raise TensorFormatError(f"{path}: unterminated header")
    try:
        header = json.loads(raw[len(MAGIC): end + 1].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorFormatError(f"{path}: unreadable header ({exc})") from exc

    tag = header.get("dtype")
    if tag not in DTYPES:
        raise TensorFormatError(f"{path}: field 'dtype' has unknown value {tag!r}")
    shape = header.get("shape")
    if not isinstance(shape, list) or any(not isinstance(s, int) or s < 0 for s in shape):
        raise ShapeMismatch(f"{path}: field 'shape' is invalid: {shape!r}")
    offset = header.get("byte_offset")
    if not isinstance(offset, int) or offset < end + 1 or offset % HEADER_ALIGN:
        raise TensorFormatError(f"{path}: field 'byte_offset' is invalid: {offset!r}")

    dtype = DTYPES[tag]
    expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
    payload = raw[offset:]
    if len(payload) < expected:
        raise TruncatedPayload(
            f"{path}: payload has {len(payload)} bytes, shape {shape} of {tag} needs {expected}"
        )
    if len(payload) > expected:
        raise ShapeMismatch(
            f"{path}: payload has {len(payload)} bytes, more than shape {shape} of {tag} allows ({expected})"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def l2_normalize_rows(t, eps: float = 1e-12):
    """Scale every row to unit length.

    Rows with norm below ``eps`` come back as zeros; the second return value
    flags them.
    """
    x = np.asarray(t, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeMismatch(f"expected [N, C>=1], got {x.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    degenerate = norms < eps
    safe = np.where(degenerate, 1.0, norms)
    out = x / safe[:, None]
    out[degenerate] = 0.0
    return out, degenerate


# --- masks -----------------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Binary PGM (P5) mask; nonzero pixels are foreground."""
    try:
        with Image.open(path) as img:
            if img.format != "PPM" or img.mode not in ("L", "1"):
                raise TensorFormatError(f"{path}: not an 8-bit PGM (format={img.format}, mode={img.mode})")
            arr = np.array(img)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    return arr != 0


def write_pgm(mask, path) -> None:
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    try:
        Image.fromarray(arr, mode="L").save(path, format="PPM")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


# --- meshes / point clouds ---------------------------------------------------

def read_ply(path):
    """Return ``(vertices [N,3] float64, faces [F,3] int64 or None, labels [N] int64 or None)``.

    Polygons with more than three corners are fan-triangulated.
    """
    try:
        ply = PlyData.read(os.fspath(path))
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    except Exception as exc:  # plyfile raises its own parse errors
        raise TensorFormatError(f"{path}: {exc}") from exc
    if "vertex" not in ply:
        raise TensorFormatError(f"{path}: no vertex element")
    v = ply["vertex"].data
    names = v.dtype.names
    for axis in "xyz":
        if axis not in names:
            raise TensorFormatError(f"{path}: vertex property '{axis}' missing")
    verts = np.stack([np.asarray(v[a], dtype=np.float64) for a in "xyz"], axis=1)
    labels = np.asarray(v["label"], dtype=np.int64) if "label" in names else None

    faces = None
    if "face" in ply and ply["face"].count:
        fdata = ply["face"].data
        key = "vertex_indices" if "vertex_indices" in fdata.dtype.names else fdata.dtype.names[0]
        polys = fdata[key]
        if polys.dtype != object:
            polys = list(polys)
        if all(len(poly) == 3 for poly in polys):
            faces = np.asarray(np.stack(polys), dtype=np.int64).reshape(-1, 3)
        else:
            tris = []
            for poly in polys:
                poly = np.asarray(poly, dtype=np.int64)
                for i in range(1, len(poly) - 1):
                    tris.append((poly[0], poly[i], poly[i + 1]))
            faces = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    return verts, faces, labels


def write_ply(path, vertices, faces=None, labels=None, text: bool = False) -> None:
    vertices = np.asarray(vertices, dtype=np.float32)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if labels is not None:
        fields.append(("label", "<i4"))
    vert = np.empty(len(vertices), dtype=fields)
    vert["x"], vert["y"], vert["z"] = vertices[:, 0], vertices[:, 1], vertices[:, 2]
    if labels is not None:
        vert["label"] = np.asarray(labels, dtype=np.int32)
    elements = [PlyElement.describe(vert, "vertex")]
    if faces is not None and len(faces):
        faces = np.asarray(faces, dtype=np.int32)
        face = np.empty(len(faces), dtype=[("vertex_indices", "<i4", (3,))])
        face["vertex_indices"] = faces
        elements.append(PlyElement.describe(face, "face"))
    try:
        PlyData(elements, text=text, byte_order="<").write(os.fspath(path))
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
