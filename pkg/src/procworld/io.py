"""File formats for meshes and image layers.

PLY (binary little endian)::

    element vertex N: double x, y, z
    element face F:   list uchar int vertex_indices; int instance_id; int object_id

OBJ: ``v`` lines with 17 significant digits, then one ``g instance_<id>``
group per instance id (in order of first appearance) holding that
instance's ``f`` lines (1-based).

PFM: ``Pf`` (one channel) or ``PF`` (three), ``width height``, scale ``-1.0``
(little endian), then float32 rows from the bottom of the image up.

16-bit PNG: ``png = round((value - offset) * scale)`` clipped to
[1, 65535]; 0 marks invalid pixels.  The sidecar ``<name>.png.json``
records ``scale`` and ``offset`` so ``value = png / scale + offset``.
Unsigned layers map ``[0, max]`` onto codes 1..65535 (offset ``-1/scale``);
signed ones (flow) map ``[-m, m]`` the same way.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .mesh import Mesh

_FACE_DTYPE = np.dtype([("n", "u1"), ("v", "<i4", (3,)), ("instance", "<i4"), ("object", "<i4")])


# --------------------------------------------------------------------------
# PLY


def ply_bytes(mesh: Mesh) -> bytes:
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int vertex_indices\n"
        "property int instance_id\nproperty int object_id\n"
        "end_header\n"
    ).encode("ascii")
    faces = np.zeros(mesh.n_faces, _FACE_DTYPE)
    faces["n"] = 3
    faces["v"] = mesh.faces
    faces["instance"] = mesh.instance_ids
    faces["object"] = mesh.object_ids
    return header + mesh.vertices.astype("<f8").tobytes() + faces.tobytes()


def write_ply(path, mesh: Mesh) -> None:
    Path(path).write_bytes(ply_bytes(mesh))


def read_ply(path) -> Mesh:
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii")
    if "binary_little_endian" not in header:
        raise ValueError(f"{path}: only binary little-endian PLY written by this package is supported")
    nv = int(re.search(r"element vertex (\d+)", header).group(1))
    nf = int(re.search(r"element face (\d+)", header).group(1))
    body = data[end + len(b"end_header\n") :]
    verts = np.frombuffer(body, "<f8", count=3 * nv).reshape(nv, 3)
    faces = np.frombuffer(body, _FACE_DTYPE, count=nf, offset=24 * nv)
    if nf and (faces["n"] != 3).any():
        raise ValueError(f"{path}: only triangles are supported")
    return Mesh(verts.copy(), faces["v"].astype(np.int64), faces["instance"].copy(), faces["object"].copy())


# --------------------------------------------------------------------------
# OBJ


def obj_text(mesh: Mesh) -> str:
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    ids = mesh.instance_ids
    _, first = np.unique(ids, return_index=True)
    for inst in ids[np.sort(first)]:
        lines.append(f"g instance_{int(inst)}")
        for a, b, c in mesh.faces[ids == inst] + 1:
            lines.append(f"f {a} {b} {c}")
    return "\n".join(lines) + "\n"


def write_obj(path, mesh: Mesh) -> None:
    Path(path).write_text(obj_text(mesh))


def read_obj(path) -> Mesh:
    verts, faces, inst = [], [], []
    current = 0
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "g":
            m = re.match(r"instance_(-?\d+)", parts[1]) if len(parts) > 1 else None
            current = int(m.group(1)) if m else 0
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
                inst.append(current)
    return Mesh(np.array(verts).reshape(-1, 3), np.array(faces, np.int64).reshape(-1, 3), np.array(inst, np.int32))


def obj_groups(path) -> list[str]:
    return [ln.split()[1] for ln in Path(path).read_text().splitlines() if ln.startswith("g ")]


# --------------------------------------------------------------------------
# PFM


def pfm_bytes(image: np.ndarray) -> bytes:
    a = np.asarray(image, dtype="<f4")
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError("PFM holds (H, W) or (H, W, 3) arrays")
    h, w = a.shape[:2]
    return tag + f"\n{w} {h}\n-1.0\n".encode("ascii") + np.ascontiguousarray(a[::-1]).tobytes()


def write_pfm(path, image: np.ndarray) -> None:
    Path(path).write_bytes(pfm_bytes(image))


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tag, dims, scale, body = data.split(b"\n", 3)
    w, h = map(int, dims.split())
    channels = {b"Pf": 1, b"PF": 3}[tag]
    dtype = "<f4" if float(scale) < 0 else ">f4"
    a = np.frombuffer(body, dtype, count=w * h * channels)
    a = a.reshape((h, w) if channels == 1 else (h, w, 3))[::-1]
    return a.astype("<f4")


# --------------------------------------------------------------------------
# PNG


def _png_bytes(img: Image.Image) -> bytes:
    import io

    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def png16_encode(values: np.ndarray, scale: float | None = None, signed: bool = False):
    """Quantise finite values into uint16 (0 = invalid).

    Returns ``(array, scale, offset)``.  Unsigned encoding treats negative
    values as invalid; signed encoding maps ``[-m, m]`` onto the code range.
    """
    v = np.asarray(values, dtype=np.float64)
    ok = np.isfinite(v) if signed else np.isfinite(v) & (v >= 0)
    top = float(np.abs(v[ok]).max()) if ok.any() else 0.0
    top = top if top > 0 else 1.0
    # code 0 is reserved, so the lowest representable value sits at code 1
    if signed:
        scale = scale if scale is not None else 65534.0 / (2.0 * top)
        offset = -top - 1.0 / scale
    else:
        scale = scale if scale is not None else 65534.0 / top
        offset = -1.0 / scale
    q = np.zeros(v.shape, np.uint16)
    q[ok] = np.clip(np.round((v[ok] - offset) * scale), 1, 65535).astype(np.uint16)
    return q, float(scale), float(offset)


def write_png16(path, values: np.ndarray, scale: float | None = None, unit: str = "", signed: bool = False) -> float:
    """16-bit PNG plus ``<path>.json`` sidecar; returns the scale used."""
    q, scale, offset = png16_encode(values, scale, signed)
    path = Path(path)
    path.write_bytes(_png_bytes(Image.fromarray(q)))
    sidecar = {"scale": scale, "offset": offset, "unit": unit, "invalid": 0, "decode": "value = png / scale + offset"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    return scale


def read_png16(path) -> np.ndarray:
    """Decode a 16-bit PNG with its sidecar; invalid pixels come back NaN."""
    path = Path(path)
    q = np.asarray(Image.open(path)).astype(np.float64)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return np.where(q > 0, q / meta["scale"] + meta.get("offset", 0.0), np.nan)


def write_mask_png(path, mask: np.ndarray) -> None:
    Path(path).write_bytes(_png_bytes(Image.fromarray(np.where(mask, 255, 0).astype(np.uint8))))


def write_label_png(path, labels: np.ndarray) -> None:
    """Integer labels as 16-bit PNG; -1 (miss) is stored as 0, others as id + 1."""
    lab = np.asarray(labels, dtype=np.int64) + 1
    if lab.min(initial=0) < 0 or lab.max(initial=0) > 65535:
        raise ValueError("labels must lie in [-1, 65534]")
    Path(path).write_bytes(_png_bytes(Image.fromarray(lab.astype(np.uint16))))


def read_label_png(path) -> np.ndarray:
    return np.asarray(Image.open(path)).astype(np.int64) - 1


def read_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path)) > 0


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
