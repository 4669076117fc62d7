"""File formats: OBJ (subset), PNG, PFM and CSV."""
from __future__ import annotations

import csv
import os
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .autodiff import value
from .scene import TriangleMesh


class ParseError(ValueError):
    def __init__(self, path, line: int, message: str) -> None:
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


# ---------------------------------------------------------------- OBJ


def _obj_index(token: str, count: int, path, line: int) -> int:
    try:
        i = int(token)
    except ValueError:
        raise ParseError(path, line, f"bad index '{token}'") from None
    if i < 0:
        i = count + i + 1  # relative index
    if not 1 <= i <= count:
        raise ParseError(path, line, f"index {token} out of range (have {count})")
    return i - 1


def load_obj(path) -> TriangleMesh:
    """Read ``v``/``vn``/``vt``/``f`` records; polygons become triangle fans.

    Normals and texture coordinates are kept only when every face corner
    references them and each vertex always uses the same one.
    """
    pos, nrm, tex, faces, corner_attr = [], [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            try:
                if tag == "v":
                    pos.append([float(x) for x in rest[:3]])
                    if len(rest) < 3:
                        raise ValueError
                elif tag == "vn":
                    nrm.append([float(x) for x in rest[:3]])
                    if len(rest) < 3:
                        raise ValueError
                elif tag == "vt":
                    tex.append([float(x) for x in rest[:2]])
                    if len(rest) < 2:
                        raise ValueError
            except ValueError:
                raise ParseError(path, n, f"malformed '{tag}' record") from None
            if tag != "f":
                continue
            if len(rest) < 3:
                raise ParseError(path, n, "face needs at least 3 vertices")
            corners = []
            for tok in rest:
                parts = tok.split("/")
                vi = _obj_index(parts[0], len(pos), path, n)
                ti = _obj_index(parts[1], len(tex), path, n) if len(parts) > 1 and parts[1] else -1
                ni = _obj_index(parts[2], len(nrm), path, n) if len(parts) > 2 and parts[2] else -1
                corners.append((vi, ti, ni))
            for k in range(1, len(corners) - 1):
                tri = (corners[0], corners[k], corners[k + 1])
                faces.append([c[0] for c in tri])
                corner_attr.extend(tri)
    if not pos:
        raise ParseError(path, 0, "no vertices")
    v = np.array(pos, dtype=np.float64)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(v, f, normals=_per_vertex(corner_attr, 2, nrm, len(v)), uvs=_per_vertex(corner_attr, 1, tex, len(v)))


def _per_vertex(corners, slot: int, table, count: int):
    if not table or not corners:
        return None
    out = np.full(count, -1, dtype=np.int64)
    for c in corners:
        a = c[slot]
        if a < 0 or (out[c[0]] >= 0 and out[c[0]] != a):
            return None
        out[c[0]] = a
    if np.any(out < 0):
        return None
    return np.asarray(table, dtype=np.float64)[out]


def save_obj(path, mesh: TriangleMesh) -> None:
    v = value(mesh.vertices)
    with open(path, "w", encoding="utf-8") as fh:
        for p in v:
            fh.write("v %.17g %.17g %.17g\n" % tuple(p))
        if mesh.uvs is not None:
            for t in value(mesh.uvs):
                fh.write("vt %.17g %.17g\n" % tuple(t))
        if mesh.normals is not None:
            for q in value(mesh.normals):
                fh.write("vn %.17g %.17g %.17g\n" % tuple(q))
        for tri in mesh.faces + 1:
            if mesh.uvs is not None and mesh.normals is not None:
                fh.write("f " + " ".join(f"{i}/{i}/{i}" for i in tri) + "\n")
            elif mesh.uvs is not None:
                fh.write("f " + " ".join(f"{i}/{i}" for i in tri) + "\n")
            elif mesh.normals is not None:
                fh.write("f " + " ".join(f"{i}//{i}" for i in tri) + "\n")
            else:
                fh.write("f %d %d %d\n" % tuple(tri))


# ---------------------------------------------------------------- images


def to_uint8(image) -> np.ndarray:
    """Clamp to [0, 1] and scale; no colour-space conversion."""
    a = np.asarray(value(image), dtype=np.float64)
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, image) -> None:
    """8-bit PNG from an (H, W), (H, W, 3) or (H, W, 4) float image."""
    a = to_uint8(image)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    Image.fromarray(a).save(path)


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def save_pfm(path, image) -> None:
    """32-bit float PFM, little-endian, rows stored bottom-to-top."""
    a = np.asarray(value(image), dtype=np.float32)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if a.ndim == 2:
        header = "Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError("PFM holds 1 or 3 channels")
    with open(path, "wb") as fh:
        fh.write(f"{header}\n{a.shape[1]} {a.shape[0]}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(a[::-1]).astype("<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ParseError(path, 1, "not a PFM file")
        try:
            w, h = (int(x) for x in fh.readline().split())
            scale = float(fh.readline().strip())
        except ValueError:
            raise ParseError(path, 2, "malformed PFM header") from None
        channels = 3 if header == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        raw = fh.read()
    if len(raw) != 4 * w * h * channels:
        raise ParseError(path, 4, "truncated PFM data")
    data = np.frombuffer(raw, dtype=dtype)
    shape = (h, w, channels) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


def save_channels(directory, prefix: str, channels: dict) -> list:
    """Write each ``name -> (H, W)`` channel as its own PFM."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name, arr in channels.items():
        p = os.path.join(directory, f"{prefix}{name}.pfm")
        save_pfm(p, arr)
        paths.append(p)
    return paths


# ---------------------------------------------------------------- CSV


def save_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def load_csv(path) -> tuple:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(path, 1, "empty CSV")
    return rows[0], rows[1:]
