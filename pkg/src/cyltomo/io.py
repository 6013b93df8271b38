"""Readers and writers for volumes, projections, masks and geometry.

Every array artifact is a JSON manifest next to a raw little-endian
float32 payload; the manifest records dims, ordering and the grid or
geometry needed to rebuild the object.  Round trips are bit-exact at the
byte level.  8/16-bit binary PGM is supported for external intensity
images and for mask export.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IoFailure, SchemaMismatch, SizeMismatch
from .geometry import Pose, ScanGeometry
from .grid import CartGrid, CartVolume, CylGrid, CylVolume
from .projector import INTENSITY, ProjectionSet, intensities_to_line_integrals

SCHEMA_VERSION = 1


def _base_path(path) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix == ".json" else path


def _write_json(payload: dict, path: Path) -> None:
    try:
        path.write_text(json.dumps(payload, indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path} is not valid JSON: {exc}") from exc


def _write_raw(data: np.ndarray, path: Path) -> None:
    try:
        path.write_bytes(np.ascontiguousarray(data, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_raw(path: Path, dims) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    expected = int(np.prod(dims)) * 4
    if len(raw) != expected:
        raise SizeMismatch(
            f"{path}: {len(raw)} bytes on disk, {expected} expected for dims {list(dims)}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(dims)


def _check_header(manifest: dict, path: Path, kinds) -> None:
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaMismatch(f"{path}: unsupported schema_version {version!r}")
    if manifest.get("kind") not in kinds:
        raise SchemaMismatch(f"{path}: unexpected artifact kind {manifest.get('kind')!r}")


# ---------------------------------------------------------------------------
# volumes
# ---------------------------------------------------------------------------

def write_volume(vol, path) -> Path:
    """Write a volume as <path>.json + <path>.raw; returns the manifest path."""
    base = _base_path(path)
    if isinstance(vol, CylVolume):
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "kind": "cyl_volume",
            "dims": list(vol.grid.shape),
            "dtype": "float32le",
            "order": "h_theta_r",
            "raw": base.name + ".raw",
            "grid": vol.grid.to_dict(),
        }
    elif isinstance(vol, CartVolume):
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "kind": "cart_volume",
            "dims": list(vol.grid.shape),
            "dtype": "float32le",
            "order": "z_y_x",
            "raw": base.name + ".raw",
            "grid": vol.grid.to_dict(),
        }
    else:
        raise TypeError(f"cannot write object of type {type(vol).__name__}")
    _write_raw(vol.mu, base.with_suffix(".raw"))
    _write_json(manifest, base.with_suffix(".json"))
    return base.with_suffix(".json")


def read_volume(path):
    """Read a volume written by :func:`write_volume`."""
    base = _base_path(path)
    manifest = _read_json(base.with_suffix(".json"))
    _check_header(manifest, base, ("cyl_volume", "cart_volume"))
    dims = tuple(int(v) for v in manifest["dims"])
    mu = _read_raw(base.parent / manifest["raw"], dims)
    if manifest["kind"] == "cyl_volume":
        grid = CylGrid.from_dict(manifest["grid"])
        if grid.shape != dims:
            raise SchemaMismatch(f"{base}: dims disagree with the grid payload")
        return CylVolume(grid, mu)
    grid = CartGrid.from_dict(manifest["grid"])
    if grid.shape != dims:
        raise SchemaMismatch(f"{base}: dims disagree with the grid payload")
    return CartVolume(grid, mu)


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def write_projections(ps: ProjectionSet, path) -> Path:
    base = _base_path(path)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "projections",
        "dims": list(ps.images.shape),
        "dtype": "float32le",
        "order": "view_row_col",
        "raw": base.name + ".raw",
        "projection_kind": ps.kind,
        "geometry": ps.geom.to_dict(),
    }
    _write_raw(ps.images, base.with_suffix(".raw"))
    _write_json(manifest, base.with_suffix(".json"))
    return base.with_suffix(".json")


def read_projections(path) -> ProjectionSet:
    base = _base_path(path)
    manifest = _read_json(base.with_suffix(".json"))
    _check_header(manifest, base, ("projections",))
    dims = tuple(int(v) for v in manifest["dims"])
    geom = ScanGeometry.from_dict(manifest["geometry"])
    if dims != (geom.n_proj, geom.det_rows, geom.det_cols):
        raise SchemaMismatch(f"{base}: dims disagree with the geometry payload")
    images = _read_raw(base.parent / manifest["raw"], dims)
    return ProjectionSet(geom, images, manifest["projection_kind"])


# ---------------------------------------------------------------------------
# PGM images
# ---------------------------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Binary (P5) PGM reader; 16-bit images are big-endian per the format."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not raw.startswith(b"P5"):
        raise SchemaMismatch(f"{path}: not a binary PGM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw, dtype=dtype, count=width * height, offset=pos)
    if data.size != width * height:
        raise SizeMismatch(f"{path}: truncated pixel data")
    return data.reshape(height, width).astype(np.uint16 if maxval > 255 else np.uint8)


def write_pgm(image: np.ndarray, path, maxval: int = 255) -> None:
    """Binary (P5) PGM writer for 8- or 16-bit data."""
    image = np.asarray(image)
    if image.dtype == bool:
        image = image.astype(np.uint8) * maxval
    height, width = image.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode()
    payload = image.astype(">u2" if maxval > 255 else "u1").tobytes()
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def import_pgm_projections(paths, geom: ScanGeometry, i0) -> ProjectionSet:
    """Load per-view PGM intensity images and convert to line integrals."""
    images = np.stack([read_pgm(p).astype(float) for p in paths])
    ps = ProjectionSet(geom, images, kind=INTENSITY)
    return intensities_to_line_integrals(ps, i0)


# ---------------------------------------------------------------------------
# geometry / pose documents
# ---------------------------------------------------------------------------

def write_geometry(geom: ScanGeometry, path) -> None:
    _write_json(geom.to_dict(), Path(path))


def read_geometry(path) -> ScanGeometry:
    payload = _read_json(Path(path))
    try:
        return ScanGeometry.from_dict(payload)
    except KeyError as exc:
        raise SchemaMismatch(f"{path}: missing geometry key {exc}") from exc


def write_pose(pose_or_dict, path) -> None:
    payload = pose_or_dict.to_dict() if hasattr(pose_or_dict, "to_dict") else pose_or_dict
    _write_json(payload, Path(path))


def read_pose(path) -> Pose:
    payload = _read_json(Path(path))
    try:
        return Pose.from_dict(payload)
    except KeyError as exc:
        raise SchemaMismatch(f"{path}: missing pose key {exc}") from exc
