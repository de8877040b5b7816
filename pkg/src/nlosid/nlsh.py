"""NLSH binary frame format and the dataset directory manifest.

Layout (little-endian): magic ``NLSH``, u16 version=1, u16 flags
(reserved), u32 n_pixels, u32 n_bins, f64 bin_width_ps, f64 t0_ps,
u8 person_id (0 = background), u8 position_index (1-based, 0 = none),
u8 illumination_id, u8 clothing_mode (0 = same, 1 = different), u64 seed;
then per pixel: u16 pixel_index, u8 hot_flag, u8 pad, n_bins u32 counts.

A dataset directory holds NLSH files plus a plain-text manifest naming
each file, its role (measurement or background), and its labels. The
manifest is written last, so its presence marks a complete dataset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .scene import POSITION_NAMES
from .transient import FrameMeta, PixelArrayFrame

__all__ = [
    "NlshFormatError",
    "ManifestEntry",
    "write_frame",
    "read_frame",
    "frame_file_size",
    "MANIFEST_NAME",
    "write_manifest",
    "read_manifest",
]

MAGIC = b"NLSH"
VERSION = 1
_HEADER = struct.Struct("<4sHHII ddBBBBQ".replace(" ", ""))
_PIXEL_HEAD = struct.Struct("<HBB")
_CLOTHING_CODES = {"same": 0, "different": 1}
_CLOTHING_NAMES = {v: k for k, v in _CLOTHING_CODES.items()}

MANIFEST_NAME = "manifest.txt"


class NlshFormatError(ValueError):
    """Malformed NLSH file or dataset manifest."""


def frame_file_size(n_pixels: int, n_bins: int) -> int:
    """Exact byte size of a frame file with the given geometry."""
    return _HEADER.size + n_pixels * (_PIXEL_HEAD.size + 4 * n_bins)


def _position_code(name: Optional[str]) -> int:
    if name is None:
        return 0
    return POSITION_NAMES.index(name) + 1


def _pixel_dtype(n_bins: int) -> np.dtype:
    return np.dtype([("index", "<u2"), ("hot", "u1"), ("pad", "u1"),
                     ("counts", "<u4", (n_bins,))])


def write_frame(frame: PixelArrayFrame, path, *, record_hot: bool = False) -> None:
    """Serialize one frame. Hot flags are written as zero unless asked for:
    the preprocessing stage must find hot pixels itself."""
    n_pix = frame.n_pixels
    n_bins = frame.n_bins
    if n_pix > 0xFFFF:
        raise NlshFormatError(f"pixel index field is u16; {n_pix} pixels exceed it")
    meta = frame.meta
    header = _HEADER.pack(
        MAGIC, VERSION, 0, n_pix, n_bins,
        frame.bin_width_ps, frame.t0_ps,
        meta.person_id, _position_code(meta.position_name),
        meta.illumination_id, _CLOTHING_CODES[meta.clothing_mode], meta.seed,
    )
    records = np.zeros(n_pix, dtype=_pixel_dtype(n_bins))
    records["index"] = np.arange(n_pix, dtype=np.uint16)
    if record_hot:
        records["hot"] = frame.hot_mask.reshape(n_pix).astype(np.uint8)
    records["counts"] = frame.flat_counts()
    Path(path).write_bytes(header + records.tobytes())


def _grid_for(n_pixels: int) -> tuple:
    side = round(n_pixels ** 0.5)
    if side * side == n_pixels:
        return (side, side)
    return (1, n_pixels)


def read_frame(path) -> PixelArrayFrame:
    """Deserialize a frame, validating magic, version, and length."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise NlshFormatError(
            f"{path}: file too short for a header ({len(raw)} < {_HEADER.size} bytes)")
    (magic, version, _flags, n_pix, n_bins, bin_width_ps, t0_ps,
     person_id, position_code, illumination_id, clothing_code,
     seed) = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise NlshFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise NlshFormatError(f"{path}: unsupported version {version}, expected {VERSION}")
    expected = frame_file_size(n_pix, n_bins)
    if len(raw) != expected:
        raise NlshFormatError(
            f"{path}: expected {expected} bytes for {n_pix} pixels x {n_bins} bins, "
            f"got {len(raw)}")
    if position_code > len(POSITION_NAMES):
        raise NlshFormatError(f"{path}: position index {position_code} out of range")
    if clothing_code not in _CLOTHING_NAMES:
        raise NlshFormatError(f"{path}: unknown clothing mode code {clothing_code}")

    records = np.frombuffer(raw, dtype=_pixel_dtype(n_bins), offset=_HEADER.size)
    if not np.array_equal(records["index"], np.arange(n_pix, dtype=np.uint16)):
        raise NlshFormatError(f"{path}: pixel records out of order")
    counts = records["counts"].astype(np.uint32)
    hot = records["hot"].astype(bool)
    rows, cols = _grid_for(n_pix)
    meta = FrameMeta(
        person_id=person_id,
        position_name=None if position_code == 0 else POSITION_NAMES[position_code - 1],
        illumination_id=illumination_id,
        clothing_mode=_CLOTHING_NAMES[clothing_code],
        seed=seed,
    )
    return PixelArrayFrame(
        counts=counts.reshape(rows, cols, n_bins),
        bin_width_ps=bin_width_ps,
        t0_ps=t0_ps,
        hot_mask=hot.reshape(rows, cols),
        meta=meta,
    )


@dataclass(frozen=True)
class ManifestEntry:
    """One dataset file with its role and labels."""

    filename: str
    role: str
    person_id: int
    position_name: Optional[str]
    illumination_id: int

    def __post_init__(self):
        if self.role not in ("measurement", "background"):
            raise ValueError(f"role must be measurement|background, got {self.role!r}")
        if (self.role == "background") != (self.person_id == 0):
            raise ValueError("background entries must have person 0 and vice versa")


def write_manifest(directory, entries: Sequence[ManifestEntry], *,
                   clothing_mode: str, seed: int, extra: Mapping = None) -> Path:
    """Write the dataset manifest; this is the final step of a simulation run."""
    lines = [
        "# NLSH dataset manifest",
        f"format = NLSH/{VERSION}",
        f"clothing_mode = {clothing_mode}",
        f"seed = {seed}",
    ]
    for key in sorted(extra or {}):
        lines.append(f"{key} = {extra[key]}")
    lines.append(f"entries = {len(entries)}")
    for e in entries:
        pos = e.position_name if e.position_name is not None else "-"
        lines.append(
            f"file = {e.filename} role={e.role} person={e.person_id} "
            f"position={pos} illumination={e.illumination_id}")
    path = Path(directory) / MANIFEST_NAME
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(directory) -> dict:
    """Parse a manifest into {clothing_mode, seed, entries}; verify completeness.

    Raises NlshFormatError when the manifest is absent, malformed, or names
    files that do not exist (an incomplete dataset).
    """
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.exists():
        raise NlshFormatError(
            f"{directory}: no {MANIFEST_NAME}; dataset is incomplete or not a dataset")
    meta = {}
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key != "file":
            meta[key] = value
            continue
        fields = value.split()
        try:
            filename = fields[0]
            kv = dict(f.split("=", 1) for f in fields[1:])
            pos = kv["position"]
            entries.append(ManifestEntry(
                filename=filename,
                role=kv["role"],
                person_id=int(kv["person"]),
                position_name=None if pos == "-" else pos,
                illumination_id=int(kv["illumination"]),
            ))
        except (KeyError, IndexError, ValueError) as err:
            raise NlshFormatError(f"{path}:{lineno}: malformed entry: {err}") from None
    if "entries" in meta and int(meta["entries"]) != len(entries):
        raise NlshFormatError(
            f"{path}: manifest promises {meta['entries']} entries, lists {len(entries)}")
    missing = [e.filename for e in entries if not (directory / e.filename).exists()]
    if missing:
        raise NlshFormatError(
            f"{directory}: manifest names missing files: {', '.join(missing[:5])}")
    reserved = ("format", "clothing_mode", "seed", "entries")
    return {
        "clothing_mode": meta.get("clothing_mode", "different"),
        "seed": int(meta.get("seed", 0)),
        "entries": entries,
        "extra": {k: v for k, v in meta.items() if k not in reserved},
    }
