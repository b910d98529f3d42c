"""Bit-exact volume I/O and case manifests.

Two on-disk formats are supported:

* a restricted NIfTI-1 single-file subset (``.nii`` / ``.nii.gz``): 3D
  only, datatypes uint8/int16/int32/float32, little- or big-endian
  headers (detected via the byte order of ``sizeof_hdr``), data stored
  x-fastest at ``vox_offset``. Orientation matrices are ignored; only
  ``pixdim`` is honored.
* a raw little-endian fallback (``.raw`` + JSON sidecar with shape,
  spacing and dtype) so external tools can exchange volumes without any
  compression or header code.

Failures raise :class:`VolioError` with a machine-readable ``code``.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volcore import Volume3D

HEADER_SIZE = 348
VOX_OFFSET = 352.0
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

DTYPE_CODES = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32}
CODES_BY_DTYPE = {np.dtype(v): k for k, v in DTYPE_CODES.items()}


class VolioError(Exception):
    """I/O failure with a stable error code."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


def _open_maybe_gzip(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise VolioError("truncated", f"{what}: wanted {n} bytes, got {len(data)}")
    return data


def read_nifti(path) -> Volume3D:
    """Read a 3D NIfTI-1 single file; values are scl_slope/inter scaled.

    Integer data without scaling keeps its dtype (label maps); anything
    scaled comes back float32.
    """
    path = Path(path)
    try:
        fh = _open_maybe_gzip(path, "rb")
    except OSError as exc:
        raise VolioError("unreadable", str(exc)) from exc
    try:
        with fh:
            return _read_nifti_stream(fh, str(path).endswith(".gz"))
    except VolioError:
        raise
    except (EOFError, OSError) as exc:  # corrupt/truncated compressed streams
        raise VolioError("truncated", str(exc)) from exc


def _read_nifti_stream(fh, compressed: bool) -> Volume3D:
    raw = _read_exact(fh, HEADER_SIZE, "header")
    (sizeof_hdr_le,) = struct.unpack("<i", raw[:4])
    if sizeof_hdr_le == HEADER_SIZE:
        end = "<"
    else:
        (sizeof_hdr_be,) = struct.unpack(">i", raw[:4])
        if sizeof_hdr_be != HEADER_SIZE:
            raise VolioError("bad_header", f"sizeof_hdr is not {HEADER_SIZE}")
        end = ">"
    magic = raw[344:348]
    if magic == MAGIC_PAIR:
        raise VolioError("unsupported_format", "detached header/data pairs not supported")
    if magic != MAGIC_SINGLE:
        raise VolioError("bad_magic", f"magic {magic!r}")
    dim = struct.unpack(end + "8h", raw[40:56])
    if dim[0] != 3:
        raise VolioError("bad_dim", f"dim[0] = {dim[0]}, need 3")
    shape = tuple(int(d) for d in dim[1:4])
    if any(n < 1 for n in shape):
        raise VolioError("bad_dim", f"non-positive extent in {shape}")
    (datatype,) = struct.unpack(end + "h", raw[70:72])
    if datatype not in DTYPE_CODES:
        raise VolioError("unsupported_datatype", f"datatype code {datatype}")
    pixdim = struct.unpack(end + "8f", raw[76:108])
    spacing = tuple(float(p) for p in pixdim[1:4])
    if any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise VolioError("bad_pixdim", f"non-positive spacing {spacing}")
    (vox_offset,) = struct.unpack(end + "f", raw[108:112])
    scl_slope, scl_inter = struct.unpack(end + "2f", raw[112:120])
    offset = int(vox_offset)
    if offset < HEADER_SIZE:
        raise VolioError("bad_header", f"vox_offset {offset} < {HEADER_SIZE}")
    _read_exact(fh, offset - HEADER_SIZE, "pre-data padding")
    dtype = np.dtype(DTYPE_CODES[datatype]).newbyteorder(end)
    count = int(np.prod(shape))
    payload = _read_exact(fh, count * dtype.itemsize, "voxel data")
    if compressed:
        fh.read(1)  # reach end-of-stream so a truncated CRC footer raises
    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    data = np.ascontiguousarray(data.astype(dtype.newbyteorder("=")))
    if scl_slope not in (0.0, 1.0) or (scl_slope == 1.0 and scl_inter != 0.0):
        data = (data.astype(np.float32) * np.float32(scl_slope) + np.float32(scl_inter))
    return Volume3D(data=data, spacing=spacing)


def write_nifti(volume, path, datatype=None) -> None:
    """Write a Volume3D (or bare array) as a NIfTI-1 single file.

    Output is little-endian with ``vox_offset`` 352 and identity
    orientation (codes 0); gzip compression iff the path ends in ``.gz``.
    Non-finite values, and values unrepresentable in an integer target
    datatype, are rejected.
    """
    path = Path(path)
    if isinstance(volume, Volume3D):
        data, spacing = volume.data, volume.spacing
    else:
        data, spacing = np.asarray(volume), (1.0, 1.0, 1.0)
    if data.ndim != 3:
        raise VolioError("bad_dim", f"can only write 3D volumes, got {data.shape}")
    if data.dtype == bool:
        data = data.astype(np.uint8)
    dtype = np.dtype(datatype) if datatype is not None else data.dtype
    if dtype not in CODES_BY_DTYPE:
        raise VolioError("unsupported_datatype", f"cannot write dtype {dtype}")
    if np.issubdtype(data.dtype, np.floating) and not np.isfinite(data).all():
        raise VolioError("value_range", "non-finite values cannot be written")
    if np.issubdtype(dtype, np.integer):
        info = np.iinfo(dtype)
        vmin, vmax = data.min(), data.max()
        if vmin < info.min or vmax > info.max:
            raise VolioError("value_range", f"values [{vmin}, {vmax}] exceed {dtype}")
        if np.issubdtype(data.dtype, np.floating) and not np.equal(np.mod(data, 1), 0).all():
            raise VolioError("value_range", f"non-integral values for integer dtype {dtype}")
    out = data.astype(dtype)

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *out.shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, CODES_BY_DTYPE[np.dtype(dtype)])
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *[float(s) for s in spacing], 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, VOX_OFFSET)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    struct.pack_into("<b", hdr, 123, 2)  # xyzt_units: millimeters
    hdr[344:348] = MAGIC_SINGLE

    with _open_maybe_gzip(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00" * int(VOX_OFFSET - HEADER_SIZE))
        fh.write(np.asfortranarray(out).tobytes(order="F"))


def write_raw(volume, basepath) -> tuple[Path, Path]:
    """Raw fallback: float32 little-endian x-fastest plus a JSON sidecar."""
    basepath = Path(basepath)
    if basepath.suffix != ".raw":
        basepath = basepath.with_suffix(".raw")
    if isinstance(volume, Volume3D):
        data, spacing = volume.data, volume.spacing
    else:
        data, spacing = np.asarray(volume), (1.0, 1.0, 1.0)
    if np.issubdtype(data.dtype, np.floating) and not np.isfinite(data).all():
        raise VolioError("value_range", "non-finite values cannot be written")
    payload = data.astype("<f4")
    basepath.write_bytes(np.asfortranarray(payload).tobytes(order="F"))
    sidecar = basepath.with_suffix(".json")
    sidecar.write_text(
        json.dumps(
            {"shape": list(data.shape), "spacing": list(spacing), "dtype": "float32"},
            sort_keys=True,
        )
        + "\n"
    )
    return basepath, sidecar


def read_raw(basepath) -> Volume3D:
    basepath = Path(basepath)
    if basepath.suffix != ".raw":
        basepath = basepath.with_suffix(".raw")
    sidecar = basepath.with_suffix(".json")
    try:
        meta = json.loads(sidecar.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise VolioError("bad_sidecar", f"{sidecar}: {exc}") from exc
    shape = tuple(int(n) for n in meta["shape"])
    spacing = tuple(float(s) for s in meta.get("spacing", (1.0, 1.0, 1.0)))
    blob = basepath.read_bytes()
    count = int(np.prod(shape))
    if len(blob) != count * 4:
        raise VolioError("truncated", f"{basepath}: wanted {count * 4} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4").reshape(shape, order="F")
    return Volume3D(data=np.ascontiguousarray(data), spacing=spacing)


def read_volume(path) -> Volume3D:
    """Dispatch on extension: .nii/.nii.gz or .raw (+sidecar)."""
    name = str(path)
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        return read_nifti(path)
    if name.endswith(".raw"):
        return read_raw(path)
    raise VolioError("unsupported_format", f"unknown volume extension: {name}")


@dataclass
class CaseManifest:
    """One benchmark case: image + label paths and per-dataset config."""

    case_id: str
    image: Path
    label: Path
    dataset: str = "default"
    weight: float = 1.0
    cleanup: dict = field(default_factory=dict)
    target_instance: int = 1
    scribbles: Path | None = None
    scribble_axis: int = 2


def load_manifest(path) -> list[CaseManifest]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise VolioError("bad_manifest", f"{path}: {exc}") from exc
    base = path.parent
    cases = []
    for entry in doc.get("cases", []):
        try:
            cleanup = {
                int(k): (str(v["op"]), float(v["radius"]))
                for k, v in entry.get("cleanup", {}).items()
            }
            cases.append(
                CaseManifest(
                    case_id=str(entry["id"]),
                    image=base / entry["image"],
                    label=base / entry["label"],
                    dataset=str(entry.get("dataset", "default")),
                    weight=float(entry.get("weight", 1.0)),
                    cleanup=cleanup,
                    target_instance=int(entry.get("target", 1)),
                    scribbles=(base / entry["scribbles"]) if entry.get("scribbles") else None,
                    scribble_axis=int(entry.get("scribble_axis", 2)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise VolioError("bad_manifest", f"{path}: malformed case entry ({exc})") from exc
    if not cases:
        raise VolioError("bad_manifest", f"{path}: no cases")
    return cases


def zscore(data: np.ndarray) -> tuple[np.ndarray, bool]:
    """Image-level z-score; returns (normalized, degenerate_std_flag)."""
    data = data.astype(np.float32)
    mean = float(data.mean())
    std = float(data.std())
    if std == 0.0:
        return np.zeros_like(data, dtype=np.float32), True
    return ((data - mean) / std).astype(np.float32), False


@dataclass
class LoadedCase:
    case_id: str
    image: Volume3D
    labels: np.ndarray  # instance label map, consecutive ids
    warnings: list[str]
    manifest: CaseManifest


def load_case(manifest: CaseManifest) -> LoadedCase:
    """Read image + label, z-score the image, convert labels to instances."""
    from .sampling import instances_from_semantic

    image = read_volume(manifest.image)
    label = read_volume(manifest.label)
    if image.shape != label.shape:
        raise VolioError(
            "shape_mismatch", f"image {image.shape} vs label {label.shape}"
        )
    warnings = []
    normalized, degenerate = zscore(image.data)
    if degenerate:
        warnings.append("constant image: z-score undefined, using zeros")
    labels = label.data
    if np.issubdtype(labels.dtype, np.floating):
        if not np.equal(np.mod(labels, 1), 0).all():
            raise VolioError("bad_label", "label map has non-integral values")
        labels = labels.astype(np.int32)
    instances = instances_from_semantic(labels, cleanup=manifest.cleanup or None)
    return LoadedCase(
        case_id=manifest.case_id,
        image=Volume3D(data=normalized, spacing=image.spacing),
        labels=instances,
        warnings=warnings,
        manifest=manifest,
    )
