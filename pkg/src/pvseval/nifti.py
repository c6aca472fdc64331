"""Single-file NIfTI-1 reader/writer.

Covers exactly what the evaluation pipeline ingests: 3D volumes in the
single-file ("n+1") flavor, optionally gzip-compressed, with datatypes
u8/i16/i32/f32/f64. Dual-file pairs and NIfTI-2 are rejected explicitly.
Voxel data is held x-fastest in memory (Fortran order over (nx, ny, nz));
orientation lives in the affine, never in the array layout.
"""

from __future__ import annotations

import gzip
import io
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    BadHeaderError,
    BadMagicError,
    InconsistentBitpixError,
    RangeOverflowError,
    TooShortError,
    TruncatedDataError,
    UnsupportedDatatypeError,
    UnsupportedFormatError,
)

HEADER_SIZE = 348
SINGLE_FILE_VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"
NIFTI2_HEADER_SIZE = 540

# datatype code -> (numpy dtype, bitpix)
DATATYPES: dict[int, tuple[np.dtype, int]] = {
    2: (np.dtype(np.uint8), 8),
    4: (np.dtype(np.int16), 16),
    8: (np.dtype(np.int32), 32),
    16: (np.dtype(np.float32), 32),
    64: (np.dtype(np.float64), 64),
}

GZIP_MAGIC = b"\x1f\x8b"


@dataclass(eq=False)
class NiftiHeader:
    """Decoded NIfTI-1 header, byte order already resolved."""

    sizeof_hdr: int
    dim: tuple[int, ...]
    datatype_code: int
    bitpix: int
    pixdim: tuple[float, ...]
    vox_offset: float
    scl_slope: float
    scl_inter: float
    qform_code: int
    sform_code: int
    quatern: tuple[float, float, float]
    qoffset: tuple[float, float, float]
    srow_x: tuple[float, float, float, float]
    srow_y: tuple[float, float, float, float]
    srow_z: tuple[float, float, float, float]
    magic: bytes
    byte_order: str  # "<" or ">", as detected from sizeof_hdr

    @property
    def shape3d(self) -> tuple[int, int, int]:
        return (self.dim[1], self.dim[2], self.dim[3])

    @property
    def dtype(self) -> np.dtype:
        return DATATYPES[self.datatype_code][0]


@dataclass(eq=False)
class Volume3D:
    """Dense 3D scalar grid: data indexed [x, y, z], spacing in mm."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    affine: np.ndarray  # 3x4, voxel index -> world mm

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise ValueError(f"expected a 3D grid, got shape {self.data.shape}")
        self.data = np.asfortranarray(self.data)
        self.data.setflags(write=False)
        self.affine = np.asarray(self.affine, dtype=np.float64).reshape(3, 4)
        self.affine.setflags(write=False)
        self.spacing = tuple(float(s) for s in self.spacing)
        if any(s <= 0 for s in self.spacing):
            raise BadHeaderError(f"non-positive voxel spacing {self.spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz


@dataclass(eq=False)
class BinaryMask(Volume3D):
    """Volume3D whose data is boolean foreground/background."""

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=bool)
        super().__post_init__()

    @cached_property
    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.data))


# header layout, offsets per the NIfTI-1 standard
_FIELDS = (
    ("sizeof_hdr", 0, "i"),
    ("dim", 40, "8h"),
    ("datatype", 70, "h"),
    ("bitpix", 72, "h"),
    ("pixdim", 76, "8f"),
    ("vox_offset", 108, "f"),
    ("scl_slope", 112, "f"),
    ("scl_inter", 116, "f"),
    ("qform_code", 252, "h"),
    ("sform_code", 254, "h"),
    ("quatern", 256, "3f"),
    ("qoffset", 268, "3f"),
    ("srow_x", 280, "4f"),
    ("srow_y", 296, "4f"),
    ("srow_z", 312, "4f"),
)


def parse_header(raw: bytes) -> NiftiHeader:
    """Decode the 348-byte header, detecting byte order from sizeof_hdr.

    Raises TooShortError, UnsupportedFormatError (NIfTI-2), BadHeaderError,
    BadMagicError, UnsupportedDatatypeError or InconsistentBitpixError.
    """
    if len(raw) < HEADER_SIZE:
        raise TooShortError(f"need {HEADER_SIZE} header bytes, got {len(raw)}")

    order = None
    for candidate in ("<", ">"):
        (size,) = struct.unpack_from(candidate + "i", raw, 0)
        if size == HEADER_SIZE:
            order = candidate
            break
        if size == NIFTI2_HEADER_SIZE:
            raise UnsupportedFormatError("NIfTI-2 header (sizeof_hdr=540) is not supported")
    if order is None:
        raise BadHeaderError("sizeof_hdr is not 348 in either byte order")

    values = {}
    for name, offset, fmt in _FIELDS:
        decoded = struct.unpack_from(order + fmt, raw, offset)
        values[name] = decoded[0] if len(decoded) == 1 else decoded
    magic = bytes(raw[344:348])

    if magic not in (MAGIC_SINGLE, MAGIC_PAIR):
        raise BadMagicError(f"magic {magic!r} is neither 'n+1' nor 'ni1'")

    dim = tuple(int(d) for d in values["dim"])
    if not 1 <= dim[0] <= 7:
        raise BadHeaderError(f"dim[0]={dim[0]} outside 1..7")

    datatype = int(values["datatype"])
    if datatype not in DATATYPES:
        raise UnsupportedDatatypeError(f"datatype code {datatype} not in {sorted(DATATYPES)}")
    bitpix = int(values["bitpix"])
    if bitpix != DATATYPES[datatype][1]:
        raise InconsistentBitpixError(
            f"bitpix {bitpix} inconsistent with datatype {datatype} "
            f"(expected {DATATYPES[datatype][1]})"
        )

    return NiftiHeader(
        sizeof_hdr=HEADER_SIZE,
        dim=dim,
        datatype_code=datatype,
        bitpix=bitpix,
        pixdim=tuple(float(p) for p in values["pixdim"]),
        vox_offset=float(values["vox_offset"]),
        scl_slope=float(values["scl_slope"]),
        scl_inter=float(values["scl_inter"]),
        qform_code=int(values["qform_code"]),
        sform_code=int(values["sform_code"]),
        quatern=tuple(float(v) for v in values["quatern"]),
        qoffset=tuple(float(v) for v in values["qoffset"]),
        srow_x=tuple(float(v) for v in values["srow_x"]),
        srow_y=tuple(float(v) for v in values["srow_y"]),
        srow_z=tuple(float(v) for v in values["srow_z"]),
        magic=magic,
        byte_order=order,
    )


def _quaternion_affine(hdr: NiftiHeader) -> np.ndarray:
    b, c, d = hdr.quatern
    a2 = 1.0 - (b * b + c * c + d * d)
    a = float(np.sqrt(a2)) if a2 > 0 else 0.0
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * b * c - 2 * a * d, 2 * b * d + 2 * a * c],
            [2 * b * c + 2 * a * d, a * a + c * c - b * b - d * d, 2 * c * d - 2 * a * b],
            [2 * b * d - 2 * a * c, 2 * c * d + 2 * a * b, a * a + d * d - b * b - c * c],
        ]
    )
    qfac = -1.0 if hdr.pixdim[0] == -1.0 else 1.0
    scale = np.diag([hdr.pixdim[1], hdr.pixdim[2], qfac * hdr.pixdim[3]])
    affine = np.empty((3, 4))
    affine[:, :3] = rot @ scale
    affine[:, 3] = hdr.qoffset
    return affine


def affine_from_header(hdr: NiftiHeader) -> np.ndarray:
    """sform if coded, else qform, else a spacing diagonal."""
    if hdr.sform_code > 0:
        return np.array([hdr.srow_x, hdr.srow_y, hdr.srow_z], dtype=np.float64)
    if hdr.qform_code > 0:
        return _quaternion_affine(hdr)
    affine = np.zeros((3, 4))
    affine[0, 0], affine[1, 1], affine[2, 2] = hdr.pixdim[1], hdr.pixdim[2], hdr.pixdim[3]
    return affine


def _read_all_bytes(path: str | Path) -> bytes:
    with open(path, "rb") as fh:
        prefix = fh.read(2)
        fh.seek(0)
        if prefix == GZIP_MAGIC:
            with gzip.open(fh, "rb") as gz:
                return gz.read()
        return fh.read()


def read_volume(path: str | Path, mode: str = "intensity") -> Volume3D | BinaryMask:
    """Read a single-file NIfTI-1 volume.

    mode="mask" binarizes the raw stored values (nonzero test, before any
    scl scaling) and returns a BinaryMask; mode="intensity" applies
    scl_slope/scl_inter (slope 0 treated as 1) and returns a Volume3D of
    float64.
    """
    if mode not in ("mask", "intensity"):
        raise ValueError(f"mode must be 'mask' or 'intensity', got {mode!r}")
    raw = _read_all_bytes(path)
    hdr = parse_header(raw)

    if hdr.magic == MAGIC_PAIR:
        raise UnsupportedFormatError("dual-file ('ni1') NIfTI pairs are not supported")
    if hdr.vox_offset < SINGLE_FILE_VOX_OFFSET:
        raise BadHeaderError(
            f"vox_offset {hdr.vox_offset} < {SINGLE_FILE_VOX_OFFSET} in a single-file volume"
        )
    rank = hdr.dim[0]
    if rank == 4 and hdr.dim[4] == 1:
        rank = 3
    if rank != 3:
        raise UnsupportedFormatError(f"only 3D volumes supported, got dim={hdr.dim}")
    nx, ny, nz = hdr.shape3d
    if min(nx, ny, nz) < 1:
        raise BadHeaderError(f"non-positive grid extents {hdr.shape3d}")
    spacing = hdr.pixdim[1:4]
    if any(s <= 0 for s in spacing):
        raise BadHeaderError(f"non-positive pixdim {spacing}")

    dtype = hdr.dtype.newbyteorder(hdr.byte_order)
    count = nx * ny * nz
    start = int(hdr.vox_offset)
    nbytes = count * dtype.itemsize
    if len(raw) < start + nbytes:
        raise TruncatedDataError(
            f"need {nbytes} data bytes at offset {start}, file has {len(raw) - start}"
        )
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=start)
    grid = flat.reshape((nx, ny, nz), order="F")
    affine = affine_from_header(hdr)

    if mode == "mask":
        return BinaryMask(data=grid != 0, spacing=spacing, affine=affine)

    slope = hdr.scl_slope
    if slope == 0.0 or np.isnan(slope):
        slope = 1.0
    inter = 0.0 if np.isnan(hdr.scl_inter) else hdr.scl_inter
    data = grid.astype(np.float64) * slope + inter
    return Volume3D(data=data, spacing=spacing, affine=affine)


def _check_representable(data: np.ndarray, dtype: np.dtype, code: int) -> None:
    if dtype.kind in "ui":
        info = np.iinfo(dtype)
        if data.dtype == bool:
            return
        rounded = np.round(data)
        if not np.array_equal(rounded, data):
            raise RangeOverflowError(f"non-integral values cannot be stored as datatype {code}")
        if data.size and (data.min() < info.min or data.max() > info.max):
            raise RangeOverflowError(
                f"values outside [{info.min}, {info.max}] for datatype {code}"
            )
    elif dtype == np.float32 and data.size:
        finite = np.isfinite(data)
        if np.any(finite & (np.abs(data) > np.finfo(np.float32).max)):
            raise RangeOverflowError("finite values overflow float32")


def build_header(vol: Volume3D, datatype: int) -> bytes:
    """Assemble a little-endian single-file header for the volume."""
    dtype, bitpix = DATATYPES[datatype]
    buf = bytearray(HEADER_SIZE)
    struct.pack_into("<i", buf, 0, HEADER_SIZE)
    nx, ny, nz = vol.dims
    struct.pack_into("<8h", buf, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", buf, 70, datatype)
    struct.pack_into("<h", buf, 72, bitpix)
    sx, sy, sz = vol.spacing
    struct.pack_into("<8f", buf, 76, 1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", buf, 108, float(SINGLE_FILE_VOX_OFFSET))
    struct.pack_into("<f", buf, 112, 1.0)  # scl_slope
    struct.pack_into("<f", buf, 116, 0.0)  # scl_inter
    struct.pack_into("<h", buf, 252, 0)  # qform_code
    struct.pack_into("<h", buf, 254, 1)  # sform_code
    aff = np.asarray(vol.affine, dtype=np.float64)
    struct.pack_into("<4f", buf, 280, *aff[0])
    struct.pack_into("<4f", buf, 296, *aff[1])
    struct.pack_into("<4f", buf, 312, *aff[2])
    buf[344:348] = MAGIC_SINGLE
    return bytes(buf)


def write_volume(
    vol: Volume3D,
    path: str | Path,
    datatype: int = 16,
    gzip_compress: bool | None = None,
) -> None:
    """Write a single-file NIfTI-1 volume (vox_offset 352, little-endian).

    gzip_compress=None infers compression from a .gz suffix. Output bytes are
    deterministic (gzip mtime pinned to 0).
    """
    if datatype not in DATATYPES:
        raise UnsupportedDatatypeError(f"datatype code {datatype} not in {sorted(DATATYPES)}")
    dtype, _ = DATATYPES[datatype]
    data = np.asarray(vol.data)
    _check_representable(data, dtype, datatype)

    header = build_header(vol, datatype)
    payload = io.BytesIO()
    payload.write(header)
    payload.write(b"\x00\x00\x00\x00")  # no extensions
    payload.write(np.asfortranarray(data.astype(dtype, copy=False)).tobytes(order="F"))

    path = Path(path)
    if gzip_compress is None:
        gzip_compress = path.name.endswith(".gz")
    if gzip_compress:
        with open(path, "wb") as fh:
            with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(payload.getvalue())
    else:
        with open(path, "wb") as fh:
            fh.write(payload.getvalue())
