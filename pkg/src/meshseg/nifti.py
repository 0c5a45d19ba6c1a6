"""Single-file NIfTI-1 reader/writer (.nii and .nii.gz).

Headers are parsed with a numpy structured dtype mirroring the 348-byte
standard layout.  Endianness is inferred from sizeof_hdr; gzip containers are
detected by their two magic bytes.  Only single-file volumes are supported:
paired .hdr/.img and NIfTI-2 are rejected with a clear error.
"""

from __future__ import annotations

import gzip
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import (
    BadDims,
    BadMagic,
    InvalidHeader,
    TooShort,
    TruncatedData,
    UnsupportedDatatype,
    UnsupportedFormat,
    ValueOutOfRange,
)
from .volume import Volume3D

HEADER_SIZE = 348
SINGLE_FILE_VOX_OFFSET = 352

MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIRED = b"ni1\x00"

# datatype code -> numpy dtype (little-endian base)
DTYPES = {
    2: np.dtype("<u1"),
    4: np.dtype("<i2"),
    8: np.dtype("<i4"),
    16: np.dtype("<f4"),
    64: np.dtype("<f8"),
}

_INT_RANGES = {
    2: (0, 255),
    4: (-32768, 32767),
    8: (-2147483648, 2147483647),
}

HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "<i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "<i4"),
    ("session_error", "<i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "<i2", (8,)),
    ("intent_p1", "<f4"),
    ("intent_p2", "<f4"),
    ("intent_p3", "<f4"),
    ("intent_code", "<i2"),
    ("datatype", "<i2"),
    ("bitpix", "<i2"),
    ("slice_start", "<i2"),
    ("pixdim", "<f4", (8,)),
    ("vox_offset", "<f4"),
    ("scl_slope", "<f4"),
    ("scl_inter", "<f4"),
    ("slice_end", "<i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "<f4"),
    ("cal_min", "<f4"),
    ("slice_duration", "<f4"),
    ("toffset", "<f4"),
    ("glmax", "<i4"),
    ("glmin", "<i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "<i2"),
    ("sform_code", "<i2"),
    ("quatern_b", "<f4"),
    ("quatern_c", "<f4"),
    ("quatern_d", "<f4"),
    ("qoffset_x", "<f4"),
    ("qoffset_y", "<f4"),
    ("qoffset_z", "<f4"),
    ("srow_x", "<f4", (4,)),
    ("srow_y", "<f4", (4,)),
    ("srow_z", "<f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
])
assert HEADER_DTYPE.itemsize == HEADER_SIZE


@dataclass
class NiftiHeader:
    """Validated header fields needed to decode the voxel block."""

    dim: tuple[int, ...]
    datatype_code: int
    pixdim: tuple[float, ...]
    vox_offset: int
    scl_slope: float
    scl_inter: float
    qform_code: int
    sform_code: int
    srow: np.ndarray          # (3, 4) sform rows
    quatern: tuple[float, float, float]
    qoffset: tuple[float, float, float]
    magic: bytes
    endianness: str           # "little" | "big"

    @property
    def extents(self) -> tuple[int, int, int]:
        return (self.dim[1], self.dim[2], self.dim[3])


def _is_gzip(data: bytes) -> bool:
    return len(data) >= 2 and data[0] == 0x1F and data[1] == 0x8B


def _decompress(data: bytes) -> bytes:
    return gzip.decompress(data) if _is_gzip(data) else data


def parse_header(data: bytes) -> NiftiHeader:
    """Parse and validate a NIfTI-1 header from raw (optionally gzipped) bytes."""
    data = _decompress(data)
    if len(data) < HEADER_SIZE:
        raise TooShort(f"need {HEADER_SIZE} header bytes, got {len(data)}")

    raw = data[:HEADER_SIZE]
    size_le = int(np.frombuffer(raw, "<i4", count=1)[0])
    size_be = int(np.frombuffer(raw, ">i4", count=1)[0])
    if size_le == HEADER_SIZE:
        endianness = "little"
        hdr = np.frombuffer(raw, HEADER_DTYPE)[0]
    elif size_be == HEADER_SIZE:
        endianness = "big"
        hdr = np.frombuffer(raw, HEADER_DTYPE.newbyteorder(">"))[0]
    else:
        raise BadMagic("sizeof_hdr is not 348 under either byte order")

    # numpy strips trailing NULs from S-fields; the legal magics end in one
    magic = bytes(hdr["magic"]).ljust(4, b"\x00")
    if magic not in (MAGIC_SINGLE, MAGIC_PAIRED):
        raise BadMagic(f"unrecognized magic {magic!r}")

    datatype_code = int(hdr["datatype"])
    if datatype_code not in DTYPES:
        raise UnsupportedDatatype(f"datatype code {datatype_code} not supported")

    dim = tuple(int(d) for d in hdr["dim"])
    rank = dim[0]
    if rank not in (3, 4):
        raise BadDims(f"dim[0]={rank}; only 3D volumes (or 4D with one frame) supported")
    if any(d < 1 for d in dim[1:4]):
        raise BadDims(f"spatial extents {dim[1:4]} must all be >= 1")
    if rank == 4 and dim[4] > 1:
        raise BadDims(f"dim[4]={dim[4]}; multi-frame volumes not supported")

    vox_offset = int(hdr["vox_offset"])
    if magic == MAGIC_SINGLE and vox_offset < SINGLE_FILE_VOX_OFFSET:
        raise InvalidHeader(f"vox_offset {vox_offset} < {SINGLE_FILE_VOX_OFFSET}")

    return NiftiHeader(
        dim=dim,
        datatype_code=datatype_code,
        pixdim=tuple(float(p) for p in hdr["pixdim"]),
        vox_offset=vox_offset,
        scl_slope=float(hdr["scl_slope"]),
        scl_inter=float(hdr["scl_inter"]),
        qform_code=int(hdr["qform_code"]),
        sform_code=int(hdr["sform_code"]),
        srow=np.stack([
            np.asarray(hdr["srow_x"], dtype=np.float64),
            np.asarray(hdr["srow_y"], dtype=np.float64),
            np.asarray(hdr["srow_z"], dtype=np.float64),
        ]),
        quatern=(float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"])),
        qoffset=(float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"])),
        magic=magic,
        endianness=endianness,
    )


def _qform_affine(header: NiftiHeader) -> np.ndarray:
    """Rotation from the unit quaternion, columns scaled by pixdim, qfac on z."""
    b, c, d = header.quatern
    a2 = 1.0 - (b * b + c * c + d * d)
    a = math.sqrt(a2) if a2 > 0.0 else 0.0
    r = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])
    qfac = -1.0 if header.pixdim[0] == -1.0 else 1.0
    sx, sy, sz = header.pixdim[1], header.pixdim[2], header.pixdim[3]
    scale = np.array([sx, sy, sz * qfac])
    aff = np.eye(4)
    aff[:3, :3] = r * scale[None, :]
    aff[:3, 3] = header.qoffset
    return aff


def header_affine(header: NiftiHeader) -> np.ndarray:
    """Affine precedence: sform > qform > diagonal pixdim."""
    if header.sform_code > 0:
        aff = np.eye(4)
        aff[:3, :] = header.srow
        return aff
    if header.qform_code > 0:
        return _qform_affine(header)
    aff = np.eye(4)
    for i in range(3):
        aff[i, i] = header.pixdim[i + 1] if header.pixdim[i + 1] > 0 else 1.0
    return aff


Source = Union[bytes, str, Path, BinaryIO]


def _read_bytes(source: Source) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def read_volume(source: Source) -> Volume3D:
    """Decode a single-file NIfTI-1 volume to float32 working precision.

    Applies the scl_slope/scl_inter intensity map when it is set and not the
    identity; chooses the affine by sform > qform > pixdim precedence.
    """
    data = _decompress(_read_bytes(source))
    header = parse_header(data)
    if header.magic == MAGIC_PAIRED:
        raise UnsupportedFormat("paired .hdr/.img files are not supported; use single-file .nii")

    nx, ny, nz = header.extents
    count = nx * ny * nz
    dtype = DTYPES[header.datatype_code]
    if header.endianness == "big":
        dtype = dtype.newbyteorder(">")
    need = header.vox_offset + count * dtype.itemsize
    if len(data) < need:
        raise TruncatedData(f"file holds {len(data)} bytes, voxels need {need}")

    flat = np.frombuffer(data, dtype=dtype, count=count, offset=header.vox_offset)
    voxels = flat.reshape((nx, ny, nz), order="F").astype(np.float32)

    slope, inter = header.scl_slope, header.scl_inter
    if slope != 0.0 and (slope, inter) != (1.0, 0.0):
        voxels = voxels * np.float32(slope) + np.float32(inter)

    spacing = []
    for i in range(3):
        p = header.pixdim[i + 1]
        spacing.append(float(p) if p > 0 else 1.0)

    return Volume3D(voxels, tuple(spacing), header_affine(header))


def _encode_voxels(data: np.ndarray, datatype_code: int) -> np.ndarray:
    if datatype_code not in DTYPES:
        raise UnsupportedDatatype(f"datatype code {datatype_code} not supported")
    dtype = DTYPES[datatype_code]
    if datatype_code in _INT_RANGES:
        rounded = np.rint(data)
        lo, hi = _INT_RANGES[datatype_code]
        if rounded.size and (rounded.min() < lo or rounded.max() > hi):
            raise ValueOutOfRange(
                f"values [{data.min()}, {data.max()}] do not fit datatype {datatype_code}")
        return rounded.astype(dtype)
    return data.astype(dtype)


def serialize_volume(vol: Volume3D, datatype_code: int) -> bytes:
    """Little-endian single-file NIfTI-1 bytes: header, 4-byte extension flag, voxels."""
    voxels = _encode_voxels(vol.data, datatype_code)

    hdr = np.zeros(1, dtype=HEADER_DTYPE)[0]
    hdr["sizeof_hdr"] = HEADER_SIZE
    nx, ny, nz = vol.extents
    hdr["dim"] = [3, nx, ny, nz, 1, 1, 1, 1]
    hdr["datatype"] = datatype_code
    hdr["bitpix"] = DTYPES[datatype_code].itemsize * 8
    hdr["pixdim"] = [1.0, vol.spacing[0], vol.spacing[1], vol.spacing[2], 0, 0, 0, 0]
    hdr["vox_offset"] = SINGLE_FILE_VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # mm
    hdr["qform_code"] = 0
    hdr["sform_code"] = 1
    hdr["srow_x"] = vol.affine[0].astype(np.float32)
    hdr["srow_y"] = vol.affine[1].astype(np.float32)
    hdr["srow_z"] = vol.affine[2].astype(np.float32)
    hdr["magic"] = MAGIC_SINGLE

    return hdr.tobytes() + b"\x00\x00\x00\x00" + voxels.tobytes(order="F")


def write_volume(vol: Volume3D, datatype_code: int, dest: Union[str, Path, BinaryIO]) -> None:
    """Write a single-file NIfTI-1; paths ending in .gz get a gzip container.

    Output is deterministic byte-for-byte (gzip mtime pinned to 0).
    """
    payload = serialize_volume(vol, datatype_code)
    if isinstance(dest, (str, Path)):
        path = Path(dest)
        if path.name.endswith(".gz"):
            buf = io.BytesIO()
            with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
                gz.write(payload)
            path.write_bytes(buf.getvalue())
        else:
            path.write_bytes(payload)
    else:
        dest.write(payload)
