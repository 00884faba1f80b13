"""
NIfTI-1 single-file reader and writer (.nii / .nii.gz).

Only the three datatypes the pipeline needs are supported: uint8 (2) for
labels, int16 (4) for CT intensities and float32 (16) for probabilities.
Every header field is parsed and written back, so orientation matrices
and free-text fields survive a round trip untouched even though the
pipeline itself works in voxel space.
"""

from __future__ import annotations

import gzip
import struct
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .volume import Kind, Volume

HEADER_SIZE = 348
DEFAULT_VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16

DATATYPES = {
    DT_UINT8: (np.dtype(np.uint8), 8),
    DT_INT16: (np.dtype(np.int16), 16),
    DT_FLOAT32: (np.dtype(np.float32), 32),
}

# (name, struct code) in on-disk order; 348 bytes in total
_FIELDS = [
    ("sizeof_hdr", "i"),
    ("data_type", "10s"),
    ("db_name", "18s"),
    ("extents", "i"),
    ("session_error", "h"),
    ("regular", "c"),
    ("dim_info", "B"),
    ("dim", "8h"),
    ("intent_p1", "f"),
    ("intent_p2", "f"),
    ("intent_p3", "f"),
    ("intent_code", "h"),
    ("datatype", "h"),
    ("bitpix", "h"),
    ("slice_start", "h"),
    ("pixdim", "8f"),
    ("vox_offset", "f"),
    ("scl_slope", "f"),
    ("scl_inter", "f"),
    ("slice_end", "h"),
    ("slice_code", "B"),
    ("xyzt_units", "B"),
    ("cal_max", "f"),
    ("cal_min", "f"),
    ("slice_duration", "f"),
    ("toffset", "f"),
    ("glmax", "i"),
    ("glmin", "i"),
    ("descrip", "80s"),
    ("aux_file", "24s"),
    ("qform_code", "h"),
    ("sform_code", "h"),
    ("quatern", "3f"),
    ("qoffset", "3f"),
    ("srow_x", "4f"),
    ("srow_y", "4f"),
    ("srow_z", "4f"),
    ("intent_name", "16s"),
    ("magic", "4s"),
]
_FORMAT = "".join(code for _, code in _FIELDS)


def _field_widths():
    widths = []
    for _, code in _FIELDS:
        count = code[:-1]
        if code.endswith("s") or not count:
            widths.append(1)
        else:
            widths.append(int(count))
    return widths


_WIDTHS = _field_widths()
assert struct.calcsize("<" + _FORMAT) == HEADER_SIZE


class NiftiError(ValueError):
    """Malformed or unsupported NIfTI payload."""


@dataclass
class NiftiHeader:
    """All 348 header bytes, decoded. ``endianness`` is "<" or ">"."""

    dim: Tuple[int, ...] = (3, 1, 1, 1, 1, 1, 1, 1)
    datatype: int = DT_INT16
    bitpix: int = 16
    pixdim: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    vox_offset: float = float(DEFAULT_VOX_OFFSET)
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    magic: bytes = MAGIC_SINGLE
    endianness: str = "<"
    sizeof_hdr: int = HEADER_SIZE
    data_type: bytes = b""
    db_name: bytes = b""
    extents: int = 0
    session_error: int = 0
    regular: bytes = b"r"
    dim_info: int = 0
    intent_p1: float = 0.0
    intent_p2: float = 0.0
    intent_p3: float = 0.0
    intent_code: int = 0
    slice_start: int = 0
    slice_end: int = 0
    slice_code: int = 0
    xyzt_units: int = 2  # millimeters
    cal_max: float = 0.0
    cal_min: float = 0.0
    slice_duration: float = 0.0
    toffset: float = 0.0
    glmax: int = 0
    glmin: int = 0
    descrip: bytes = b""
    aux_file: bytes = b""
    qform_code: int = 0
    sform_code: int = 0
    quatern: Tuple[float, ...] = (0.0, 0.0, 0.0)
    qoffset: Tuple[float, ...] = (0.0, 0.0, 0.0)
    srow_x: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    srow_y: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    srow_z: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    intent_name: bytes = b""

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.dim[1:4])

    @property
    def spacing(self) -> Tuple[float, float, float]:
        return tuple(float(p) for p in self.pixdim[1:4])

    @property
    def origin(self) -> Tuple[float, float, float]:
        """Translation from qform, else sform, else zero. Rotations are not applied."""
        if self.qform_code > 0:
            return tuple(float(o) for o in self.qoffset)
        if self.sform_code > 0:
            return (float(self.srow_x[3]), float(self.srow_y[3]), float(self.srow_z[3]))
        return (0.0, 0.0, 0.0)

    @property
    def description(self) -> str:
        return self.descrip.split(b"\x00", 1)[0].decode("latin-1")

    def pack(self) -> bytes:
        values = []
        for name, code in _FIELDS:
            value = getattr(self, name)
            if isinstance(value, (tuple, list)):
                values.extend(value)
            else:
                values.append(value)
        try:
            return struct.pack(self.endianness + _FORMAT, *values)
        except struct.error as exc:
            raise NiftiError(f"cannot encode header: {exc}") from exc


def _decode(raw: bytes, endianness: str) -> NiftiHeader:
    flat = struct.unpack(endianness + _FORMAT, raw)
    kwargs = {}
    pos = 0
    for (name, code), width in zip(_FIELDS, _WIDTHS):
        if width == 1:
            kwargs[name] = flat[pos]
        else:
            kwargs[name] = tuple(flat[pos:pos + width])
        pos += width
    return NiftiHeader(endianness=endianness, **kwargs)


def _maybe_gunzip(payload: bytes) -> bytes:
    if payload[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(payload)
        except (OSError, EOFError, zlib.error) as exc:
            raise NiftiError(f"corrupt gzip envelope: {exc}") from exc
    return payload


def parse_header(raw: bytes) -> NiftiHeader:
    """Decode and validate a header from the first 348 bytes of ``raw``."""
    if len(raw) < HEADER_SIZE:
        raise NiftiError(f"truncated header: {len(raw)} bytes")
    raw = raw[:HEADER_SIZE]
    hdr = None
    for endianness in ("<", ">"):
        candidate = _decode(raw, endianness)
        if 1 <= candidate.dim[0] <= 7:
            hdr = candidate
            break
    if hdr is None:
        raise NiftiError("dim[0] outside [1, 7] in either byte order")
    if hdr.sizeof_hdr != HEADER_SIZE:
        raise NiftiError(f"sizeof_hdr is {hdr.sizeof_hdr}, expected 348")
    if hdr.magic == MAGIC_PAIR:
        raise NiftiError("dual-file (.hdr/.img) NIfTI is not supported")
    if hdr.magic != MAGIC_SINGLE:
        raise NiftiError(f"bad magic {hdr.magic!r}")
    if hdr.dim[0] != 3:
        raise NiftiError(f"rank {hdr.dim[0]} volume; only rank 3 is supported")
    if any(d < 1 for d in hdr.dims):
        raise NiftiError(f"non-positive dimension in {hdr.dims}")
    if hdr.datatype not in DATATYPES:
        raise NiftiError(f"unsupported datatype code {hdr.datatype}")
    if DATATYPES[hdr.datatype][1] != hdr.bitpix:
        raise NiftiError(f"bitpix {hdr.bitpix} inconsistent with datatype {hdr.datatype}")
    if not all(np.isfinite(p) and p > 0 for p in hdr.spacing):
        raise NiftiError(f"non-positive pixdim {hdr.spacing}")
    off = hdr.vox_offset
    if not np.isfinite(off) or off < DEFAULT_VOX_OFFSET or off != int(off):
        raise NiftiError(f"invalid vox_offset {off}")
    if not (np.isfinite(hdr.scl_slope) and np.isfinite(hdr.scl_inter)):
        raise NiftiError("non-finite scl_slope / scl_inter")
    if not all(np.isfinite(o) for o in hdr.origin):
        raise NiftiError("non-finite origin")
    return hdr


def _read_bytes(source: Union[bytes, bytearray, str, Path]) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    return Path(source).read_bytes()


def read_header(source: Union[bytes, str, Path]) -> NiftiHeader:
    """Parse only the header; for a path, the voxel payload is never read."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        return parse_header(_maybe_gunzip(bytes(source)))
    path = Path(source)
    with open(path, "rb") as fh:
        head = fh.read(2)
    try:
        if head == b"\x1f\x8b":
            with gzip.open(path, "rb") as fh:
                raw = fh.read(HEADER_SIZE)
        else:
            with open(path, "rb") as fh:
                raw = fh.read(HEADER_SIZE)
    except (OSError, EOFError, zlib.error) as exc:
        raise NiftiError(f"cannot read header of {path}: {exc}") from exc
    return parse_header(raw)


def read_volume(source: Union[bytes, str, Path], kind_hint: Kind = Kind.HU) -> Tuple[Volume, NiftiHeader]:
    """Load a volume and its header.

    Args:
        source: raw file bytes (optionally gzipped) or a path.
        kind_hint: HU or Probability; used unless the file is a 0/1 uint8 mask.

    Returns:
        (volume, header). Values are scaled by scl_slope/scl_inter when the
        slope is non-zero and the pair is not the identity.
    """
    payload = _maybe_gunzip(_read_bytes(source))
    hdr = parse_header(payload)
    dtype, _ = DATATYPES[hdr.datatype]
    dtype = dtype.newbyteorder(hdr.endianness)
    nx, ny, nz = hdr.dims
    count = nx * ny * nz
    offset = int(hdr.vox_offset)
    nbytes = count * dtype.itemsize
    if len(payload) < offset + nbytes:
        raise NiftiError(f"truncated payload: need {offset + nbytes} bytes, have {len(payload)}")
    raw = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
    data = raw.astype(dtype.newbyteorder("="))
    if data.dtype.kind == "f" and not np.all(np.isfinite(data)):
        raise NiftiError("non-finite voxel values")

    if hdr.scl_slope != 0 and not (hdr.scl_slope == 1 and hdr.scl_inter == 0):
        data = data.astype(np.float64) * float(hdr.scl_slope) + float(hdr.scl_inter)
        if not np.all(np.isfinite(data)):
            raise NiftiError("scaled voxel values overflow")
        if np.all(data == np.round(data)) and np.abs(data).max(initial=0) < 2**31:
            data = data.astype(np.int32)

    if hdr.datatype == DT_UINT8 and data.dtype == np.uint8 and data.max(initial=0) <= 1:
        kind = Kind.LABEL
    else:
        kind = Kind(kind_hint)
        if kind is Kind.LABEL:
            kind = Kind.HU

    harmonized = hdr.description.startswith("harmonized")
    try:
        vol = Volume(
            data.reshape((nx, ny, nz), order="F"),
            spacing=hdr.spacing,
            origin=hdr.origin,
            kind=kind,
            harmonized=harmonized,
        )
    except ValueError as exc:
        raise NiftiError(str(exc)) from exc
    return vol, hdr


def _encode_data(v: Volume, datatype: int) -> np.ndarray:
    if datatype not in DATATYPES:
        raise NiftiError(f"unsupported datatype code {datatype}")
    if v.kind is Kind.LABEL and datatype != DT_UINT8:
        raise NiftiError("label volumes are written as uint8")
    if v.kind is Kind.PROBABILITY and datatype != DT_FLOAT32:
        raise NiftiError("probability volumes need float32; integer storage is lossy")
    dtype = DATATYPES[datatype][0]
    data = v.data
    if datatype == DT_FLOAT32:
        if data.size and np.abs(data).max() > np.finfo(np.float32).max:
            raise NiftiError("values exceed float32 range")
        return data.astype(np.float32)
    info = np.iinfo(dtype)
    if data.dtype.kind == "f" and not np.all(data == np.round(data)):
        raise NiftiError(f"non-integer values cannot be stored as {dtype}")
    if data.size and (data.min() < info.min or data.max() > info.max):
        raise NiftiError(f"values [{data.min()}, {data.max()}] exceed {dtype} range")
    return data.astype(dtype)


def default_datatype(v: Volume) -> int:
    if v.kind is Kind.LABEL:
        return DT_UINT8
    if v.kind is Kind.PROBABILITY:
        return DT_FLOAT32
    if v.data.dtype.kind in "iub":
        return DT_INT16
    return DT_FLOAT32


def write_volume(
    v: Volume,
    datatype: Optional[int] = None,
    template: Optional[NiftiHeader] = None,
    description: Optional[str] = None,
    compress: bool = False,
) -> bytes:
    """Serialize ``v`` as a single-file NIfTI-1 payload.

    A ``template`` header carries orientation and free-text fields over
    from a source file; geometry, datatype and scaling always come from
    ``v``. Gzip output uses a zero mtime so identical inputs produce
    identical bytes.
    """
    if datatype is None:
        datatype = default_datatype(v)
    data = _encode_data(v, datatype)
    base = template if template is not None else NiftiHeader(
        qform_code=1,
        quatern=(0.0, 0.0, 0.0),
        qoffset=tuple(v.origin),
        pixdim=(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0),
    )
    pixdim = (base.pixdim[0] if base.pixdim[0] in (-1.0, 1.0) else 1.0,) + tuple(v.spacing) + tuple(base.pixdim[4:])
    changes = dict(
        sizeof_hdr=HEADER_SIZE,
        dim=(3,) + v.dims + (1, 1, 1, 1),
        datatype=datatype,
        bitpix=DATATYPES[datatype][1],
        pixdim=pixdim,
        vox_offset=float(DEFAULT_VOX_OFFSET),
        scl_slope=1.0,
        scl_inter=0.0,
        magic=MAGIC_SINGLE,
    )
    if description is not None:
        changes["descrip"] = description.encode("latin-1")[:80]
    hdr = replace(base, **changes)
    body = data.astype(data.dtype.newbyteorder(hdr.endianness)).tobytes(order="F")
    out = hdr.pack() + b"\x00" * (DEFAULT_VOX_OFFSET - HEADER_SIZE) + body
    if compress:
        out = gzip.compress(out, compresslevel=6, mtime=0)
    return out


def save(path: Union[str, Path], v: Volume, **kwargs) -> None:
    """Write ``v`` to ``path``; a .gz suffix selects gzip compression."""
    path = Path(path)
    kwargs.setdefault("compress", path.suffix == ".gz")
    path.write_bytes(write_volume(v, **kwargs))


def load(path: Union[str, Path], kind_hint: Kind = Kind.HU) -> Volume:
    return read_volume(path, kind_hint)[0]
