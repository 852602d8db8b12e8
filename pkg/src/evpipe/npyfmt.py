"""Minimal NPY v1.0 encoder/decoder and NPZ archive helpers.

Only what the label and sample-bundle files need: little-endian numeric
dtypes, C order, no object arrays. Headers are padded so the data starts on
a 64-byte boundary, as the format requires.
"""

from __future__ import annotations

import ast
import io
import zipfile

import numpy as np

from evpipe.errors import BadHeader

MAGIC = b"\x93NUMPY"
ALIGN = 64
_ALLOWED_KINDS = "biufU"
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _descr(dtype: np.dtype) -> str:
    dtype = np.dtype(dtype)
    if dtype.kind not in _ALLOWED_KINDS:
        raise TypeError(f"dtype {dtype} not supported")
    if dtype.itemsize == 1 and dtype.kind in "biu":
        return "|" + dtype.str[1:]
    return "<" + dtype.newbyteorder("<").str[1:]


def header_bytes(dtype, shape) -> bytes:
    shape_repr = repr(tuple(int(s) for s in shape))
    text = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (_descr(dtype), shape_repr)
    # magic(6) + version(2) + header length(2) + text + newline
    pad = -(10 + len(text) + 1) % ALIGN
    text = text + " " * pad + "\n"
    if len(text) > 0xFFFF:
        raise ValueError("header too long for NPY v1.0")
    return MAGIC + b"\x01\x00" + len(text).to_bytes(2, "little") + text.encode("latin1")


def dumps(arr) -> bytes:
    arr = np.asarray(arr)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False) if arr.dtype.byteorder == ">" else arr
    return header_bytes(arr.dtype, arr.shape) + np.ascontiguousarray(le).tobytes()


def parse_header(buf: bytes) -> tuple[np.dtype, tuple[int, ...], int]:
    """Return (dtype, shape, data offset) from the start of an NPY blob."""
    if len(buf) < 10 or buf[:6] != MAGIC:
        raise BadHeader("missing NPY magic bytes")
    major, minor = buf[6], buf[7]
    if (major, minor) != (1, 0):
        raise BadHeader(f"unsupported NPY version {major}.{minor}")
    hlen = int.from_bytes(buf[8:10], "little")
    end = 10 + hlen
    if len(buf) < end:
        raise BadHeader("truncated NPY header")
    text = buf[10:end].decode("latin1")
    if not text.endswith("\n"):
        raise BadHeader("NPY header must end with a newline")
    try:
        meta = ast.literal_eval(text.strip())
    except (SyntaxError, ValueError) as exc:
        raise BadHeader(f"unparseable NPY header: {exc}") from None
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise BadHeader(f"NPY header must have exactly descr/fortran_order/shape, got {meta!r}")
    if meta["fortran_order"] is not False:
        raise BadHeader("fortran-ordered arrays are not supported")
    shape = meta["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise BadHeader(f"bad shape {shape!r}")
    try:
        dtype = np.dtype(meta["descr"])
    except TypeError:
        raise BadHeader(f"bad descr {meta['descr']!r}") from None
    if dtype.kind not in _ALLOWED_KINDS:
        raise BadHeader(f"dtype {dtype} not supported")
    return dtype, shape, end


def loads(buf: bytes) -> np.ndarray:
    dtype, shape, offset = parse_header(buf)
    count = int(np.prod(shape)) if shape else 1
    need = count * dtype.itemsize
    if len(buf) - offset != need:
        raise BadHeader(f"payload is {len(buf) - offset} bytes, header implies {need}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def save(path, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(arr))


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads(fh.read())


def savez(fh, arrays: dict, compress: bool = False) -> None:
    mode = zipfile.ZIP_DEFLATED if compress else zipfile.ZIP_STORED
    with zipfile.ZipFile(fh, "w", compression=mode) as zf:
        for name, arr in arrays.items():
            # fixed timestamp keeps archives byte-identical across runs
            info = zipfile.ZipInfo(name + ".npy", date_time=ZIP_EPOCH)
            info.compress_type = mode
            info.external_attr = 0o644 << 16
            zf.writestr(info, dumps(arr))


def loadz(path) -> dict[str, np.ndarray]:
    out = {}
    with zipfile.ZipFile(path) as zf:
        for info in zf.infolist():
            if not info.filename.endswith(".npy"):
                continue
            out[info.filename[:-4]] = loads(zf.read(info))
    return out


def to_buffer(arrays: dict, compress: bool = False) -> bytes:
    bio = io.BytesIO()
    savez(bio, arrays, compress)
    return bio.getvalue()
