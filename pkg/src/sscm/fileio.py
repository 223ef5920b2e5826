"""Binary tensor (SSCT), checkpoint (SSCK), PGM P5, and CSV writers.

SSCT holds one n-d float array: magic ``SSCT``, version byte 1, dtype
byte (0 = f32, 1 = f64), ndim byte, little-endian u32 extents, then the
row-major little-endian scalars. A checkpoint (magic ``SSCK``) is an
ordered sequence of named SSCT blobs; names are canonical dotted paths
like ``block.0.sffb.freq.weight``. Both roundtrip bitwise.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

SSCT_MAGIC = b"SSCT"
SSCK_MAGIC = b"SSCK"
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def ssct_bytes(arr: np.ndarray) -> bytes:
    a = np.asarray(arr)
    if not a.flags.c_contiguous:  # ascontiguousarray would promote 0-d to 1-d
        a = np.ascontiguousarray(a)
    code = _DTYPE_CODE.get(a.dtype)
    if code is None:
        raise FormatError(f"ssct: unsupported dtype {a.dtype} (float32/float64 only)")
    if a.ndim > 255:
        raise FormatError(f"ssct: ndim {a.ndim} exceeds the u8 field")
    head = SSCT_MAGIC + struct.pack("<BBB", 1, code, a.ndim)
    head += struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes()


def _take(buf: bytes, off: int, n: int, what: str) -> tuple[bytes, int]:
    if off + n > len(buf):
        raise FormatError(f"ssct: truncated {what}")
    return buf[off:off + n], off + n


def ssct_from_bytes(buf: bytes, off: int = 0) -> tuple[np.ndarray, int]:
    """Decode one SSCT blob starting at ``off``; returns (array, next offset)."""
    magic, off = _take(buf, off, 4, "magic")
    if magic != SSCT_MAGIC:
        raise FormatError(f"ssct: bad magic {magic!r}")
    head, off = _take(buf, off, 3, "header")
    version, code, ndim = struct.unpack("<BBB", head)
    if version != 1:
        raise FormatError(f"ssct: unsupported version {version}")
    if code not in _CODE_DTYPE:
        raise FormatError(f"ssct: unknown dtype code {code}")
    raw, off = _take(buf, off, 4 * ndim, "extents")
    shape = struct.unpack(f"<{ndim}I", raw)
    dtype = _CODE_DTYPE[code]
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    payload, off = _take(buf, off, count * dtype.itemsize, "payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True), off


def save_ssct(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(ssct_bytes(arr))


def load_ssct(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    arr, off = ssct_from_bytes(buf)
    if off != len(buf):
        raise FormatError(f"ssct: {len(buf) - off} trailing bytes")
    return arr


def save_checkpoint(path, entries: dict[str, np.ndarray]) -> None:
    chunks = [SSCK_MAGIC, struct.pack("<BI", 1, len(entries))]
    for name, arr in entries.items():
        enc = name.encode("utf-8")
        if len(enc) > 0xFFFF:
            raise FormatError(f"checkpoint: entry name too long ({len(enc)} bytes)")
        chunks.append(struct.pack("<H", len(enc)))
        chunks.append(enc)
        chunks.append(ssct_bytes(arr))
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    magic, off = _take(buf, 0, 4, "magic")
    if magic != SSCK_MAGIC:
        raise FormatError(f"checkpoint: bad magic {magic!r}")
    head, off = _take(buf, off, 5, "header")
    version, count = struct.unpack("<BI", head)
    if version != 1:
        raise FormatError(f"checkpoint: unsupported version {version}")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        raw, off = _take(buf, off, 2, "name length")
        (nlen,) = struct.unpack("<H", raw)
        enc, off = _take(buf, off, nlen, "name")
        name = enc.decode("utf-8")
        if name in entries:
            raise FormatError(f"checkpoint: duplicate entry {name!r}")
        entries[name], off = ssct_from_bytes(buf, off)
    if off != len(buf):
        raise FormatError(f"checkpoint: {len(buf) - off} trailing bytes")
    return entries


def save_pgm(path, img: np.ndarray, maxval: int = 255) -> None:
    """Write a [0,1] grayscale image as binary P5 with round-half-up."""
    if maxval not in (255, 65535):
        raise FormatError(f"pgm: maxval must be 255 or 65535, got {maxval}")
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise FormatError(f"pgm: expected a 2-d image, got shape {a.shape}")
    q = np.floor(np.clip(a, 0.0, 1.0) * maxval + 0.5)
    pix = q.astype(">u2" if maxval == 65535 else "u1")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(pix.tobytes())


def _pgm_tokens(buf: bytes):
    """Header tokens: whitespace-separated, # starts a comment to end of line."""
    i = 0
    while True:
        while i < len(buf) and buf[i:i + 1].isspace():
            i += 1
        if i < len(buf) and buf[i:i + 1] == b"#":
            while i < len(buf) and buf[i:i + 1] != b"\n":
                i += 1
            continue
        break
    start = i
    while i < len(buf) and not buf[i:i + 1].isspace():
        i += 1
    if start == i:
        raise FormatError("pgm: truncated header")
    return buf[start:i], i


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    tok, off = _pgm_tokens(buf)
    if tok != b"P5":
        raise FormatError(f"pgm: bad magic {tok!r}")
    fields = []
    for what in ("width", "height", "maxval"):
        tok, end = _pgm_tokens(buf[off:])
        off += end
        if not tok.isdigit():
            raise FormatError(f"pgm: bad {what} token {tok!r}")
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval not in (255, 65535):
        raise FormatError(f"pgm: maxval must be 255 or 65535, got {maxval}")
    off += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    need = h * w * dtype.itemsize
    if len(buf) - off < need:
        raise FormatError("pgm: truncated pixel data")
    pix = np.frombuffer(buf[off:off + need], dtype=dtype).reshape(h, w)
    return pix.astype(np.float64) / maxval


def write_csv(path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(str(v) for v in row) for row in rows)
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def format_db(value: float) -> str:
    """PSNR formatter with the infinity sentinel."""
    if value == float("inf"):
        return "inf"
    return f"{value:.6f}"
