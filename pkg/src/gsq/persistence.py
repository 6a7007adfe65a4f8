"""On-disk formats and image-patch ingestion.

Codebook file (``.gsqc``), all fields little-endian::

    magic    4s   b"GSQC"
    version  u16
    flags    u16  bit0 shared, bit1 l2 lookup, bit2 fixed, bit3 finite levels
    D G d V  4 x u32
    init     u8   index into INIT_KINDS, then 3 pad bytes
    nlevels  u32, followed by nlevels x u32 level counts
    ntables  u32
    payload  ntables * V * d float32, group-major, index-major, component-minor
    crc32    u32  over every preceding byte

Tensor file (``.gsqt``)::

    magic b"GSQT", endian tag b"<" or b">", dtype tag b"f", ndim u8, pad u8,
    ndim x u32 dims, then float32 data in C order

Index file: u32 header (N, G, V) then N * G u32 indices, row-major, little-endian.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ChecksumMismatch,
    CorruptFile,
    DimensionMismatch,
    PatchTooLarge,
    UnreadableImage,
    VersionMismatch,
)
from .quantizer import INIT_KINDS, Codebook, QuantizerConfig

CODEBOOK_MAGIC = b"GSQC"
CODEBOOK_VERSION = 1
TENSOR_MAGIC = b"GSQT"

_HEAD = struct.Struct("<4sHHIIIIB3xI")
_U32 = struct.Struct("<I")

_SHARED, _L2, _FIXED, _FINITE = 1, 2, 4, 8


def encode_codebook(cb: Codebook, config: QuantizerConfig) -> bytes:
    expected = (config.n_tables, config.vocab, config.group_dim)
    if cb.tables.shape != expected:
        raise DimensionMismatch(f"codebook shape {cb.tables.shape} != {expected}")
    flags = (
        (_SHARED if config.shared_codebook else 0)
        | (_L2 if config.l2_lookup else 0)
        | (_FIXED if config.fixed_codebook else 0)
        | (_FINITE if config.is_finite else 0)
    )
    levels = config.finite_levels or ()
    parts = [
        _HEAD.pack(
            CODEBOOK_MAGIC, CODEBOOK_VERSION, flags,
            config.latent_dim, config.groups, config.group_dim, config.vocab,
            INIT_KINDS.index(cb.init_kind), len(levels),
        ),
        struct.pack(f"<{len(levels)}I", *levels),
        _U32.pack(cb.tables.shape[0]),
        np.ascontiguousarray(cb.tables, dtype="<f4").tobytes(),
    ]
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body))


def decode_codebook(data: bytes) -> tuple[Codebook, QuantizerConfig]:
    if len(data) < _HEAD.size + 8:
        raise CorruptFile("file too short to be a codebook")
    if data[:4] != CODEBOOK_MAGIC:
        raise CorruptFile(f"bad magic {data[:4]!r}")
    magic, version, flags, D, G, d, V, init, nlev = _HEAD.unpack_from(data, 0)
    if version != CODEBOOK_VERSION:
        raise VersionMismatch(f"unsupported codebook format version {version}")
    body, (crc,) = data[:-4], _U32.unpack(data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumMismatch("codebook checksum does not match its contents")
    off = _HEAD.size
    if init >= len(INIT_KINDS) or off + 4 * nlev + 4 > len(body):
        raise CorruptFile("malformed codebook header")
    levels = struct.unpack_from(f"<{nlev}I", body, off)
    off += 4 * nlev
    (ntables,) = _U32.unpack_from(body, off)
    off += 4
    if len(body) - off != 4 * ntables * V * d:
        raise CorruptFile("payload size does not match header")
    try:
        config = QuantizerConfig(
            D, G, V,
            shared_codebook=bool(flags & _SHARED),
            l2_lookup=bool(flags & _L2),
            finite_levels=levels if flags & _FINITE else None,
            fixed_codebook=bool(flags & _FIXED),
        )
    except ValueError as exc:
        raise CorruptFile(f"invalid configuration in header: {exc}") from exc
    if config.group_dim != d or config.n_tables != ntables:
        raise CorruptFile("header fields are inconsistent")
    tables = np.frombuffer(body, dtype="<f4", offset=off).reshape(ntables, V, d).astype(np.float32)
    return Codebook(tables, INIT_KINDS[init]), config


def save_codebook(cb: Codebook, config: QuantizerConfig, path) -> None:
    """Write ``cb`` as float32; float64 codewords are rounded on the way out."""
    data = encode_codebook(cb, config)
    with open(path, "wb") as fh:
        fh.write(data)


def load_codebook(path) -> tuple[Codebook, QuantizerConfig]:
    with open(path, "rb") as fh:
        return decode_codebook(fh.read())


def write_tensor(path, array) -> None:
    a = np.ascontiguousarray(array, dtype="<f4")
    head = TENSOR_MAGIC + b"<f" + bytes([a.ndim, 0]) + struct.pack(f"<{a.ndim}I", *a.shape)
    with open(path, "wb") as fh:
        fh.write(head + a.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != TENSOR_MAGIC:
        raise CorruptFile(f"{path}: not a tensor file")
    endian, dtype, ndim = chr(data[4]), chr(data[5]), data[6]
    if endian not in "<>" or dtype != "f":
        raise CorruptFile(f"{path}: unsupported tensor encoding {endian!r}{dtype!r}")
    if len(data) < 8 + 4 * ndim:
        raise CorruptFile(f"{path}: truncated header")
    shape = struct.unpack_from(f"{endian}{ndim}I", data, 8)
    off = 8 + 4 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    if len(data) - off != 4 * count:
        raise CorruptFile(f"{path}: data size does not match shape {shape}")
    arr = np.frombuffer(data, dtype=f"{endian}f4", offset=off).reshape(shape)
    return arr.astype(np.float32)


def write_indices(path, indices, vocab: int) -> None:
    idx = np.asarray(indices)
    if idx.ndim != 2:
        raise DimensionMismatch("indices must be an (N, G) matrix")
    N, G = idx.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3I", N, G, vocab))
        fh.write(np.ascontiguousarray(idx, dtype="<u4").tobytes())


def read_indices(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise CorruptFile(f"{path}: index file too short")
    N, G, V = struct.unpack_from("<3I", data, 0)
    if len(data) != 12 + 4 * N * G:
        raise CorruptFile(f"{path}: index payload does not match header ({N} x {G})")
    idx = np.frombuffer(data, dtype="<u4", offset=12).reshape(N, G).astype(np.int64)
    return idx, V


def _ppm_tokens(data: bytes, count: int):
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise UnreadableImage("truncated PPM header")
        tokens.append(data[i:j])
        i = j
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def decode_ppm(data: bytes) -> np.ndarray:
    """Binary P6 bytes -> float64 (H, W, 3) array scaled into [0, 1]."""
    if data[:2] != b"P6":
        raise UnreadableImage("not a binary P6 PPM")
    try:
        (_, w, h, maxval), off = _ppm_tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise UnreadableImage(f"bad PPM header: {exc}") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise UnreadableImage("PPM dimensions or maxval out of range")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    need = h * w * 3 * np.dtype(dtype).itemsize
    if len(data) - off < need:
        raise UnreadableImage("PPM raster is truncated")
    px = np.frombuffer(data, dtype=dtype, count=h * w * 3, offset=off)
    return px.reshape(h, w, 3).astype(np.float64) / maxval


def read_ppm(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc
    try:
        return decode_ppm(data)
    except UnreadableImage as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc


def write_ppm(path, image) -> None:
    """Write an (H, W, 3) image; floats are taken to be in [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatch("PPM images must be (H, W, 3)")
    if img.dtype != np.uint8:
        img = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def load_image(path) -> np.ndarray:
    """PPM or (H, W, 3) tensor file -> float64 image."""
    if str(path).endswith(".gsqt"):
        img = read_tensor(path).astype(np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise UnreadableImage(f"{path}: tensor is not an (H, W, 3) image")
        return img
    return read_ppm(path)


@dataclass(frozen=True)
class PatchCorpusSpec:
    sources: tuple
    patch_size: int
    stride: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(os.fspath(s) for s in self.sources))
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")
        if self.stride is None:
            object.__setattr__(self, "stride", self.patch_size)
        if self.stride < 1:
            raise ValueError("stride must be positive")

    @property
    def dim(self) -> int:
        return 3 * self.patch_size**2


def grid_shape(height: int, width: int, patch: int, stride: int) -> tuple[int, int]:
    if patch > min(height, width):
        raise PatchTooLarge(f"patch {patch} exceeds image size {height}x{width}")
    return (height - patch) // stride + 1, (width - patch) // stride + 1


def extract_patches(image: np.ndarray, patch: int, stride: int) -> np.ndarray:
    """Raster-order patches of an (H, W, 3) image, each flattened as (p, p, 3)."""
    h, w = image.shape[:2]
    nr, nc = grid_shape(h, w, patch, stride)
    win = sliding_window_view(image, (patch, patch), axis=(0, 1))[::stride, ::stride]
    # win: (nr, nc, 3, p, p) -> (nr, nc, p, p, 3)
    win = np.moveaxis(win, 2, -1)
    return np.ascontiguousarray(win).reshape(nr * nc, 3 * patch * patch)


def reassemble(patches: np.ndarray, height: int, width: int, patch: int, stride: int) -> np.ndarray:
    """Inverse of :func:`extract_patches` over the covered region.

    Overlaps are averaged. The result spans the rows and columns the patch
    grid covers, which is the full image when the stride tiles it exactly.
    """
    nr, nc = grid_shape(height, width, patch, stride)
    ch, cw = (nr - 1) * stride + patch, (nc - 1) * stride + patch
    p = np.asarray(patches, dtype=np.float64).reshape(nr, nc, patch, patch, 3)
    acc = np.zeros((ch, cw, 3))
    hits = np.zeros((ch, cw, 1))
    for r in range(nr):
        for c in range(nc):
            y, x = r * stride, c * stride
            acc[y:y + patch, x:x + patch] += p[r, c]
            hits[y:y + patch, x:x + patch] += 1.0
    return acc / hits


def ingest_patches(spec: PatchCorpusSpec) -> Iterator[np.ndarray]:
    """Yield one (N_i, 3 p^2) batch of patch vectors per source image, in order."""
    for src in spec.sources:
        img = load_image(src)
        yield extract_patches(img, spec.patch_size, spec.stride)


def load_vectors(paths: Sequence, dim: int | None = None) -> np.ndarray:
    """Concatenate 2-D tensor files into one (N, dim) batch."""
    parts = []
    for path in paths:
        arr = read_tensor(path).astype(np.float64)
        if arr.ndim != 2:
            raise DimensionMismatch(f"{path}: expected an (N, D) tensor, got shape {arr.shape}")
        parts.append(arr)
    out = np.concatenate(parts, axis=0) if parts else np.zeros((0, dim or 0))
    if dim is not None and out.shape[1] != dim:
        raise DimensionMismatch(f"vectors have dim {out.shape[1]}, expected {dim}")
    return out
