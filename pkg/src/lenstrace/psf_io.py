"""Binary persistence for PSF grids.

Fixed little-endian layout::

    header:  magic "PSFG" | version u32 | rows u32 | cols u32 |
             channels u32 | patch_size u32 | max_kernel u32
    cells:   (row-major)  kernel height u16 | width u16 |
             illumination weights f32 x channels |
             kernel data f32 row-major, one plane per channel
    trailer: crc32 u32 of all preceding bytes

Round trips are bit-exact: kernels and weights are stored and kept in
memory as float32.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .psf import PsfGrid

MAGIC = b"PSFG"
VERSION = 1

_HEADER = struct.Struct("<4sIIIIII")
_CELL = struct.Struct("<HH")


class PsfCacheError(IOError):
    """Raised on malformed cache files, version or checksum mismatches."""


def dump_psf_grid(grid: PsfGrid, path) -> None:
    payload = bytearray()
    payload += _HEADER.pack(MAGIC, VERSION, grid.rows, grid.cols,
                            grid.channels, grid.patch_px, grid.max_kernel)
    for r in range(grid.rows):
        for c in range(grid.cols):
            kernel, weights = grid.cell(r, c)
            ch, h, w = kernel.shape
            payload += _CELL.pack(h, w)
            payload += np.ascontiguousarray(weights, dtype="<f4").tobytes()
            payload += np.ascontiguousarray(kernel, dtype="<f4").tobytes()
    payload += struct.pack("<I", zlib.crc32(bytes(payload)))
    with open(path, "wb") as fh:
        fh.write(bytes(payload))


def load_psf_grid(path) -> PsfGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size + 4:
        raise PsfCacheError("cache file truncated")
    (crc_stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc_stored:
        raise PsfCacheError("cache checksum failure")
    magic, version, rows, cols, channels, patch, max_kernel = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise PsfCacheError("not a PSF cache file")
    if version != VERSION:
        raise PsfCacheError(f"cache version {version} unsupported (want {VERSION})")

    offset = _HEADER.size
    kernels = []
    weights = np.zeros((rows, cols, channels), dtype=np.float32)
    for r in range(rows):
        row = []
        for c in range(cols):
            h, w = _CELL.unpack_from(blob, offset)
            offset += _CELL.size
            wts = np.frombuffer(blob, dtype="<f4", count=channels, offset=offset)
            offset += 4 * channels
            data = np.frombuffer(blob, dtype="<f4", count=channels * h * w,
                                 offset=offset)
            offset += 4 * channels * h * w
            if h > max_kernel or w > max_kernel:
                raise PsfCacheError("cell kernel exceeds declared max size")
            weights[r, c] = wts
            row.append(data.reshape(channels, h, w).copy())
        kernels.append(row)
    if offset != len(blob) - 4:
        raise PsfCacheError("trailing bytes in cache file")
    return PsfGrid(rows=rows, cols=cols, patch_px=patch,
                   kernels=kernels, weights=weights, version=version)
