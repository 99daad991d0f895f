"""Reader for the imaging simulator's on-disk dataset layout.

The generator writes ``out/{gt,input,fov}/NNNN.png`` plus ``manifest.json``:
8-bit sRGB frames for ground truth and degraded input, and a 16-bit PNG
whose first two channels carry the normalized sensor coordinates in [-1, 1]
as fixed point.  Only these files are consumed here; nothing else couples
the trainer to the simulator.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch


def _read_png(path) -> np.ndarray:
    import cv2

    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise IOError(f"cannot read {path}")
    if data.ndim == 3:
        data = data[:, :, ::-1]  # BGR -> RGB
    return data


def decode_fov(encoded: np.ndarray) -> np.ndarray:
    """u16 fixed point -> [-1, 1] floats (the generator's inverse)."""
    return encoded.astype(np.float64) * (2.0 / 65535.0) - 1.0


class PairsDataset:
    """Aligned (degraded, clean, fov) triples with deterministic crops."""

    def __init__(self, root, crop: int | None = None, indices=None):
        self.root = Path(root)
        with open(self.root / "manifest.json") as fh:
            self.manifest = json.load(fh)
        names = [rec["name"] for rec in self.manifest["images"]]
        if indices is not None:
            names = [names[i] for i in indices]
        self.names = names
        if not self.names:
            raise ValueError(f"dataset at {root} is empty")
        self.crop = crop
        self._cache = {}

    def __len__(self):
        return len(self.names)

    def _load(self, name):
        if name not in self._cache:
            gt = _read_png(self.root / "gt" / name).astype(np.float32) / 255.0
            deg = _read_png(self.root / "input" / name).astype(np.float32) / 255.0
            fov_png = _read_png(self.root / "fov" / name)
            if fov_png.dtype != np.uint16:
                raise IOError(f"fov map {name} is not 16-bit")
            fov = decode_fov(fov_png[:, :, :2]).astype(np.float32)
            self._cache[name] = (deg, gt, fov)
        return self._cache[name]

    def sample(self, index: int, rng: np.random.Generator | None = None):
        """One training triple as CHW tensors; random crop when configured."""
        deg, gt, fov = self._load(self.names[index])
        H, W = deg.shape[:2]
        if self.crop is not None:
            ch = cw = self.crop
            if ch > H or cw > W:
                raise ValueError("crop exceeds frame size")
            if rng is None:
                y0, x0 = (H - ch) // 2, (W - cw) // 2
            else:
                y0 = int(rng.integers(0, H - ch + 1))
                x0 = int(rng.integers(0, W - cw + 1))
            deg = deg[y0:y0 + ch, x0:x0 + cw]
            gt = gt[y0:y0 + ch, x0:x0 + cw]
            fov = fov[y0:y0 + ch, x0:x0 + cw]
        to_t = lambda a: torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1)))
        return to_t(deg), to_t(gt), to_t(fov)

    def batch(self, indices, rng=None):
        triples = [self.sample(i, rng) for i in indices]
        return tuple(torch.stack(parts) for parts in zip(*triples))
