"""Spatio-temporal patch VQ for clips: 17 frames -> 5 temporal slices, /8 spatial.

Temporal slice 0 holds frame 1 alone (8x8x1 patches, its own codebook); the
remaining slices each cover 4 consecutive frames (8x8x4 patches). Token grid
shape is therefore (1 + (n-1)/4, H/8, W/8). Patch vectors are pixel values in
[0, 1], ordered (frame, row, col, channel) within a patch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import atomic_write_bytes
from .kmeans import kmeans_fit, nearest_center
from .seeds import rng_for

CODEBOOK_MAGIC = b"VVQ1"
GRID_MAGIC = b"VTK1"

PATCH = 8
GROUP = 4


@dataclass(frozen=True, eq=False)
class VqVideoCodebook:
    """Two codebooks of `vocab` entries: first-frame patches and 4-frame groups."""

    first_vectors: np.ndarray  # (V, 8*8*3)
    group_vectors: np.ndarray  # (V, 8*8*4*3)
    first_mean: np.ndarray
    group_mean: np.ndarray

    def __post_init__(self):
        fv = np.asarray(self.first_vectors, dtype=float)
        gv = np.asarray(self.group_vectors, dtype=float)
        if fv.shape[0] != gv.shape[0] or fv.shape[0] < 2:
            raise ValueError("codebooks must share a vocab size of at least 2")
        if not (np.all(np.isfinite(fv)) and np.all(np.isfinite(gv))):
            raise ValueError("codebook contains non-finite vectors")
        object.__setattr__(self, "first_vectors", fv)
        object.__setattr__(self, "group_vectors", gv)
        object.__setattr__(self, "first_mean", np.asarray(self.first_mean, dtype=float).reshape(fv.shape[1]))
        object.__setattr__(self, "group_mean", np.asarray(self.group_mean, dtype=float).reshape(gv.shape[1]))

    @property
    def vocab(self) -> int:
        return self.first_vectors.shape[0]


def grid_shape(n: int, h: int, w: int) -> tuple:
    """(Tt, Th, Tw) for a clip shape; n must be 1 mod 4, H and W multiples of 8."""
    if n % GROUP != 1:
        raise ValueError(f"frame count {n} must be 1 mod {GROUP}")
    if h % PATCH != 0 or w % PATCH != 0:
        raise ValueError(f"frame size {h}x{w} must be divisible by {PATCH}")
    return (1 + (n - 1) // GROUP, h // PATCH, w // PATCH)


def patchify(frames: np.ndarray) -> tuple:
    """Split a clip into (first_patches, group_patches), values scaled to [0, 1].

    first_patches: (Th*Tw, 192) from frame 1; group_patches comes from the
    remaining (Tt-1) groups of 4 frames, ordered (t, row, col) row-major.
    """
    frames = np.asarray(frames)
    n, h, w, _ = frames.shape
    tt, th, tw = grid_shape(n, h, w)
    x = frames.astype(float) / 255.0
    first = x[0].reshape(th, PATCH, tw, PATCH, 3).transpose(0, 2, 1, 3, 4)
    first = first.reshape(th * tw, PATCH * PATCH * 3)
    groups = x[1:].reshape(tt - 1, GROUP, th, PATCH, tw, PATCH, 3)
    groups = groups.transpose(0, 2, 4, 1, 3, 5, 6)  # (t, row, col, frame, py, px, c)
    groups = groups.reshape((tt - 1) * th * tw, GROUP * PATCH * PATCH * 3)
    return first, groups


def _unpatchify(first: np.ndarray, groups: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    tt, th, tw = grid_shape(n, h, w)
    out = np.empty((n, h, w, 3))
    f = first.reshape(th, tw, PATCH, PATCH, 3).transpose(0, 2, 1, 3, 4)
    out[0] = f.reshape(h, w, 3)
    g = groups.reshape(tt - 1, th, tw, GROUP, PATCH, PATCH, 3)
    g = g.transpose(0, 3, 1, 4, 2, 5, 6)
    out[1:] = g.reshape(n - 1, h, w, 3)
    return out


def train_vq(clips, vocab: int, iters: int = 30, seed: int = 0) -> VqVideoCodebook:
    """k-means codebooks over patch vectors; mean-centering stored alongside."""
    firsts, groups = [], []
    for frames in clips:
        f, g = patchify(frames)
        firsts.append(f)
        groups.append(g)
    first = np.concatenate(firsts, axis=0)
    group = np.concatenate(groups, axis=0)
    for name, pts in (("first-frame", first), ("group", group)):
        if pts.shape[0] < vocab:
            raise ValueError(f"{pts.shape[0]} {name} patches < vocab {vocab}")
    fm = first.mean(axis=0)
    gm = group.mean(axis=0)
    fc = kmeans_fit(first - fm, vocab, iters, rng_for(seed, "vq-first"), exact=False)
    gc = kmeans_fit(group - gm, vocab, iters, rng_for(seed, "vq-group"), exact=False)
    return VqVideoCodebook(fc, gc, fm, gm)


def tokenize(frames: np.ndarray, book: VqVideoCodebook) -> np.ndarray:
    """Nearest codebook entry per patch (ties to the smallest index);
    returns the (Tt, Th, Tw) integer grid."""
    n, h, w, _ = np.asarray(frames).shape
    tt, th, tw = grid_shape(n, h, w)
    first, groups = patchify(frames)
    if first.shape[1] != book.first_vectors.shape[1] or groups.shape[1] != book.group_vectors.shape[1]:
        raise ValueError("clip patch dims do not match the codebook")
    a_first, _ = nearest_center(first - book.first_mean, book.first_vectors)
    a_group, _ = nearest_center(groups - book.group_mean, book.group_vectors)
    grid = np.empty((tt, th, tw), dtype=np.int32)
    grid[0] = a_first.reshape(th, tw)
    grid[1:] = a_group.reshape(tt - 1, th, tw)
    return grid


def detokenize(grid: np.ndarray, book: VqVideoCodebook, h: int, w: int) -> np.ndarray:
    """Paste code vectors back into patch locations; returns (n, H, W, 3) uint8."""
    grid = np.asarray(grid)
    tt, th, tw = grid.shape
    if grid.min(initial=0) < 0 or grid.max(initial=0) >= book.vocab:
        bad = np.argwhere((grid < 0) | (grid >= book.vocab))[0]
        raise ValueError(f"token {grid[tuple(bad)]} at {tuple(bad)} outside [0, {book.vocab})")
    n = 1 + (tt - 1) * GROUP
    first = book.first_vectors[grid[0].ravel()] + book.first_mean
    groups = book.group_vectors[grid[1:].ravel()] + book.group_mean
    x = np.clip(_unpatchify(first, groups, n, h, w), 0.0, 1.0)
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def save_vq(path, book: VqVideoCodebook) -> None:
    """Codebook file: magic VVQ1, u32 V/P_first/P_group, then the mean and
    code vectors (f64 LE): mean_first, mean_group, first V*P_first, group V*P_group."""
    pf = book.first_vectors.shape[1]
    pg = book.group_vectors.shape[1]
    header = struct.pack("<4sIII", CODEBOOK_MAGIC, book.vocab, pf, pg)
    blob = b"".join(
        [
            header,
            book.first_mean.astype("<f8").tobytes(),
            book.group_mean.astype("<f8").tobytes(),
            np.ascontiguousarray(book.first_vectors).astype("<f8").tobytes(),
            np.ascontiguousarray(book.group_vectors).astype("<f8").tobytes(),
        ]
    )
    atomic_write_bytes(path, blob)


def load_vq(path) -> VqVideoCodebook:
    data = Path(path).read_bytes()
    magic, vocab, pf, pg = struct.unpack_from("<4sIII", data, 0)
    if magic != CODEBOOK_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {CODEBOOK_MAGIC!r}")
    off = struct.calcsize("<4sIII")

    def take(count):
        nonlocal off
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).copy()
        off += 8 * count
        return arr

    fm = take(pf)
    gm = take(pg)
    fv = take(vocab * pf).reshape(vocab, pf)
    gv = take(vocab * pg).reshape(vocab, pg)
    return VqVideoCodebook(fv, gv, fm, gm)


def save_token_grid(path, grid: np.ndarray) -> None:
    """Token grid file: magic VTK1, u32 Tt/Th/Tw, then u32 tokens row-major."""
    grid = np.asarray(grid)
    header = struct.pack("<4sIII", GRID_MAGIC, *grid.shape)
    atomic_write_bytes(path, header + np.ascontiguousarray(grid).astype("<u4").tobytes())


def load_token_grid(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, tt, th, tw = struct.unpack_from("<4sIII", data, 0)
    if magic != GRID_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {GRID_MAGIC!r}")
    off = struct.calcsize("<4sIII")
    grid = np.frombuffer(data, dtype="<u4", count=tt * th * tw, offset=off)
    return grid.reshape(tt, th, tw).astype(np.int32)
