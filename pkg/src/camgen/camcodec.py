"""Residual vector quantizer turning camera signals into discrete tokens.

The 1D camera signal is cut into windows of W samples; each window is
z-normalized per dimension and quantized greedily through L codebook levels,
every level quantizing the residual the previous levels left behind. Token
grids are position-major, level-minor when flattened or serialized.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import atomic_write_bytes
from .kmeans import kmeans_fit, nearest_center
from .seeds import rng_for

RVQ_MAGIC = b"RVQ1"
TOKEN_MAGIC = b"CTK1"

# dims whose spread falls below this are treated as constant and left unscaled
STD_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class RvqCodebook:
    """L levels x K entries x D dims of quantization vectors (D = window W).

    Vectors live in normalized signal space; `norm_mean`/`norm_std` map raw
    windows into that space and back.
    """

    vectors: np.ndarray
    window: int
    norm_mean: np.ndarray
    norm_std: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 3:
            raise ValueError("vectors must have shape (levels, entries, dim)")
        if v.shape[2] != self.window:
            raise ValueError(f"code dim {v.shape[2]} != window {self.window}")
        if not np.all(np.isfinite(v)):
            raise ValueError("codebook contains non-finite vectors")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "norm_mean", np.asarray(self.norm_mean, dtype=float).reshape(self.window))
        object.__setattr__(self, "norm_std", np.asarray(self.norm_std, dtype=float).reshape(self.window))

    @property
    def levels(self) -> int:
        return self.vectors.shape[0]

    @property
    def entries(self) -> int:
        return self.vectors.shape[1]

    @property
    def dim(self) -> int:
        return self.vectors.shape[2]


def _signal_windows(sig: np.ndarray, window: int) -> np.ndarray:
    sig = np.asarray(sig, dtype=float).ravel()
    if sig.size % window != 0:
        raise ValueError(f"signal length {sig.size} not divisible by window {window}")
    return sig.reshape(-1, window)


def train_rvq(
    signals,
    levels: int,
    entries: int,
    window: int,
    iters: int = 30,
    seed: int = 0,
) -> RvqCodebook:
    """Train the multi-level codebook on a set of camera signals.

    Level 1 is k-means over all normalized windows; level l is k-means over
    the residuals left after greedy quantization through levels 1..l-1.
    """
    windows = np.concatenate([_signal_windows(s, window) for s in signals], axis=0)
    if windows.shape[0] < entries:
        raise ValueError(
            f"need at least {entries} windows to train {entries} entries, got {windows.shape[0]}"
        )
    mean = windows.mean(axis=0)
    std = windows.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    residual = (windows - mean) / std
    books = []
    for level in range(levels):
        centers = kmeans_fit(residual, entries, iters, rng_for(seed, "rvq-level", level))
        books.append(centers)
        a, _ = nearest_center(residual, centers)
        residual = residual - centers[a]
    return RvqCodebook(np.stack(books), window, mean, std)


def rvq_encode(sig: np.ndarray, book: RvqCodebook) -> np.ndarray:
    """Greedy residual encode; returns the (T, L) integer token grid."""
    residual = (_signal_windows(sig, book.window) - book.norm_mean) / book.norm_std
    tokens = np.empty((residual.shape[0], book.levels), dtype=np.int32)
    for level in range(book.levels):
        a, _ = nearest_center(residual, book.vectors[level])
        tokens[:, level] = a
        residual = residual - book.vectors[level][a]
    return tokens


def rvq_decode(tokens: np.ndarray, book: RvqCodebook) -> np.ndarray:
    """Sum the selected vectors across levels and denormalize back to a signal."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] != book.levels:
        raise ValueError(f"token grid must be (T, {book.levels}), got {tokens.shape}")
    if tokens.min(initial=0) < 0 or tokens.max(initial=0) >= book.entries:
        bad = np.argwhere((tokens < 0) | (tokens >= book.entries))[0]
        raise ValueError(
            f"token {tokens[tuple(bad)]} at position {tuple(bad)} outside [0, {book.entries})"
        )
    recon = np.zeros((tokens.shape[0], book.dim))
    for level in range(book.levels):
        recon += book.vectors[level][tokens[:, level]]
    return (recon * book.norm_std + book.norm_mean).ravel()


def save_rvq(path: str | Path, book: RvqCodebook) -> None:
    """Codebook file: magic RVQ1, u32 L/K/D/W, norm stats (2*D f64), L*K*D f64 LE."""
    header = struct.pack("<4sIIII", RVQ_MAGIC, book.levels, book.entries, book.dim, book.window)
    blob = b"".join(
        [
            header,
            book.norm_mean.astype("<f8").tobytes(),
            book.norm_std.astype("<f8").tobytes(),
            np.ascontiguousarray(book.vectors).astype("<f8").tobytes(),
        ]
    )
    atomic_write_bytes(path, blob)


def load_rvq(path: str | Path) -> RvqCodebook:
    data = Path(path).read_bytes()
    magic, levels, entries, dim, window = struct.unpack_from("<4sIIII", data, 0)
    if magic != RVQ_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {RVQ_MAGIC!r}")
    off = struct.calcsize("<4sIIII")
    mean = np.frombuffer(data, dtype="<f8", count=dim, offset=off)
    off += 8 * dim
    std = np.frombuffer(data, dtype="<f8", count=dim, offset=off)
    off += 8 * dim
    vectors = np.frombuffer(data, dtype="<f8", count=levels * entries * dim, offset=off)
    return RvqCodebook(vectors.reshape(levels, entries, dim).copy(), window, mean.copy(), std.copy())


def save_camera_tokens(path: str | Path, tokens: np.ndarray) -> None:
    """Token file: magic CTK1, u32 T, u32 L, then T*L u16 LE, position-major."""
    tokens = np.asarray(tokens)
    if tokens.max(initial=0) > 0xFFFF:
        raise ValueError("camera token does not fit in u16")
    header = struct.pack("<4sII", TOKEN_MAGIC, tokens.shape[0], tokens.shape[1])
    atomic_write_bytes(path, header + np.ascontiguousarray(tokens).astype("<u2").tobytes())


def load_camera_tokens(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, t, levels = struct.unpack_from("<4sII", data, 0)
    if magic != TOKEN_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {TOKEN_MAGIC!r}")
    off = struct.calcsize("<4sII")
    tokens = np.frombuffer(data, dtype="<u2", count=t * levels, offset=off)
    return tokens.reshape(t, levels).astype(np.int32)
