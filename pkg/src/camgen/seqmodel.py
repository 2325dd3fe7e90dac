"""Multimodal token layout and the autoregressive video-token transformer.

A training sequence is [BOS, BOC, camera tokens, EOC, BOV, first-frame
tokens, SEP, remaining video tokens, EOV] over a unified id space of
6 specials + camera vocab + video vocab. Camera tokens come first so the
causal mask lets every generated video token see the whole instruction.
Only the remaining-video span and EOV carry loss; the conditioning prefix
is attended to but never predicted.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .fileio import atomic_write_bytes
from .seeds import rng_for

BOS, BOC, EOC, BOV, EOV, SEP = range(6)
NUM_SPECIALS = 6


@dataclass(frozen=True)
class Vocabulary:
    """Unified id space: specials, then camera ids, then video ids."""

    cam_vocab: int
    vid_vocab: int

    @property
    def camera_offset(self) -> int:
        return NUM_SPECIALS

    @property
    def video_offset(self) -> int:
        return NUM_SPECIALS + self.cam_vocab

    @property
    def size(self) -> int:
        return NUM_SPECIALS + self.cam_vocab + self.vid_vocab


@dataclass(frozen=True, eq=False)
class TokenSequence:
    ids: np.ndarray
    loss_mask: np.ndarray  # True where the id at that position is predicted

    @property
    def length(self) -> int:
        return self.ids.size


def build_sequence(cam_tokens, video_tokens, vocab: Vocabulary) -> TokenSequence:
    """Assemble the training sequence for one clip.

    cam_tokens: (T, L) camera token grid, or None for a camera-free example
    (the camera segment collapses to EOC alone). video_tokens: (Tt, Th, Tw)
    grid whose slice 0 is the first-frame conditioning.
    """
    video_tokens = np.asarray(video_tokens)
    if video_tokens.ndim != 3:
        raise ValueError(f"video tokens must be a 3D grid, got shape {video_tokens.shape}")
    if video_tokens.min(initial=0) < 0 or video_tokens.max(initial=0) >= vocab.vid_vocab:
        bad = np.argwhere((video_tokens < 0) | (video_tokens >= vocab.vid_vocab))[0]
        raise ValueError(
            f"video token {video_tokens[tuple(bad)]} at grid {tuple(bad)} outside [0, {vocab.vid_vocab})"
        )
    if cam_tokens is None:
        cam_flat = None
    else:
        cam_tokens = np.asarray(cam_tokens)
        if cam_tokens.size == 0:
            raise ValueError("camera segment is empty; pass None for a camera-free example")
        if cam_tokens.min() < 0 or cam_tokens.max() >= vocab.cam_vocab:
            bad = np.argwhere((cam_tokens < 0) | (cam_tokens >= vocab.cam_vocab))[0]
            raise ValueError(
                f"camera token {cam_tokens[tuple(bad)]} at grid {tuple(bad)} outside [0, {vocab.cam_vocab})"
            )
        cam_flat = cam_tokens.ravel() + vocab.camera_offset

    first = video_tokens[0].ravel() + vocab.video_offset
    rest = video_tokens[1:].ravel() + vocab.video_offset
    parts = [np.array([BOS])]
    if cam_flat is not None:
        parts.append(np.array([BOC]))
        parts.append(cam_flat)
    parts.append(np.array([EOC]))
    parts.extend([np.array([BOV]), first, np.array([SEP]), rest, np.array([EOV])])
    ids = np.concatenate(parts).astype(np.int64)
    mask = np.zeros(ids.size, dtype=bool)
    mask[ids.size - 1 - rest.size : ids.size] = True  # remaining video tokens + EOV
    return TokenSequence(ids, mask)


def sequence_length(cam_positions: int, cam_levels: int, grid: tuple) -> int:
    tt, th, tw = grid
    return NUM_SPECIALS + cam_positions * cam_levels + tt * th * tw


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    context: int
    layers: int = 4
    heads: int = 4
    width: int = 128
    ff_width: int = 512


class Block(nn.Module):
    def __init__(self, width, heads, ff_width):
        super().__init__()
        if width % heads != 0:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.ln1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.ln2 = nn.LayerNorm(width)
        self.fc = nn.Linear(width, ff_width)
        self.out = nn.Linear(ff_width, width)

    def forward(self, x):
        b, t, c = x.shape
        h = self.ln1(x)
        q, k, v = self.qkv(h).split(c, dim=2)
        hd = c // self.heads
        q = q.view(b, t, self.heads, hd).transpose(1, 2)
        k = k.view(b, t, self.heads, hd).transpose(1, 2)
        v = v.view(b, t, self.heads, hd).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        att = att.masked_fill(causal, float("-inf"))
        y = F.softmax(att, dim=-1) @ v
        y = y.transpose(1, 2).reshape(b, t, c)
        x = x + self.proj(y)
        h = self.ln2(x)
        return x + self.out(F.gelu(self.fc(h)))


class CamVidTransformer(nn.Module):
    """Pre-norm decoder-only transformer over the unified token vocabulary."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.width)
        self.pos_emb = nn.Embedding(cfg.context, cfg.width)
        self.blocks = nn.ModuleList(
            [Block(cfg.width, cfg.heads, cfg.ff_width) for _ in range(cfg.layers)]
        )
        self.ln_f = nn.LayerNorm(cfg.width)
        self.head = nn.Linear(cfg.width, cfg.vocab_size, bias=False)
        gen = torch.Generator().manual_seed(int(seed) & 0xFFFF_FFFF)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if p.dim() >= 2:
                    p.copy_(torch.empty_like(p).normal_(0.0, 0.02, generator=gen))
                elif "bias" in name:
                    p.zero_()
                else:
                    p.fill_(1.0)  # LayerNorm scales
        self.to(dtype)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        t = ids.shape[1]
        if t > self.cfg.context:
            raise ValueError(f"sequence length {t} exceeds context {self.cfg.context}")
        pos = torch.arange(t, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)[None, :, :]
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def sequence_loss(model, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean next-token cross-entropy (nats) over positions where mask is True.

    mask marks *target* positions: position p contributes CE(logits[p-1], ids[p]).
    An all-False mask yields an exact zero with zero gradients.
    """
    if ids.dim() == 1:
        ids = ids.unsqueeze(0)
        mask = mask.unsqueeze(0)
    logits = model(ids)
    logp = F.log_softmax(logits[:, :-1, :], dim=-1)
    targets = ids[:, 1:]
    picked = logp.gather(2, targets.unsqueeze(-1)).squeeze(-1)
    weights = mask[:, 1:].to(picked.dtype)
    total = weights.sum()
    if total.item() == 0:
        return (picked * weights).sum() * 0.0
    return -(picked * weights).sum() / total


def train_step(model, optimizer, ids, mask, clip_norm: float = 1.0) -> float:
    """One optimization step; aborts on non-finite loss or gradients."""
    optimizer.zero_grad(set_to_none=True)
    loss = sequence_loss(model, ids, mask)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise RuntimeError(f"non-finite loss {value}")
    loss.backward()
    total = torch.nn.utils.clip_grad_norm_(model.parameters(), clip_norm)
    if not math.isfinite(float(total)):
        raise RuntimeError(f"non-finite gradient norm {float(total)}")
    optimizer.step()
    return value


def make_optimizer(model, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def pad_batch(seqs) -> tuple:
    """Stack TokenSequences, padding short ones with BOS past their EOV.

    Padding is never attended to by real positions (causal mask) and never
    carries loss, so it has no effect beyond shape.
    """
    longest = max(s.length for s in seqs)
    ids = np.full((len(seqs), longest), BOS, dtype=np.int64)
    mask = np.zeros((len(seqs), longest), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : s.length] = s.ids
        mask[i, : s.length] = s.loss_mask
    return torch.from_numpy(ids), torch.from_numpy(mask)


def mix_batches(camera_seqs, generic_seqs, mix_ratio: float, batch_size: int, seed: int,
                start_step: int = 0):
    """Infinite batch stream mixing camera-conditioned and camera-free examples.

    Each slot independently draws from camera_seqs with probability mix_ratio,
    else generic_seqs. Draws depend only on (seed, step), so a resumed run
    sees exactly the batches the uninterrupted run would have.
    """
    if not 0.0 <= mix_ratio <= 1.0:
        raise ValueError(f"mix_ratio {mix_ratio} outside [0, 1]")
    step = start_step
    while True:
        rng = rng_for(seed, "batch", step)
        chosen = []
        from_camera = rng.random(batch_size) < mix_ratio
        for is_cam in from_camera:
            pool = camera_seqs if is_cam else generic_seqs
            chosen.append(pool[int(rng.integers(len(pool)))])
        ids, mask = pad_batch(chosen)
        yield ids, mask, from_camera
        step += 1


def sample_video(
    model,
    vocab: Vocabulary,
    cam_tokens,
    first_frame_tokens: np.ndarray,
    grid_shape: tuple,
    temperature: float = 1.0,
    seed: int = 0,
) -> np.ndarray:
    """Autoregressively sample the remaining video tokens after the prefix.

    Ids outside the video range are masked out, so every sample is a valid
    grid. Slice 0 of the returned grid is the given first-frame tokens
    (the input image is the first frame, at token fidelity). temperature <=
    1e-6 means greedy argmax.
    """
    tt, th, tw = grid_shape
    first = np.asarray(first_frame_tokens).ravel()
    if first.size != th * tw:
        raise ValueError(f"first-frame tokens {first.size} != {th}x{tw}")
    parts = [np.array([BOS])]
    if cam_tokens is not None:
        parts.append(np.array([BOC]))
        parts.append(np.asarray(cam_tokens).ravel() + vocab.camera_offset)
    parts.append(np.array([EOC]))
    parts.append(np.array([BOV]))
    parts.append(first + vocab.video_offset)
    parts.append(np.array([SEP]))
    prefix = np.concatenate(parts).astype(np.int64)

    need = (tt - 1) * th * tw
    rng = rng_for(seed, "sample")
    ids = torch.from_numpy(prefix).unsqueeze(0)
    out = np.empty(need, dtype=np.int64)
    lo, hi = vocab.video_offset, vocab.video_offset + vocab.vid_vocab
    model.eval()
    with torch.no_grad():
        for i in range(need):
            logits = model(ids)[0, -1].double()
            vid_logits = logits[lo:hi]  # ids outside the video range never sampled
            if temperature <= 1e-6:
                nxt = lo + int(torch.argmax(vid_logits))
            else:
                probs = F.softmax(vid_logits / temperature, dim=0).numpy()
                cdf = np.cumsum(probs)
                cdf[-1] = 1.0
                nxt = lo + min(int(np.searchsorted(cdf, rng.random(), side="right")), hi - lo - 1)
            out[i] = nxt - vocab.video_offset
            ids = torch.cat([ids, torch.tensor([[nxt]], dtype=torch.int64)], dim=1)
    grid = np.empty((tt, th, tw), dtype=np.int32)
    grid[0] = first.reshape(th, tw)
    grid[1:] = out.reshape(tt - 1, th, tw)
    return grid


def sample_videos_batch(
    model,
    vocab: Vocabulary,
    cam_batch,
    first_batch,
    grid_shape: tuple,
    temperature: float,
    seeds,
) -> np.ndarray:
    """Sample one video per (camera, first-frame) pair in a single batch.

    All prefixes must be camera-conditioned with equal lengths. Each row
    draws from its own seeded stream, so results do not depend on which
    other rows share the batch.
    """
    tt, th, tw = grid_shape
    b = len(cam_batch)
    prefixes = []
    for cam, first in zip(cam_batch, first_batch):
        prefixes.append(
            np.concatenate(
                [
                    np.array([BOS, BOC]),
                    np.asarray(cam).ravel() + vocab.camera_offset,
                    np.array([EOC, BOV]),
                    np.asarray(first).ravel() + vocab.video_offset,
                    np.array([SEP]),
                ]
            ).astype(np.int64)
        )
    lengths = {p.size for p in prefixes}
    if len(lengths) != 1:
        raise ValueError(f"prefix lengths differ: {sorted(lengths)}")
    rngs = [rng_for(s, "sample") for s in seeds]
    ids = torch.from_numpy(np.stack(prefixes))
    need = (tt - 1) * th * tw
    out = np.empty((b, need), dtype=np.int64)
    lo, hi = vocab.video_offset, vocab.video_offset + vocab.vid_vocab
    model.eval()
    with torch.no_grad():
        for i in range(need):
            logits = model(ids)[:, -1, :].double()
            vid_logits = logits[:, lo:hi]
            if temperature <= 1e-6:
                nxt = torch.argmax(vid_logits, dim=1).numpy()
            else:
                probs = F.softmax(vid_logits / temperature, dim=1).numpy()
                cdf = np.cumsum(probs, axis=1)
                cdf[:, -1] = 1.0
                draws = np.array([rng.random() for rng in rngs])
                nxt = np.minimum(
                    np.array([np.searchsorted(cdf[j], draws[j], side="right") for j in range(b)]),
                    hi - lo - 1,
                )
            out[:, i] = nxt
            ids = torch.cat([ids, torch.from_numpy(nxt + lo).view(b, 1)], dim=1)
    grids = np.empty((b, tt, th, tw), dtype=np.int32)
    for j in range(b):
        grids[j, 0] = np.asarray(first_batch[j]).reshape(th, tw)
        grids[j, 1:] = out[j].reshape(tt - 1, th, tw)
    return grids


CKPT_MAGIC = b"CKPT"


def save_checkpoint(path, model, optimizer=None, meta: dict | None = None) -> None:
    """Checkpoint: magic CKPT, key=value config text, then named f32 tensors.

    Tensor record: u16 name length, name, u32 rank, u32 dims, data (f32 LE).
    Adam moments ride along as adam.m.<param> / adam.v.<param> so training
    resumes bit-exactly.
    """
    meta = dict(meta or {})
    cfg = model.cfg
    meta.setdefault("vocab_size", cfg.vocab_size)
    meta.setdefault("context", cfg.context)
    meta.setdefault("layers", cfg.layers)
    meta.setdefault("heads", cfg.heads)
    meta.setdefault("width", cfg.width)
    meta.setdefault("ff_width", cfg.ff_width)
    tensors = [(name, p.detach().to(torch.float32)) for name, p in model.state_dict().items()]
    if optimizer is not None:
        params = dict(model.named_parameters())
        state_by_param = {id(p): optimizer.state.get(p, {}) for p in params.values()}
        for name, p in params.items():
            st = state_by_param[id(p)]
            if "exp_avg" in st:
                tensors.append((f"adam.m.{name}", st["exp_avg"].to(torch.float32)))
                tensors.append((f"adam.v.{name}", st["exp_avg_sq"].to(torch.float32)))
    config_text = "".join(f"{k}={meta[k]}\n" for k in sorted(meta))
    blob = [CKPT_MAGIC, struct.pack("<I", len(config_text.encode()))]
    blob.append(config_text.encode())
    blob.append(struct.pack("<I", len(tensors)))
    for name, t in tensors:
        raw = name.encode()
        arr = t.cpu().numpy().astype("<f4")
        blob.append(struct.pack("<H", len(raw)))
        blob.append(raw)
        blob.append(struct.pack("<I", arr.ndim))
        blob.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        blob.append(np.ascontiguousarray(arr).tobytes())
    atomic_write_bytes(path, b"".join(blob))


def load_checkpoint(path) -> tuple:
    """Returns (model, adam_moments, meta). Moments are None if absent."""
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}, expected {CKPT_MAGIC!r}")
    off = 4
    (cfg_len,) = struct.unpack_from("<I", data, off)
    off += 4
    meta = {}
    for line in data[off : off + cfg_len].decode().splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            meta[k] = v
    off += cfg_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode()
        off += name_len
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", data, off) if rank else ()
        off += 4 * rank
        size = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(dims).copy()
        off += 4 * size
        tensors[name] = torch.from_numpy(arr)
    cfg = ModelConfig(
        vocab_size=int(meta["vocab_size"]),
        context=int(meta["context"]),
        layers=int(meta["layers"]),
        heads=int(meta["heads"]),
        width=int(meta["width"]),
        ff_width=int(meta["ff_width"]),
    )
    model = CamVidTransformer(cfg)
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("adam.")})
    moments = {k: v for k, v in tensors.items() if k.startswith("adam.")}
    return model, (moments or None), meta


def restore_optimizer(model, moments: dict, lr: float, step: int) -> torch.optim.Adam:
    """Rebuild Adam with saved first/second moments and step count."""
    optimizer = make_optimizer(model, lr)
    for name, p in model.named_parameters():
        m = moments.get(f"adam.m.{name}")
        v = moments.get(f"adam.v.{name}")
        if m is None or v is None:
            raise ValueError(f"checkpoint is missing Adam state for {name}")
        optimizer.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": m.clone(),
            "exp_avg_sq": v.clone(),
        }
    return optimizer
