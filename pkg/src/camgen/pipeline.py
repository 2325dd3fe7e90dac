"""Pipeline orchestration behind the CLI: data generation, codec and model
training, clip generation, and checkpoint-series evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import camcodec, floweval, scenegen, seqmodel, vidcodec
from .config import PipelineConfig, Layout, layout
from .geometry import (
    CameraPath,
    Direction,
    cardinal_path,
    path_to_signal,
    sinusoid_signature,
    write_pose_file,
)
from .seeds import split_seed

RVQ_NAME = "camcodec.rvq"
VVQ_NAME = "vidcodec.vvq"
LOG_NAME = "train_log.txt"


def model_ckpt_name(step: int) -> str:
    return f"model_step{step:06d}.ckpt"


def camera_signal(path: CameraPath, direction_name: str, cfg: PipelineConfig) -> np.ndarray:
    """Per-frame delta signal, plus the sinusoid signature channel when enabled.

    Random (uncommanded) paths carry a zero signature: there is no cardinal
    identity to advertise.
    """
    sig = path_to_signal(path)
    if cfg.signature:
        if direction_name == "random":
            extra = np.zeros(sig.size)
        else:
            extra = sinusoid_signature(Direction.from_name(direction_name), sig.size)
        sig = np.concatenate([sig, extra])
    return sig


def cmd_gen_data(cfg: PipelineConfig, out_dir, num_clips: int, mix: str) -> Path:
    layout(cfg)  # validates frame/size constraints before any rendering
    return scenegen.generate_dataset(
        out_dir,
        num_clips,
        cfg.frames,
        cfg.height,
        cfg.width,
        direction_mix=mix,
        seed=cfg.seed,
        speed_range=(cfg.speed_min, cfg.speed_max),
        rot_cap=cfg.rot_cap,
        fov_deg=cfg.fov_deg,
        clips_per_scene=cfg.clips_per_scene,
    )


def require_artifacts(*paths) -> None:
    missing = [str(p) for p in paths if not Path(p).is_file()]
    if missing:
        raise FileNotFoundError("missing prerequisite artifacts: " + ", ".join(missing))


def _clip_paths(dataset_dir, rows):
    dataset_dir = Path(dataset_dir)
    missing = [str(dataset_dir / name) for name, _, _ in rows if not (dataset_dir / name).is_dir()]
    if missing:
        raise FileNotFoundError("missing clips: " + ", ".join(missing))
    return [dataset_dir / name for name, _, _ in rows]


def cmd_train_camcodec(cfg: PipelineConfig, dataset_dir, ckpt_dir) -> Path:
    rows = scenegen.load_manifest(dataset_dir)
    dirs = _clip_paths(dataset_dir, rows)
    signals = []
    for (name, direction, _), clip_dir in zip(rows, dirs):
        clip = scenegen.load_clip(clip_dir)
        signals.append(camera_signal(clip.path, direction, cfg))
    book = camcodec.train_rvq(
        signals,
        cfg.cam_levels,
        cfg.cam_vocab,
        cfg.cam_window,
        iters=cfg.kmeans_iters,
        seed=split_seed(cfg.seed, "camcodec"),
    )
    out = Path(ckpt_dir) / RVQ_NAME
    camcodec.save_rvq(out, book)
    return out


def cmd_train_vidcodec(cfg: PipelineConfig, dataset_dir, ckpt_dir) -> Path:
    rows = scenegen.load_manifest(dataset_dir)
    dirs = _clip_paths(dataset_dir, rows)
    frames = (scenegen.load_clip(d).frames for d in dirs)
    book = vidcodec.train_vq(
        frames, cfg.vid_vocab, iters=cfg.kmeans_iters, seed=split_seed(cfg.seed, "vidcodec")
    )
    out = Path(ckpt_dir) / VVQ_NAME
    vidcodec.save_vq(out, book)
    return out


@dataclass(frozen=True, eq=False)
class ClipTokens:
    """Everything the sequence model and evaluator need from one clip."""

    clip_id: str
    direction: str
    cam_tokens: np.ndarray
    grid: np.ndarray
    frames: np.ndarray


def load_clip_tokens(cfg, dataset_dir, rvq_book, vvq_book, limit: int | None = None):
    rows = scenegen.load_manifest(dataset_dir)
    if limit is not None:
        rows = rows[:limit]
    dirs = _clip_paths(dataset_dir, rows)
    out = []
    for (name, direction, _), clip_dir in zip(rows, dirs):
        clip = scenegen.load_clip(clip_dir)
        sig = camera_signal(clip.path, direction, cfg)
        out.append(
            ClipTokens(
                name,
                direction,
                camcodec.rvq_encode(sig, rvq_book),
                vidcodec.tokenize(clip.frames, vvq_book),
                clip.frames,
            )
        )
    return out


def _codec_paths(ckpt_dir):
    ckpt_dir = Path(ckpt_dir)
    return ckpt_dir / RVQ_NAME, ckpt_dir / VVQ_NAME


def cmd_train_model(cfg: PipelineConfig, dataset_dir, ckpt_dir, resume: bool = False) -> Path:
    """Train the transformer; snapshots land in ckpt_dir every snapshot_every
    steps (plus the untrained step-0 snapshot and the final step)."""
    lay = layout(cfg)
    ckpt_dir = Path(ckpt_dir)
    rvq_path, vvq_path = _codec_paths(ckpt_dir)
    require_artifacts(rvq_path, vvq_path)
    rvq_book = camcodec.load_rvq(rvq_path)
    vvq_book = vidcodec.load_vq(vvq_path)
    vocab = seqmodel.Vocabulary(cfg.cam_vocab, cfg.vid_vocab)

    clips = load_clip_tokens(cfg, dataset_dir, rvq_book, vvq_book)
    cam_seqs = [seqmodel.build_sequence(c.cam_tokens, c.grid, vocab) for c in clips]
    gen_seqs = [seqmodel.build_sequence(None, c.grid, vocab) for c in clips]

    start = 0
    moments = None
    model = None
    if resume:
        snaps = sorted(ckpt_dir.glob("model_step*.ckpt"))
        if snaps:
            model, moments, meta = seqmodel.load_checkpoint(snaps[-1])
            start = int(meta.get("step", 0))
    if model is None:
        mcfg = seqmodel.ModelConfig(
            vocab.size, lay.context, cfg.model_layers, cfg.model_heads, cfg.model_width, cfg.model_ff
        )
        model = seqmodel.CamVidTransformer(mcfg, seed=split_seed(cfg.seed, "model-init"))
    if start > 0:
        if moments is None:
            raise ValueError(f"checkpoint at step {start} lacks optimizer state; cannot resume")
        optimizer = seqmodel.restore_optimizer(model, moments, cfg.lr, start)
    else:
        optimizer = seqmodel.make_optimizer(model, cfg.lr)

    def snapshot(step):
        seqmodel.save_checkpoint(
            ckpt_dir / model_ckpt_name(step),
            model,
            optimizer if step > 0 else None,
            {"step": step, "lr": cfg.lr, "seed": cfg.seed, "mix_ratio": cfg.mix_ratio},
        )

    if start == 0:
        snapshot(0)
    batches = seqmodel.mix_batches(
        cam_seqs, gen_seqs, cfg.mix_ratio, cfg.batch, split_seed(cfg.seed, "batches"), start_step=start
    )
    log_path = ckpt_dir / LOG_NAME
    with open(log_path, "a") as log:
        for step in range(start, cfg.steps):
            ids, mask, _ = next(batches)
            t0 = time.perf_counter()
            loss = seqmodel.train_step(model, optimizer, ids, mask, cfg.clip_norm)
            ms = (time.perf_counter() - t0) * 1000.0
            log.write(f"{step + 1} {loss:.6f} {cfg.lr:g} {ms:.1f}\n")
            if (step + 1) % cfg.snapshot_every == 0 or step + 1 == cfg.steps:
                snapshot(step + 1)
    return ckpt_dir / model_ckpt_name(cfg.steps)


def tokenize_first_frame(image: np.ndarray, vvq_book) -> np.ndarray:
    """Token row for a single frame, via the first-frame codebook."""
    grid = vidcodec.tokenize(image[None, ...] if image.ndim == 3 else image, vvq_book)
    return grid[0]


def cmd_generate(
    cfg: PipelineConfig,
    ckpt_path,
    ckpt_dir,
    image_path,
    direction_name: str,
    speed: float,
    out_dir,
    temperature: float | None = None,
    seed: int | None = None,
) -> Path:
    """Generate one clip from an input image and a cardinal instruction."""
    lay = layout(cfg)
    direction = Direction.from_name(direction_name)
    rvq_path, vvq_path = _codec_paths(ckpt_dir)
    require_artifacts(ckpt_path, rvq_path, vvq_path, image_path)
    image = scenegen.read_frames_file(image_path)
    if image.shape != (1, cfg.height, cfg.width, 3):
        raise ValueError(
            f"input image must be a 1-frame {cfg.height}x{cfg.width} clip, got shape {image.shape}"
        )
    rvq_book = camcodec.load_rvq(rvq_path)
    vvq_book = vidcodec.load_vq(vvq_path)
    model, _, _ = seqmodel.load_checkpoint(ckpt_path)
    vocab = seqmodel.Vocabulary(cfg.cam_vocab, cfg.vid_vocab)

    start = scenegen.canonical_start_pose()
    path = cardinal_path(start, direction, cfg.frames, speed)
    cam_tokens = camcodec.rvq_encode(camera_signal(path, direction_name, cfg), rvq_book)
    ff_tokens = tokenize_first_frame(image, vvq_book)
    grid = seqmodel.sample_video(
        model,
        vocab,
        cam_tokens,
        ff_tokens,
        lay.grid,
        temperature=cfg.sample_temperature if temperature is None else temperature,
        seed=split_seed(cfg.seed if seed is None else seed, "generate"),
    )
    frames = vidcodec.detokenize(grid, vvq_book, cfg.height, cfg.width)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenegen.write_frames_file(out_dir / "frames.bin", frames)
    write_pose_file(out_dir / "poses.txt", path.poses)
    vidcodec.save_token_grid(out_dir / "tokens.vtk", grid)
    return out_dir


@dataclass(frozen=True, eq=False)
class SeriesPoint:
    step: int
    report: floweval.EvalReport


def eval_run(
    cfg: PipelineConfig,
    ckpt_path,
    ckpt_dir,
    dataset_dir,
    num_videos: int = 40,
    temperature: float | None = None,
    precomputed=None,
) -> floweval.EvalReport:
    """Evaluate one checkpoint on the first num_videos manifest clips.

    Per clip: tokenize the first frame, encode the ground-truth camera path,
    sample a video, detokenize, and score flow MSE + direction against the
    ground-truth clip.
    """
    lay = layout(cfg)
    rvq_path, vvq_path = _codec_paths(ckpt_dir)
    require_artifacts(ckpt_path, rvq_path, vvq_path)
    if precomputed is None:
        rvq_book = camcodec.load_rvq(rvq_path)
        vvq_book = vidcodec.load_vq(vvq_path)
        precomputed = load_clip_tokens(cfg, dataset_dir, rvq_book, vvq_book, limit=num_videos)
    else:
        vvq_book = vidcodec.load_vq(vvq_path)
    if not precomputed:
        raise ValueError("evaluation manifest is empty")
    model, _, _ = seqmodel.load_checkpoint(ckpt_path)
    vocab = seqmodel.Vocabulary(cfg.cam_vocab, cfg.vid_vocab)
    temp = cfg.sample_temperature if temperature is None else temperature
    entries = []
    for clip in precomputed[:num_videos]:
        grid = seqmodel.sample_video(
            model,
            vocab,
            clip.cam_tokens,
            clip.grid[0],
            lay.grid,
            temperature=temp,
            seed=split_seed(cfg.seed, "eval", clip.clip_id),
        )
        gen_frames = vidcodec.detokenize(grid, vvq_book, cfg.height, cfg.width)
        entries.append((clip.clip_id, clip.direction, gen_frames, clip.frames))
    fp = {"levels": cfg.flow_levels, "iters": cfg.flow_iters, "alpha": cfg.flow_alpha}
    return floweval.eval_clips(entries, flow_params=fp)


def eval_series(
    cfg: PipelineConfig,
    ckpt_dir,
    dataset_dir,
    num_videos: int = 40,
    temperature: float | None = None,
) -> list:
    """Evaluate every model snapshot in ckpt_dir; returns SeriesPoints by step."""
    ckpt_dir = Path(ckpt_dir)
    snaps = sorted(ckpt_dir.glob("model_step*.ckpt"))
    if not snaps:
        raise FileNotFoundError(f"no model checkpoints under {ckpt_dir}")
    rvq_path, vvq_path = _codec_paths(ckpt_dir)
    require_artifacts(rvq_path, vvq_path)
    rvq_book = camcodec.load_rvq(rvq_path)
    vvq_book = vidcodec.load_vq(vvq_path)
    clips = load_clip_tokens(cfg, dataset_dir, rvq_book, vvq_book, limit=num_videos)
    points = []
    for snap in snaps:
        step = int(snap.stem.replace("model_step", ""))
        report = eval_run(
            cfg, snap, ckpt_dir, dataset_dir, num_videos, temperature, precomputed=clips
        )
        points.append(SeriesPoint(step, report))
    return points


def series_table(points) -> str:
    lines = ["step mean_mse dir_accuracy"]
    for p in points:
        lines.append(f"{p.step} {p.report.mean_mse:.6f} {p.report.dir_accuracy:.4f}")
    best = min(points, key=lambda p: p.report.mean_mse)
    lines.append(f"best_step={best.step}")
    lines.append(f"best_mean_mse={best.report.mean_mse:.6f}")
    lines.append(f"best_dir_accuracy={best.report.dir_accuracy:.4f}")
    return "\n".join(lines) + "\n"


def layout_check(cfg: PipelineConfig) -> str:
    lay = layout(cfg)
    tt, th, tw = lay.grid
    return (
        f"cam_positions {lay.cam_positions}\n"
        f"cam_levels {lay.cam_levels}\n"
        f"camera_tokens {lay.camera_tokens}\n"
        f"video_grid {tt}x{th}x{tw}\n"
        f"first_frame_tokens {lay.first_frame_tokens}\n"
        f"video_tokens {lay.video_tokens}\n"
        f"sequence_length {lay.sequence_length}\n"
        f"context {lay.context}\n"
    )
