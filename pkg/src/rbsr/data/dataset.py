"""On-disk burst datasets.

Layout::

    <root>/manifest.jsonl          one {"sample_id", "path", "n_frames", "seed"} per line
    <root>/synthesis.json          the SynthesisConfig used
    <root>/<sample_id>/burst.f32   packed burst, float32 little-endian, (N, h, w, 4)
    <root>/<sample_id>/header.txt  "key = value" metadata (dims, seed, camera, transforms)
    <root>/<sample_id>/gt.png      16-bit RGB linear ground truth
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import cv2
import numpy as np

from ..errors import IngestError, InvalidInput, InvalidShape
from .synthesis import BurstSample, CameraParams, FrameTransform, SynthesisConfig, synthesize_burst

FORMAT_VERSION = 1
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}


def read_srgb(path) -> np.ndarray:
    """Read an 8- or 16-bit image as float64 RGB in [0, 1]."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED | cv2.IMREAD_ANYDEPTH)
    if img is None:
        raise IngestError([path])
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.shape[2] == 4:
        img = img[..., :3]
    scale = 65535.0 if img.dtype == np.uint16 else 255.0
    return img[..., ::-1].astype(np.float64) / scale


def write_png16(path, img: np.ndarray) -> None:
    """Write an HxWx3 float image, clipped to [0, 1], as a 16-bit PNG."""
    q = np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)
    if not cv2.imwrite(str(path), np.ascontiguousarray(q[..., ::-1])):
        raise OSError(f"could not write {path}")


def list_images(input_dir) -> List[Path]:
    root = Path(input_dir)
    if not root.is_dir():
        raise IngestError([root])
    return sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_images(paths: Sequence[Path]) -> List[np.ndarray]:
    images, bad = [], []
    for p in paths:
        try:
            images.append(read_srgb(p))
        except IngestError:
            bad.append(p)
    if bad:
        raise IngestError(bad)
    return images


# ---------------------------------------------------------------------------
# sample (de)serialization

def _fmt(values: Iterable[float]) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_sample(sample_dir, sample: BurstSample) -> None:
    d = Path(sample_dir)
    d.mkdir(parents=True, exist_ok=True)
    burst = np.ascontiguousarray(sample.burst, dtype="<f4")
    (d / "burst.f32").write_bytes(burst.tobytes())
    n, h, w, c = burst.shape
    cam = sample.camera
    lines = [
        f"format_version = {FORMAT_VERSION}",
        f"n_frames = {n}",
        f"height = {h}",
        f"width = {w}",
        f"channels = {c}",
        f"scale = {sample.scale}",
        f"seed = {sample.seed}",
        f"gamma_exponent = {float(cam.gamma_exponent)!r}",
        f"color_matrix = {_fmt(np.asarray(cam.color_matrix).ravel())}",
        f"wb_gains = {_fmt(cam.wb_gains)}",
        f"shot_noise = {float(cam.shot_noise)!r}",
        f"read_noise = {float(cam.read_noise)!r}",
        f"tone_curve = {int(cam.tone_curve)}",
    ]
    for i, t in enumerate(sample.transforms):
        lines.append(f"transform_{i} = {_fmt([t.translation[0], t.translation[1], t.rotation])}")
    (d / "header.txt").write_text("\n".join(lines) + "\n")
    write_png16(d / "gt.png", sample.ground_truth)


def read_header(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def read_sample(sample_dir) -> BurstSample:
    d = Path(sample_dir)
    hdr = read_header(d / "header.txt")
    n, h, w, c = (int(hdr[k]) for k in ("n_frames", "height", "width", "channels"))
    raw = np.frombuffer((d / "burst.f32").read_bytes(), dtype="<f4")
    if raw.size != n * h * w * c:
        raise InvalidShape(f"{d}: burst blob holds {raw.size} values, header says {n}x{h}x{w}x{c}")
    cam = CameraParams(
        gamma_exponent=float(hdr["gamma_exponent"]),
        color_matrix=np.array([float(v) for v in hdr["color_matrix"].split()]).reshape(3, 3),
        wb_gains=tuple(float(v) for v in hdr["wb_gains"].split()),
        shot_noise=float(hdr["shot_noise"]),
        read_noise=float(hdr["read_noise"]),
        tone_curve=bool(int(hdr.get("tone_curve", 1))),
    )
    transforms = []
    for i in range(n):
        tx, ty, rot = (float(v) for v in hdr[f"transform_{i}"].split())
        transforms.append(FrameTransform((tx, ty), rot))
    gt = cv2.imread(str(d / "gt.png"), cv2.IMREAD_UNCHANGED)
    if gt is None:
        raise IngestError([d / "gt.png"])
    gt = (gt[..., ::-1].astype(np.float32) / np.float32(65535.0))
    return BurstSample(raw.reshape(n, h, w, c).astype(np.float32), gt, transforms, cam,
                       int(hdr["seed"]), int(hdr["scale"]))


# ---------------------------------------------------------------------------
# datasets

class BurstDataset:
    """Manifest-backed dataset; samples are loaded lazily and cached."""

    def __init__(self, root, cache: bool = True):
        self.root = Path(root)
        manifest = self.root / "manifest.jsonl"
        if not manifest.is_file():
            raise InvalidInput(f"{self.root} has no manifest.jsonl")
        self.records = [json.loads(line) for line in manifest.read_text().splitlines() if line.strip()]
        self._cache = {} if cache else None

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int) -> BurstSample:
        if self._cache is not None and idx in self._cache:
            return self._cache[idx]
        sample = read_sample(self.root / self.records[idx]["path"])
        if self._cache is not None:
            self._cache[idx] = sample
        return sample

    @property
    def n_frames(self) -> int:
        return min(r["n_frames"] for r in self.records)


class InMemoryDataset(list):
    """A plain list of ``BurstSample`` with the ``n_frames`` helper."""

    @property
    def n_frames(self) -> int:
        return min(s.n_frames for s in self)


def write_dataset(root, samples: Sequence[BurstSample], cfg: SynthesisConfig,
                  ids: Optional[Sequence[str]] = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ids = list(ids) if ids is not None else [f"sample_{i:05d}" for i in range(len(samples))]
    records = []
    for sid, sample in zip(ids, samples):
        write_sample(root / sid, sample)
        records.append({"sample_id": sid, "path": sid, "n_frames": sample.n_frames, "seed": sample.seed})
    (root / "manifest.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    (root / "synthesis.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
    return root


def synthesize_dataset(images: Sequence[np.ndarray], n_samples: int, n_frames: int,
                       cfg: SynthesisConfig, seed: int) -> List[BurstSample]:
    """Round-robin over ``images``; sample ``k`` uses seed ``seed * 100003 + k``."""
    if not images:
        raise InvalidInput("no source images")
    return [synthesize_burst(images[k % len(images)], n_frames, cfg, seed * 100003 + k)
            for k in range(n_samples)]


# ---------------------------------------------------------------------------
# procedural sources

def procedural_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """A textured sRGB test image: gradients, gratings, ellipses and bars.

    Plenty of high-frequency content survives the downsampling, so the
    resulting bursts alias and there is something for multi-frame fusion to
    recover.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.empty((size, size, 3))
    base = rng.uniform(0.15, 0.85, size=3)
    grad = rng.uniform(-0.3, 0.3, size=(3, 2))
    for c in range(3):
        img[..., c] = base[c] + grad[c, 0] * (xx - 0.5) + grad[c, 1] * (yy - 0.5)
    for _ in range(int(rng.integers(3, 6))):
        freq = rng.uniform(8.0, 60.0)
        ang = rng.uniform(0.0, math.pi)
        phase = rng.uniform(0.0, 2 * math.pi)
        amp = rng.uniform(0.05, 0.2)
        color = rng.uniform(-1.0, 1.0, size=3)
        wave = np.sin(2 * math.pi * freq * (math.cos(ang) * xx + math.sin(ang) * yy) + phase)
        img += amp * wave[..., None] * color
    for _ in range(int(rng.integers(6, 14))):
        cx, cy = rng.uniform(0.0, 1.0, size=2)
        rx, ry = rng.uniform(0.03, 0.25, size=2)
        ang = rng.uniform(0.0, math.pi)
        u = (xx - cx) * math.cos(ang) + (yy - cy) * math.sin(ang)
        v = -(xx - cx) * math.sin(ang) + (yy - cy) * math.cos(ang)
        inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        img[inside] = rng.uniform(0.0, 1.0, size=3)
    for _ in range(int(rng.integers(2, 5))):
        if rng.uniform() < 0.5:
            x0 = rng.uniform(0.0, 0.9)
            img[:, (xx[0] >= x0) & (xx[0] < x0 + rng.uniform(0.005, 0.05))] = rng.uniform(0.0, 1.0, size=3)
        else:
            y0 = rng.uniform(0.0, 0.9)
            img[(yy[:, 0] >= y0) & (yy[:, 0] < y0 + rng.uniform(0.005, 0.05)), :] = rng.uniform(0.0, 1.0, size=3)
    return np.clip(img, 0.0, 1.0)


def write_procedural_images(out_dir, count: int, size: int, seed: int) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        img = procedural_image(size, rng)
        q = np.round(img * 255.0).astype(np.uint8)
        p = out / f"img_{i:04d}.png"
        cv2.imwrite(str(p), np.ascontiguousarray(q[..., ::-1]))
        paths.append(p)
    return paths
