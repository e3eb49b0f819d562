"""Synthetic RAW burst generation from a single sRGB image.

The chain is: unprocess (sRGB -> linear sensor RGB) -> per-frame rigid warp
-> bilinear downsampling -> heteroscedastic noise -> RGGB mosaic -> 4-channel
packing. All randomness is drawn from one ``numpy.random.Generator`` seeded by
the caller, so a burst is a pure function of (image, n, config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..errors import InvalidBurstLength, InvalidCameraParams, InvalidShape

# XYZ -> camera matrices of two reference sensors; the colour matrix of a
# synthetic camera is a random convex blend of these.
XYZ2CAM_REFERENCES = (
    np.array([[1.0234, -0.2969, -0.2266],
              [-0.5625, 1.6328, -0.0469],
              [-0.0703, 0.2188, 0.6406]]),
    np.array([[0.4913, -0.0541, -0.0202],
              [-0.6130, 1.3513, 0.2906],
              [-0.1564, 0.2151, 0.7183]]),
)

RGB2XYZ = np.array([[0.4124564, 0.3575761, 0.1804375],
                    [0.2126729, 0.7151522, 0.0721750],
                    [0.0193339, 0.1191920, 0.9503041]])


@dataclass(frozen=True)
class CameraParams:
    """Parameters of the (inverted) camera pipeline.

    ``color_matrix`` maps sensor RGB to linear sRGB; unprocessing applies its
    inverse. ``tone_curve=False`` turns the smoothstep inversion into the
    identity, which is only useful for tests.
    """

    gamma_exponent: float = 2.2
    color_matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    wb_gains: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    shot_noise: float = 0.0
    read_noise: float = 0.0
    tone_curve: bool = True

    def validate(self) -> None:
        cm = np.asarray(self.color_matrix, dtype=np.float64)
        if cm.shape != (3, 3) or not np.all(np.isfinite(cm)):
            raise InvalidCameraParams(f"color_matrix must be a finite 3x3 matrix, got {cm.shape}")
        if np.linalg.cond(cm) >= 1e6:
            raise InvalidCameraParams("color_matrix is singular or ill-conditioned")
        gains = np.asarray(self.wb_gains, dtype=np.float64)
        if gains.shape != (3,) or np.any(gains <= 0):
            raise InvalidCameraParams(f"wb_gains must be three positive values, got {self.wb_gains}")
        if not self.gamma_exponent > 0:
            raise InvalidCameraParams(f"gamma_exponent must be > 0, got {self.gamma_exponent}")
        self.check_noise()

    def check_noise(self) -> None:
        if self.shot_noise < 0 or self.read_noise < 0:
            raise InvalidCameraParams(
                f"noise parameters must be >= 0 (shot={self.shot_noise}, read={self.read_noise})")


@dataclass(frozen=True)
class FrameTransform:
    """Rigid motion of one burst frame.

    ``translation`` is (dx, dy) in pixels of whatever image it is applied to
    (the synthesis code stores it at LR-RAW scale and rescales before warping);
    ``rotation`` is in degrees, counter-clockwise about the image centre.
    """

    translation: Tuple[float, float] = (0.0, 0.0)
    rotation: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self.translation[0] == 0 and self.translation[1] == 0 and self.rotation == 0

    def scaled(self, factor: float) -> "FrameTransform":
        return FrameTransform((self.translation[0] * factor, self.translation[1] * factor), self.rotation)


@dataclass(frozen=True)
class SynthesisConfig:
    scale: int = 4
    patch_size: int = 48  # packed frame size; the RAW frame is twice this
    max_translation: float = 4.0  # LR-RAW pixels
    max_rotation: float = 1.0  # degrees
    gamma_range: Tuple[float, float] = (2.0, 2.4)
    red_gain_range: Tuple[float, float] = (1.2, 2.4)
    blue_gain_range: Tuple[float, float] = (1.2, 2.4)
    shot_noise_range: Tuple[float, float] = (1e-4, 1.2e-2)
    read_noise_range: Tuple[float, float] = (1e-7, 2.5e-4)
    tone_curve: bool = True

    @property
    def raw_size(self) -> int:
        return 2 * self.patch_size

    @property
    def hr_size(self) -> int:
        return self.scale * self.raw_size

    @property
    def margin(self) -> int:
        """HR-pixel border kept around the crop so warps never sample the image edge."""
        shift = self.scale * self.max_translation * math.sqrt(2.0)
        half_diag = self.hr_size / math.sqrt(2.0)
        turn = 2.0 * half_diag * math.sin(math.radians(self.max_rotation) / 2.0)
        return int(math.ceil(shift + turn)) + 2


@dataclass
class BurstSample:
    """One packed burst with its linear-RGB ground truth.

    Attributes:
        burst: (N, h, w, 4) float32, channels R, Gr, Gb, B.
        ground_truth: (2*scale*h, 2*scale*w, 3) float32 linear RGB.
    """

    burst: np.ndarray
    ground_truth: np.ndarray
    transforms: List[FrameTransform]
    camera: CameraParams
    seed: int
    scale: int = 4

    @property
    def n_frames(self) -> int:
        return self.burst.shape[0]


# ---------------------------------------------------------------------------
# stages

def _check_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidShape(f"expected an HxWx3 image, got shape {img.shape}")
    return img


def unprocess(img: np.ndarray, cam: CameraParams) -> np.ndarray:
    """Map an sRGB image in [0, 1] to linear sensor RGB."""
    cam.validate()
    x = _check_rgb(img).astype(np.float64)
    x = np.clip(x, 0.0, 1.0)
    if cam.tone_curve:
        # inverse of the smoothstep curve 3x^2 - 2x^3
        # (pinning the endpoints, where sin(pi/6) rounds to just under 0.5)
        inv = 0.5 - np.sin(np.arcsin(1.0 - 2.0 * x) / 3.0)
        x = np.where(x <= 0.0, 0.0, np.where(x >= 1.0, 1.0, inv))
    x = np.power(np.maximum(x, 0.0), cam.gamma_exponent)
    rgb2cam = np.linalg.inv(np.asarray(cam.color_matrix, dtype=np.float64))
    x = x @ rgb2cam.T
    x = x / np.asarray(cam.wb_gains, dtype=np.float64)
    return np.clip(x, 0.0, 1.0)


def sample_camera(cfg: SynthesisConfig, rng: np.random.Generator) -> CameraParams:
    w = rng.uniform(0.0, 1.0)
    xyz2cam = w * XYZ2CAM_REFERENCES[0] + (1.0 - w) * XYZ2CAM_REFERENCES[1]
    rgb2cam = xyz2cam @ RGB2XYZ
    rgb2cam = rgb2cam / rgb2cam.sum(axis=1, keepdims=True)
    gamma = rng.uniform(*cfg.gamma_range)
    red = rng.uniform(*cfg.red_gain_range)
    blue = rng.uniform(*cfg.blue_gain_range)
    shot = _log_uniform(rng, cfg.shot_noise_range)
    read = _log_uniform(rng, cfg.read_noise_range)
    return CameraParams(
        gamma_exponent=float(gamma),
        color_matrix=np.linalg.inv(rgb2cam),
        wb_gains=(float(red), 1.0, float(blue)),
        shot_noise=shot,
        read_noise=read,
        tone_curve=cfg.tone_curve,
    )


def _log_uniform(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    lo, hi = bounds
    if hi <= 0:
        rng.uniform()  # keep the stream position independent of the range
        return 0.0
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def sample_transforms(n: int, cfg: SynthesisConfig, rng: np.random.Generator) -> List[FrameTransform]:
    if n < 1:
        raise InvalidBurstLength(f"burst length must be >= 1, got {n}")
    out = [FrameTransform()]
    for _ in range(n - 1):
        tx, ty = rng.uniform(-1.0, 1.0, size=2) * cfg.max_translation
        rot = rng.uniform(-1.0, 1.0) * cfg.max_rotation
        out.append(FrameTransform((float(tx), float(ty)), float(rot)))
    return out


def _rigid_coords(shape: Tuple[int, int], t: FrameTransform) -> Tuple[np.ndarray, np.ndarray]:
    """Source (y, x) coordinates for every output pixel under ``t``."""
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = math.radians(t.rotation)
    c, s = math.cos(theta), math.sin(theta)
    dx = xx - cx - t.translation[0]
    dy = yy - cy - t.translation[1]
    # inverse rotation of the displaced grid
    src_x = c * dx + s * dy + cx
    src_y = -s * dx + c * dy + cy
    return src_y, src_x


def warp(img: np.ndarray, t: FrameTransform) -> np.ndarray:
    """Bilinear rigid warp with edge replication.

    A scene point at ``q`` moves to ``R(q - c) + c + translation``.
    """
    img = np.asarray(img)
    if t.is_identity:
        return img
    squeeze = img.ndim == 2
    data = img[..., None] if squeeze else img
    src_y, src_x = _rigid_coords(data.shape[:2], t)
    out = np.empty(data.shape, dtype=np.float64)
    for ch in range(data.shape[2]):
        out[..., ch] = ndimage.map_coordinates(
            data[..., ch].astype(np.float64), [src_y, src_x], order=1, mode="nearest")
    return out[..., 0] if squeeze else out


def _bilinear_matrix(n_in: int, s: int) -> np.ndarray:
    n_out = n_in // s
    m = np.zeros((n_out, n_in))
    for j in range(n_out):
        x = (j + 0.5) * s - 0.5
        x0 = int(math.floor(x))
        f = x - x0
        m[j, min(max(x0, 0), n_in - 1)] += 1.0 - f
        m[j, min(max(x0 + 1, 0), n_in - 1)] += f
    return m


def downsample_bilinear(img: np.ndarray, s: int) -> np.ndarray:
    """Point-sampled bilinear resize by an integer factor (no anti-aliasing).

    Output pixel ``j`` samples input position ``(j + 0.5) * s - 0.5``, the same
    convention as ``cv2.resize(..., INTER_LINEAR)``.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if s < 1 or h % s or w % s:
        raise InvalidShape(f"image {h}x{w} is not divisible by factor {s}")
    mh = _bilinear_matrix(h, s)
    mw = _bilinear_matrix(w, s)
    if img.ndim == 2:
        return mh @ img @ mw.T
    rows = np.tensordot(mh, img, axes=(1, 0))  # (h / s, w, c)
    return np.einsum("jw,iwc->ijc", mw, rows)


def add_noise(img: np.ndarray, cam: CameraParams, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise with variance ``shot_noise * x + read_noise``, clipped to [0, 1]."""
    cam.check_noise()
    x = np.asarray(img, dtype=np.float64)
    if cam.shot_noise == 0 and cam.read_noise == 0:
        return x
    std = np.sqrt(cam.shot_noise * np.maximum(x, 0.0) + cam.read_noise)
    return np.clip(x + std * rng.standard_normal(x.shape), 0.0, 1.0)


def _check_even(h: int, w: int) -> None:
    if h % 2 or w % 2:
        raise InvalidShape(f"Bayer data needs even dimensions, got {h}x{w}")


def mosaic(img: np.ndarray) -> np.ndarray:
    """RGGB Bayer sampling of an HxWx3 image."""
    img = _check_rgb(img)
    h, w = img.shape[:2]
    _check_even(h, w)
    raw = np.empty((h, w), dtype=img.dtype)
    raw[0::2, 0::2] = img[0::2, 0::2, 0]
    raw[0::2, 1::2] = img[0::2, 1::2, 1]
    raw[1::2, 0::2] = img[1::2, 0::2, 1]
    raw[1::2, 1::2] = img[1::2, 1::2, 2]
    return raw


def pack_raw(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise InvalidShape(f"expected a single-channel mosaic, got shape {raw.shape}")
    _check_even(*raw.shape)
    return np.stack([raw[0::2, 0::2], raw[0::2, 1::2], raw[1::2, 0::2], raw[1::2, 1::2]], axis=-1)


def unpack_raw(packed: np.ndarray) -> np.ndarray:
    packed = np.asarray(packed)
    if packed.ndim != 3 or packed.shape[2] != 4:
        raise InvalidShape(f"expected an hxwx4 packed frame, got shape {packed.shape}")
    h, w = packed.shape[:2]
    raw = np.empty((2 * h, 2 * w), dtype=packed.dtype)
    raw[0::2, 0::2] = packed[..., 0]
    raw[0::2, 1::2] = packed[..., 1]
    raw[1::2, 0::2] = packed[..., 2]
    raw[1::2, 1::2] = packed[..., 3]
    return raw


# ---------------------------------------------------------------------------
# composition

def synthesize_burst(img: np.ndarray, n: int, cfg: SynthesisConfig, seed: int,
                     camera: Optional[CameraParams] = None) -> BurstSample:
    """Build one ``BurstSample`` from an sRGB image.

    A crop of ``cfg.hr_size`` plus a safety margin is taken at a random
    location, unprocessed, and warped per frame about the crop centre; every
    frame is then centre-cropped back to ``cfg.hr_size`` before degradation.
    ``camera`` overrides the randomly drawn camera parameters.
    """
    if n < 1:
        raise InvalidBurstLength(f"burst length must be >= 1, got {n}")
    img = _check_rgb(img)
    rng = np.random.default_rng(seed)
    size, margin = cfg.hr_size, cfg.margin
    full = size + 2 * margin
    h, w = img.shape[:2]
    if h < full or w < full:
        raise InvalidShape(f"image {h}x{w} is smaller than the required {full}x{full} crop")
    y0 = int(rng.integers(0, h - full + 1))
    x0 = int(rng.integers(0, w - full + 1))
    cam = sample_camera(cfg, rng)
    if camera is not None:
        cam = camera
    transforms = sample_transforms(n, cfg, rng)

    linear = unprocess(img[y0:y0 + full, x0:x0 + full], cam)
    frames = []
    for t in transforms:
        moved = warp(linear, t.scaled(cfg.scale))[margin:margin + size, margin:margin + size]
        lr = downsample_bilinear(moved, cfg.scale)
        noisy = add_noise(lr, cam, rng)
        frames.append(pack_raw(mosaic(noisy)))
    gt = linear[margin:margin + size, margin:margin + size]
    return BurstSample(
        burst=np.stack(frames).astype(np.float32),
        ground_truth=gt.astype(np.float32),
        transforms=transforms,
        camera=cam,
        seed=int(seed),
        scale=cfg.scale,
    )


def oracle_flow(t: FrameTransform, packed_shape: Tuple[int, int], scale: int) -> np.ndarray:
    """Exact displacement field from base-frame packed pixels to frame ``t``.

    Returns (2, h, w) float32 holding (dx, dy) in packed-pixel units, the
    convention used by the network's feature warping. ``t`` is expressed at
    LR-RAW scale as stored in ``BurstSample.transforms``.
    """
    h, w = packed_shape
    k = 2 * scale  # HR pixels per packed pixel
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # HR position of a packed pixel centre, relative to the crop centre
    qx = k * xx + scale - 0.5 - (k * w - 1) / 2.0
    qy = k * yy + scale - 0.5 - (k * h - 1) / 2.0
    theta = math.radians(t.rotation)
    c, s = math.cos(theta), math.sin(theta)
    px = c * qx - s * qy + scale * t.translation[0]
    py = s * qx + c * qy + scale * t.translation[1]
    return np.stack([(px - qx) / k, (py - qy) / k]).astype(np.float32)


def oracle_flows(sample: BurstSample) -> np.ndarray:
    """Oracle flows for frames 2..N of a sample, shape (N-1, 2, h, w)."""
    h, w = sample.burst.shape[1:3]
    flows = [oracle_flow(t, (h, w), sample.scale) for t in sample.transforms[1:]]
    if not flows:
        return np.zeros((0, 2, h, w), dtype=np.float32)
    return np.stack(flows)


def crop_burst(sample: BurstSample, n: int) -> BurstSample:
    """First ``n`` frames of a sample (the base frame is always kept)."""
    if not 1 <= n <= sample.n_frames:
        raise InvalidBurstLength(f"cannot take {n} frames from a burst of {sample.n_frames}")
    return BurstSample(sample.burst[:n], sample.ground_truth, list(sample.transforms[:n]),
                       sample.camera, sample.seed, sample.scale)
