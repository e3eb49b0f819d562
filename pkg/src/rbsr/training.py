"""AdamW training loop with cosine-annealed learning rate and zip checkpoints.

Data order is a pure function of (seed, iteration): batch ``k`` takes
positions ``k*B .. k*B+B-1`` of the concatenation of per-epoch
permutations, epoch ``e`` being shuffled by ``default_rng([seed, e])``. This
makes resuming from a checkpoint reproduce the uninterrupted run exactly.
"""

from __future__ import annotations

import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch

from . import __version__
from .data.synthesis import BurstSample, oracle_flows
from .errors import ConfigError, DivergenceError, InvalidInput
from .losses import LOSS_VARIANTS, compute_loss
from .model import RBSR, ModelConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    patch_size: int = 48
    total_iters: int = 400000
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    loss_variant: str = "implicit_weighting"
    seed: int = 0
    checkpoint_every: int = 5000
    grad_clip: float = 10.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        # lr_end == 0 is accepted so a constant zero schedule can be expressed
        if not (self.lr_start >= self.lr_end >= 0):
            raise ConfigError(f"need lr_start >= lr_end >= 0, got {self.lr_start}, {self.lr_end}")
        if self.batch_size < 1 or self.total_iters < 1 or self.checkpoint_every < 1:
            raise ConfigError("batch_size, total_iters and checkpoint_every must be >= 1")
        if self.patch_size < 8:
            raise ConfigError(f"patch_size must be >= 8, got {self.patch_size}")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigError(f"loss_variant must be one of {LOSS_VARIANTS}, got {self.loss_variant!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.weight_decay < 0 or self.grad_clip <= 0:
            raise ConfigError("weight_decay must be >= 0 and grad_clip > 0")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown train config keys: {unknown}")
        return cls(**data)


def cosine_lr(iteration: int, cfg: TrainConfig) -> float:
    if not 0 <= iteration <= cfg.total_iters:
        raise InvalidInput(f"iteration {iteration} outside [0, {cfg.total_iters}]")
    cos = 0.5 * (1.0 + math.cos(math.pi * iteration / cfg.total_iters))
    return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * cos


def batch_indices(iteration: int, n_samples: int, batch_size: int, seed: int) -> List[int]:
    """Dataset indices of the batch consumed at ``iteration``."""
    if n_samples < 1:
        raise InvalidInput("empty dataset")
    out, cache = [], {}
    for pos in range(iteration * batch_size, (iteration + 1) * batch_size):
        epoch, k = divmod(pos, n_samples)
        if epoch not in cache:
            cache[epoch] = np.random.default_rng([seed, epoch]).permutation(n_samples)
        out.append(int(cache[epoch][k]))
    return out


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr_start, betas=(cfg.beta1, cfg.beta2),
                             weight_decay=cfg.weight_decay)


@dataclass
class StepRecord:
    iter: int
    lr: float
    loss: float
    sampled_i: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    model: RBSR
    optimizer: torch.optim.Optimizer
    iteration: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    last: Optional[StepRecord] = None


def init_state(cfg: TrainConfig, model_cfg: ModelConfig) -> TrainState:
    """Build a freshly initialized model (seeded by ``cfg.seed``) and optimizer."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = RBSR(model_cfg)
    return TrainState(model=model, optimizer=make_optimizer(model, cfg), iteration=0,
                      rng=np.random.default_rng([cfg.seed, 0x5eed]))


def collate(batch: Sequence[BurstSample], patch_size: Optional[int], rng: Optional[np.random.Generator],
            with_flows: bool = False):
    """Stack samples into (B, N, 4, h, w) bursts and (B, 3, H, W) targets.

    Samples larger than ``patch_size`` are randomly cropped on the packed
    grid (the target crop follows at ``2 * scale`` times the offset).
    """
    if not batch:
        raise InvalidInput("empty batch")
    n, h, w, _ = batch[0].burst.shape
    for s in batch:
        if s.burst.shape != batch[0].burst.shape or s.scale != batch[0].scale:
            raise InvalidInput("all samples in a batch must share N, patch size and scale")
        if not np.isfinite(s.burst).all():
            raise InvalidInput("burst contains non-finite values")
    ps = h if patch_size is None else min(patch_size, h, w)
    r = 2 * batch[0].scale
    bursts, targets, flows = [], [], []
    for s in batch:
        y0 = x0 = 0
        if ps < h or ps < w:
            y0 = int(rng.integers(0, h - ps + 1))
            x0 = int(rng.integers(0, w - ps + 1))
        bursts.append(s.burst[:, y0:y0 + ps, x0:x0 + ps].transpose(0, 3, 1, 2))
        targets.append(s.ground_truth[y0 * r:(y0 + ps) * r, x0 * r:(x0 + ps) * r].transpose(2, 0, 1))
        if with_flows:
            flows.append(oracle_flows(s)[:, :, y0:y0 + ps, x0:x0 + ps])
    burst_t = torch.from_numpy(np.ascontiguousarray(np.stack(bursts), dtype=np.float32))
    target_t = torch.from_numpy(np.ascontiguousarray(np.stack(targets), dtype=np.float32))
    flow_t = torch.from_numpy(np.ascontiguousarray(np.stack(flows), dtype=np.float32)) if with_flows else None
    return burst_t, target_t, flow_t


def needs_oracle_flows(model_cfg: ModelConfig) -> bool:
    return model_cfg.uses_flow and model_cfg.flow_source == "oracle"


def train_step(state: TrainState, batch: Sequence[BurstSample], cfg: TrainConfig) -> TrainState:
    """One AdamW update at the cosine learning rate of ``state.iteration``."""
    model, opt = state.model, state.optimizer
    lr = cosine_lr(state.iteration, cfg)
    burst, target, flows = collate(batch, cfg.patch_size, state.rng, needs_oracle_flows(model.cfg))
    model.train()
    for group in opt.param_groups:
        group["lr"] = lr
    opt.zero_grad(set_to_none=True)
    loss = compute_loss(cfg.loss_variant, model, burst, target, state.rng, flows)
    value = float(loss)
    payload = {"iteration": state.iteration, "lr": lr, "loss": value, "sampled_i": loss.sampled_index}
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss at iteration {state.iteration}", payload)
    loss.value.backward()
    grad_norm = torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    if not torch.isfinite(grad_norm):
        raise DivergenceError(f"non-finite gradient at iteration {state.iteration}",
                              {**payload, "grad_norm": float(grad_norm)})
    opt.step()
    state.iteration += 1
    state.last = StepRecord(iter=state.iteration, lr=lr, loss=value, sampled_i=loss.sampled_index)
    return state


# checkpoints -------------------------------------------------------------

def _npz_bytes(arrays: dict) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def save_checkpoint(path, state: TrainState, cfg: TrainConfig) -> Path:
    """Write model config, weights, AdamW moments and rng state to a zip archive."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = {k: v.detach().cpu().numpy() for k, v in state.model.state_dict().items()}
    names = [n for n, _ in state.model.named_parameters()]
    moments, steps = {}, {}
    for name, p in zip(names, state.model.parameters()):
        st = state.optimizer.state.get(p)
        if st:
            moments[name + "/exp_avg"] = st["exp_avg"].detach().cpu().numpy()
            moments[name + "/exp_avg_sq"] = st["exp_avg_sq"].detach().cpu().numpy()
            steps[name] = float(st["step"])
    meta = {
        "format": CHECKPOINT_FORMAT,
        "package_version": __version__,
        "iteration": state.iteration,
        "rng_state": state.rng.bit_generator.state,
        "optimizer_steps": steps,
        "train_config": asdict(cfg),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("model_config.json", state.model.cfg.to_json())
        zf.writestr("train_state.json", json.dumps(meta, indent=2))
        zf.writestr("params.npz", _npz_bytes(params))
        zf.writestr("optimizer.npz", _npz_bytes(moments))
    tmp.replace(path)
    return path


def read_model_config(path) -> ModelConfig:
    with zipfile.ZipFile(path) as zf:
        return ModelConfig.from_json(zf.read("model_config.json").decode())


def load_model(path) -> RBSR:
    """Rebuild the network stored in a checkpoint (weights only)."""
    model_cfg = read_model_config(path)
    model = RBSR(model_cfg)
    with zipfile.ZipFile(path) as zf:
        params = np.load(io.BytesIO(zf.read("params.npz")))
        _load_params(model, params)
    model.eval()
    return model


def _load_params(model: torch.nn.Module, params) -> None:
    expected = {k: tuple(v.shape) for k, v in model.state_dict().items()}
    if {k: tuple(params[k].shape) for k in params.files} != expected:
        raise ConfigError("checkpoint weights do not match the model configuration")
    model.load_state_dict({k: torch.from_numpy(params[k].copy()) for k in params.files})


def load_checkpoint(path, cfg: Optional[TrainConfig] = None):
    """Restore ``(state, train_cfg)`` from an archive.

    The stored model config is validated before any weights are read. If
    ``cfg`` is given it replaces the stored train config (e.g. to extend a
    run); otherwise the stored one is used.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        model_cfg = ModelConfig.from_json(zf.read("model_config.json").decode())
        meta = json.loads(zf.read("train_state.json"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint format {meta.get('format')}")
        cfg = cfg or TrainConfig.from_dict(meta["train_config"])
        model = RBSR(model_cfg)
        _load_params(model, np.load(io.BytesIO(zf.read("params.npz"))))
        moments = np.load(io.BytesIO(zf.read("optimizer.npz")))
    opt = make_optimizer(model, cfg)
    for name, p in model.named_parameters():
        if name in meta["optimizer_steps"]:
            opt.state[p] = {
                "step": torch.tensor(meta["optimizer_steps"][name]),
                "exp_avg": torch.from_numpy(moments[name + "/exp_avg"].copy()),
                "exp_avg_sq": torch.from_numpy(moments[name + "/exp_avg_sq"].copy()),
            }
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    return TrainState(model=model, optimizer=opt, iteration=int(meta["iteration"]), rng=rng), cfg


# loop ---------------------------------------------------------------------

def _truncate_curve(path: Path, iteration: int) -> None:
    if not path.exists():
        return
    keep = [ln for ln in path.read_text().splitlines() if ln and json.loads(ln)["iter"] <= iteration]
    path.write_text("".join(ln + "\n" for ln in keep))


def fit(cfg: TrainConfig, model_cfg: ModelConfig, dataset, out_dir=None, resume=None,
        stop_at: Optional[int] = None, callback: Optional[Callable[[TrainState], None]] = None):
    """Train until ``cfg.total_iters`` (or ``stop_at``) iterations.

    Args:
        cfg: optimization settings.
        model_cfg: network configuration (ignored when resuming, the
            checkpoint's own config is used).
        dataset: indexable collection of BurstSample.
        out_dir: if given, receives ``checkpoints/`` and ``loss_curve.jsonl``.
        resume: checkpoint path to continue from.
        stop_at: stop early after this iteration (to simulate interruption).
        callback: called with the state after every step.

    Returns:
        (state, curve) where curve lists the StepRecords of this call.
    """
    if len(dataset) == 0:
        raise InvalidInput("dataset is empty")
    if resume is not None:
        state, _ = load_checkpoint(resume, cfg)
    else:
        state = init_state(cfg, model_cfg)
    end = cfg.total_iters if stop_at is None else min(stop_at, cfg.total_iters)
    curve_path = ckpt_dir = None
    if out_dir is not None:
        out = Path(out_dir)
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        curve_path = out / "loss_curve.jsonl"
        if resume is not None:
            _truncate_curve(curve_path, state.iteration)
        elif curve_path.exists():
            curve_path.unlink()
    curve: List[StepRecord] = []
    while state.iteration < end:
        idx = batch_indices(state.iteration, len(dataset), cfg.batch_size, cfg.seed)
        train_step(state, [dataset[i] for i in idx], cfg)
        curve.append(state.last)
        if curve_path is not None:
            with open(curve_path, "a") as f:
                f.write(json.dumps(state.last.to_dict()) + "\n")
        if ckpt_dir is not None and (state.iteration % cfg.checkpoint_every == 0
                                     or state.iteration == cfg.total_iters):
            save_checkpoint(ckpt_dir / f"iter_{state.iteration:07d}.zip", state, cfg)
        if callback is not None:
            callback(state)
        if state.iteration % 50 == 0:
            log.info("iter %d lr %.3g loss %.5f", state.iteration, state.last.lr, state.last.loss)
    if ckpt_dir is not None and state.iteration == cfg.total_iters:
        save_checkpoint(ckpt_dir / "final.zip", state, cfg)
    return state, curve
