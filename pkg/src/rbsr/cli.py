"""Command-line entry point: ``rbsr {synthesize,train,eval,ablate,infer,benchmark}``.

Every command writes ``resolved_config.yaml`` (and a small ``run.json``)
next to its outputs and holds a lock file on its output directory while it
runs.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import statistics
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch
from filelock import FileLock, Timeout

from . import __version__
from .config import ExperimentConfig, load_config
from .data import BurstDataset, crop_burst, read_sample, synthesize_dataset, write_dataset
from .data.dataset import list_images, load_images, procedural_image, write_png16
from .data.synthesis import BurstSample, oracle_flows
from .errors import DivergenceError, FixedLengthError, InvalidInput, RBSRError
from .metrics import MetricReport, psnr, ssim, write_reports
from .model import RBSR
from .training import fit, load_model, needs_oracle_flows

log = logging.getLogger("rbsr")

REFERENCE_PARAMS_M = 6.42


@contextlib.contextmanager
def locked_output(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out / ".rbsr.lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise InvalidInput(f"output directory {out} is in use by another process") from None
    try:
        yield out
    finally:
        lock.release()


def record_run(out: Path, cfg: ExperimentConfig, command: str, args: dict) -> None:
    cfg.dump(out / "resolved_config.yaml")
    meta = {"command": command, "version": __version__, "seed": cfg.seed,
            "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in args.items()}}
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")


def resolve(args) -> ExperimentConfig:
    return load_config(args.preset, args.config, args.set or (), args.seed)


def parse_frames(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    return [int(t) for t in str(text).split(",") if t.strip()]


# ---------------------------------------------------------------------------
# evaluation helpers

def _to_tensor(sample: BurstSample, with_flows: bool):
    burst = torch.from_numpy(np.ascontiguousarray(sample.burst.transpose(0, 3, 1, 2)))[None]
    flows = None
    if with_flows and sample.n_frames > 1:
        flows = torch.from_numpy(oracle_flows(sample))[None].float()
    return burst.float(), flows


@torch.no_grad()
def predict(model: RBSR, sample: BurstSample) -> np.ndarray:
    """SR output as an (H, W, 3) float64 array (unclipped)."""
    model.eval()
    burst, flows = _to_tensor(sample, needs_oracle_flows(model.cfg))
    return model(burst, flows)[0].permute(1, 2, 0).double().numpy()


def evaluate(model: RBSR, dataset, frame_counts: Sequence[int], label: str = "") -> List[MetricReport]:
    """One report per N; each burst contributes its first N frames."""
    n_avail = min(dataset[i].n_frames for i in range(len(dataset)))
    for n in frame_counts:
        if not 1 <= n <= n_avail:
            raise InvalidInput(f"frame count {n} outside [1, {n_avail}] available in the dataset")
    ids = getattr(dataset, "records", None)
    reports = []
    for n in frame_counts:
        rep = MetricReport(n_frames=n, param_count=model.count_parameters(), label=label)
        for i in range(len(dataset)):
            sample = crop_burst(dataset[i], n)
            t0 = time.perf_counter()
            pred = predict(model, sample)
            ms = 1000.0 * (time.perf_counter() - t0)
            sid = ids[i]["sample_id"] if ids else f"sample_{i:05d}"
            gt = sample.ground_truth.astype(np.float64)
            rep.add(sid, psnr(pred, gt), ssim(pred, gt), ms)
        reports.append(rep)
    return reports


# ---------------------------------------------------------------------------
# commands

def cmd_synthesize(args) -> int:
    cfg = resolve(args)
    n_frames = parse_frames(args.frames)[0] if args.frames else 14
    with locked_output(args.out) as out:
        if args.input:
            images = load_images(list_images(args.input))
            if not images:
                raise InvalidInput(f"no images found in {args.input}")
        else:
            rng = np.random.default_rng([cfg.seed, 1])
            size = args.image_size or cfg.synthesis.hr_size + 2 * cfg.synthesis.margin + 32
            images = [procedural_image(size, rng) for _ in range(args.procedural)]
        samples = synthesize_dataset(images, args.samples, n_frames, cfg.synthesis, cfg.seed)
        write_dataset(out, samples, cfg.synthesis)
        record_run(out, cfg, "synthesize", vars(args))
    print(f"wrote {len(samples)} bursts of {n_frames} frames to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve(args)
    dataset = BurstDataset(args.data)
    with locked_output(args.out) as out:
        record_run(out, cfg, "train", vars(args))
        try:
            state, curve = fit(cfg.train, cfg.model, dataset, out_dir=out, resume=args.resume)
        except DivergenceError as e:
            (out / "divergence.json").write_text(json.dumps(e.payload, indent=2, default=str) + "\n")
            print(f"error: {e} {e.payload}", file=sys.stderr)
            return 3
    last = curve[-1].loss if curve else float("nan")
    print(f"trained to iteration {state.iteration}, last loss {last:.5f}; checkpoints in {out / 'checkpoints'}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve(args)
    model = load_model(args.checkpoint)
    dataset = BurstDataset(args.data)
    frames = parse_frames(args.frames) or cfg.eval_frames
    with locked_output(args.out) as out:
        record_run(out, cfg, "eval", vars(args))
        reports = evaluate(model, dataset, frames)
        write_reports(reports, out)
    for rep in reports:
        print(f"N={rep.n_frames:2d}  PSNR {rep.mean_psnr:.3f} dB  SSIM {rep.mean_ssim:.4f}  "
              f"{rep.mean_runtime_ms:.1f} ms/image")
    return 0


def _ablation_variants(args, cfg: ExperimentConfig, n_train: int):
    out = []
    for v in args.fusion.split(",") if args.fusion else []:
        if v == "concat":
            # no intermediate outputs exist for a fixed-length concat model
            out.append((f"fusion={v}", cfg.model.replace(fusion_variant=v, fixed_frames=n_train),
                        cfg.train.replace(loss_variant="last_only")))
        else:
            out.append((f"fusion={v}", cfg.model.replace(fusion_variant=v), cfg.train))
    for v in args.align.split(",") if args.align else []:
        out.append((f"align={v}", cfg.model.replace(align_variant=v), cfg.train))
    for v in args.loss.split(",") if args.loss else []:
        out.append((f"loss={v}", cfg.model, cfg.train.replace(loss_variant=v)))
    if not out:
        out.append(("default", cfg.model, cfg.train))
    return out


def cmd_ablate(args) -> int:
    cfg = resolve(args)
    train_set = BurstDataset(args.data)
    eval_set = BurstDataset(args.eval_data) if args.eval_data else train_set
    frames = parse_frames(args.frames) or cfg.eval_frames
    rows = []
    with locked_output(args.out) as out:
        record_run(out, cfg, "ablate", vars(args))
        for name, model_cfg, train_cfg in _ablation_variants(args, cfg, train_set.n_frames):
            run_dir = out / name.replace("=", "_")
            state, _ = fit(train_cfg, model_cfg, train_set, out_dir=run_dir)
            for n in frames:
                row = {"variant": name, "n_frames": n, "param_count": state.model.count_parameters()}
                try:
                    rep = evaluate(state.model, eval_set, [n], label=name)[0]
                    row.update(psnr_db=rep.mean_psnr, ssim=rep.mean_ssim, status="ok")
                except FixedLengthError as e:
                    row.update(psnr_db=None, ssim=None, status=f"FixedLengthError: {e}")
                rows.append(row)
                print(json.dumps(row))
        with open(out / "ablation.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["variant", "n_frames", "psnr_db", "ssim", "param_count", "status"])
            writer.writeheader()
            writer.writerows(rows)
        with open(out / "ablation.jsonl", "w") as f:
            f.writelines(json.dumps(r) + "\n" for r in rows)
    return 0


def _read_burst(path: Path) -> BurstSample:
    if path.is_dir():
        return read_sample(path)
    arr = np.load(path)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 4:
        raise InvalidInput(f"expected an (N, h, w, 4) packed burst in {path}, got {arr.shape}")
    return BurstSample(burst=arr.astype(np.float32), ground_truth=np.zeros((1, 1, 3), np.float32),
                       transforms=[], camera=None, seed=0)


def cmd_infer(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    model = load_model(ckpt)
    sample = _read_burst(Path(args.burst))
    if args.frames:
        sample = crop_burst(sample, parse_frames(args.frames)[0])
    if needs_oracle_flows(model.cfg) and not sample.transforms:
        raise InvalidInput("this checkpoint needs known frame transforms (oracle flow); pass a sample directory")
    pred = predict(model, sample)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with locked_output(out.parent):
        write_png16(out, pred)
        meta = {"command": "infer", "checkpoint": str(ckpt), "burst": str(args.burst),
                "n_frames": sample.n_frames, "model": json.loads(model.cfg.to_json())}
        out.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} ({pred.shape[1]}x{pred.shape[0]})")
    return 0


def benchmark(model: RBSR, n_frames: int, size: int, runs: int = 5, warmup: int = 1, seed: int = 0) -> dict:
    """Median wall-clock of forward passes on random input."""
    g = torch.Generator().manual_seed(seed)
    burst = torch.rand(1, n_frames, model.cfg.in_channels, size, size, generator=g)
    flows = torch.zeros(1, n_frames - 1, 2, size, size) if needs_oracle_flows(model.cfg) else None
    model.eval()
    samples = []
    with torch.no_grad():
        for k in range(warmup + runs):
            t0 = time.perf_counter()
            model(burst, flows)
            if k >= warmup:
                samples.append(1000.0 * (time.perf_counter() - t0))
    return {"param_count": model.count_parameters(), "reference_param_count_m": REFERENCE_PARAMS_M,
            "n_frames": n_frames, "input_size": size, "runs": runs,
            "median_ms": statistics.median(samples), "samples_ms": samples,
            "threads": torch.get_num_threads()}


def cmd_benchmark(args) -> int:
    cfg = resolve(args)
    if args.runs < 5:
        raise InvalidInput("benchmark needs at least 5 timed runs")
    n = parse_frames(args.frames)[0] if args.frames else 14
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = RBSR(cfg.model)
    report = benchmark(model, n, args.size, args.runs, args.warmup, cfg.seed)
    with locked_output(args.out) as out:
        record_run(out, cfg, "benchmark", vars(args))
        (out / "benchmark.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"parameters: {report['param_count']:,} ({report['param_count'] / 1e6:.2f}M; "
          f"reference {REFERENCE_PARAMS_M}M)  median {report['median_ms']:.1f} ms over {args.runs} runs")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="YAML config file")
    p.add_argument("--preset", choices=("tiny", "small", "full"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override (repeatable)")
    p.add_argument("--out", type=Path, required=True, help="output directory (output file for infer)")
    p.add_argument("--frames", default=None, help="frame count(s), comma separated")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbsr", description="Recurrent burst super-resolution experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="build a synthetic RAW burst dataset")
    _common(p)
    p.add_argument("--input", type=Path, default=None, help="directory of sRGB images (default: procedural)")
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--procedural", type=int, default=8, help="number of procedural images without --input")
    p.add_argument("--image-size", type=int, default=None)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", help="train a model on a dataset")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--resume", type=Path, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint for several burst lengths")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate model/loss variants under one budget")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--eval-data", type=Path, default=None)
    p.add_argument("--fusion", default=None, help="fusion variants, comma separated")
    p.add_argument("--align", default=None, help="alignment variants, comma separated")
    p.add_argument("--loss", default=None, help="loss variants, comma separated")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("infer", help="super-resolve one burst to a 16-bit PNG")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--burst", type=Path, required=True, help="sample directory or .npy (N, h, w, 4)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("benchmark", help="parameter count and forward runtime")
    _common(p)
    p.add_argument("--size", type=int, default=48, help="packed input size")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (RBSRError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
