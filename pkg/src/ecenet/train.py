"""Optimization loop: AdamW with linear warmup, per-step metric logging, and
run persistence (checkpoint + config + metric log).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, config_hash, save_config
from .data import SegSample, gen_shapes
from .errors import DataError, TrainingDiverged
from .evaluate import EvalResult, evaluate
from .losses import LossWeights
from .model import ECENet, loss_components
from .tensor import GradientTape, Tensor


class AdamW:
    """Adaptive moments with decoupled weight decay and linear warmup.

    Weight decay applies only to rank >= 2 parameters (matrices and conv
    kernels); biases and norm affines are not decayed.
    """

    def __init__(self, named_params, lr: float = 3e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01,
                 warmup_steps: int = 100):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.warmup_steps = max(0, int(warmup_steps))
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def current_lr(self) -> float:
        if self.warmup_steps and self.t < self.warmup_steps:
            return self.lr * (self.t + 1) / self.warmup_steps
        return self.lr

    def step(self, grads: dict) -> None:
        lr_t = self.current_lr()
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.named_params:
            g = grads.get(p)
            if g is None:  # parameter not touched by this step's graph
                g = np.zeros_like(p.data)
            g = g.astype(p.data.dtype, copy=False)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.assign(p.data - lr_t * update)

    def moment_records(self):
        for name, _ in self.named_params:
            yield f"{name}.m", self.m[name]
            yield f"{name}.v", self.v[name]

    def load_moments(self, moments: dict, step: int) -> None:
        for name, p in self.named_params:
            for table, key in ((self.m, f"{name}.m"), (self.v, f"{name}.v")):
                if key not in moments:
                    raise DataError(f"checkpoint is missing moment {key}")
                arr = moments[key].astype(p.data.dtype)
                if arr.shape != p.shape:
                    raise DataError(
                        f"moment {key}: shape {arr.shape} vs parameter {p.shape}"
                    )
                table[name] = arr
        self.t = step


@dataclass
class TrainResult:
    model: ECENet
    optimizer: AdamW
    history: list
    final_eval: EvalResult | None
    checkpoint_path: Path | None


def format_metric_line(step: int, loss: float, ce: float, mask: float,
                       div: float, miou: float | None) -> str:
    miou_text = "-" if miou is None else f"{miou:.4f}"
    return (f"step={step} loss={loss:.6f} ce={ce:.6f} mask={mask:.6f} "
            f"div={div:.6f} miou={miou_text}")


def apply_parameters(model: ECENet, table: dict) -> None:
    """Assign checkpointed arrays onto model parameters by name."""
    named = dict(model.named_parameters())
    missing = set(named) - set(table)
    extra = set(table) - set(named)
    if missing or extra:
        raise DataError(
            f"checkpoint/model mismatch: missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(extra)[:3]}"
        )
    for name, p in named.items():
        arr = table[name]
        if tuple(arr.shape) != p.shape:
            raise DataError(f"{name}: checkpoint shape {arr.shape} vs {p.shape}")
        p.assign(arr)


def save_run_checkpoint(path, model: ECENet, optimizer: AdamW, step: int,
                        cfg: TrainConfig) -> None:
    save_checkpoint(
        path,
        step=step,
        parameters=[(n, p.data) for n, p in model.named_parameters()],
        moments=list(optimizer.moment_records()),
        config_hash=config_hash(cfg),
    )


def restore_run(checkpoint: Checkpoint, cfg: TrainConfig,
                dtype=np.float32) -> ECENet:
    """Rebuild a model from a config and load checkpointed parameters."""
    if checkpoint.config_hash != config_hash(cfg):
        raise DataError("checkpoint config hash does not match the given config")
    model = ECENet(cfg.model_config(), seed=cfg.seed, dtype=dtype)
    apply_parameters(model, checkpoint.parameters)
    return model


def train(cfg: TrainConfig, out_dir=None, log=None,
          progress: bool = False) -> TrainResult:
    """Run the optimization loop described by ``cfg``.

    Emits one metric line per step through ``log`` (a callable; defaults to
    collecting only). With ``out_dir`` set, writes config.txt, metrics.log and
    checkpoint.ecen there.
    """
    cfg.validate()
    weights = LossWeights(
        lambda_div=cfg.lambda_div,
        lambda_focal=cfg.lambda_focal,
        lambda_dice=cfg.lambda_dice,
        focal_gamma=cfg.focal_gamma,
        focal_alpha=cfg.focal_alpha,
    )

    root = np.random.SeedSequence(cfg.seed)
    init_seq, data_seq, eval_seq = root.spawn(3)
    model = ECENet(cfg.model_config(), seed=np.random.default_rng(init_seq),
                   dtype=np.float32)
    train_rng = np.random.default_rng(data_seq)
    eval_set = gen_shapes(np.random.default_rng(eval_seq), cfg.eval_samples,
                          cfg.image_size, cfg.n_classes)

    optimizer = AdamW(
        model.named_parameters(),
        lr=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        warmup_steps=cfg.warmup_steps,
    )

    out_path = Path(out_dir) if out_dir is not None else None
    log_lines = []
    metrics_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        save_config(out_path / "config.txt", cfg)
        metrics_fh = open(out_path / "metrics.log", "w")

    def emit(line: str) -> None:
        log_lines.append(line)
        if metrics_fh is not None:
            metrics_fh.write(line + "\n")
        if log is not None:
            log(line)

    history = []
    final_eval = None
    try:
        for step in range(1, cfg.total_steps + 1):
            batch = gen_shapes(train_rng, cfg.batch_size, cfg.image_size,
                               cfg.n_classes)
            with GradientTape() as tape:
                total = ce = mask = div = None
                for sample in batch:
                    out = model.forward(Tensor(sample.image, dtype=np.float32))
                    parts = loss_components(out, sample.gt, weights)
                    total = parts["total"] if total is None else total + parts["total"]
                    ce = parts["ce"] if ce is None else ce + parts["ce"]
                    mask = parts["mask"] if mask is None else mask + parts["mask"]
                    div = parts["div"] if div is None else div + parts["div"]
                loss = ops.scale(total, 1.0 / len(batch))

            loss_value = loss.item() if np.isfinite(loss.data).all() else float("nan")
            if not np.isfinite(loss_value):
                culprit = tape.first_nonfinite() or "loss"
                raise TrainingDiverged(
                    f"non-finite loss at step {step}; first non-finite tensor "
                    f"produced by op '{culprit}'"
                )

            grads = tape.backward(loss)
            optimizer.step(grads)

            miou = None
            if cfg.eval_interval and (step % cfg.eval_interval == 0
                                      or step == cfg.total_steps):
                final_eval = evaluate(model, eval_set)
                miou = final_eval.miou

            scale = 1.0 / len(batch)
            record = {
                "step": step,
                "loss": loss_value,
                "ce": ce.item() * scale,
                "mask": mask.item() * scale,
                "div": div.item() * scale,
                "miou": miou,
            }
            history.append(record)
            emit(format_metric_line(step, record["loss"], record["ce"],
                                    record["mask"], record["div"], miou))
            if progress and (step % 50 == 0 or step == 1):
                print(f"[train] step {step}/{cfg.total_steps} "
                      f"loss {record['loss']:.4f}", file=sys.stderr)

        if final_eval is None and cfg.total_steps == 0 and cfg.eval_interval:
            final_eval = evaluate(model, eval_set)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    checkpoint_path = None
    if out_path is not None:
        checkpoint_path = out_path / "checkpoint.ecen"
        save_run_checkpoint(checkpoint_path, model, optimizer,
                            cfg.total_steps, cfg)
    return TrainResult(model=model, optimizer=optimizer, history=history,
                       final_eval=final_eval, checkpoint_path=checkpoint_path)
