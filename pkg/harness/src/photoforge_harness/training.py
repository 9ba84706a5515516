"""Training loop: warm-up, fine-tune, early stopping, best-model checkpointing.

Protocol shape: an optional head-only warm-up phase (the backbone stays
frozen, meant for pretrained backbones whose weights must not be
corrupted by the randomly initialized head), then a main phase training
all weights at a lower rate. Loss is mean absolute error for regression
and cross-entropy for classification; the optimizer is Adam. Training
stops early when the validation metric has not improved for `patience`
epochs, and the best-on-validation weights are what gets saved.

Seeds are pinned for reproducibility; exact bitwise repeatability still
depends on the backend's kernel determinism.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader

from .data import FringeDataset, Record, augmented
from .models import TaskSpec, build_model


@dataclass(frozen=True)
class TrainConfig:
    """Protocol hyperparameters. Defaults mirror the transfer protocol
    (long head-only warm-up, low-rate fine-tune); `desk()` gives values
    sized for training the small backbone from scratch."""

    backbone: str = "small"
    warmup_epochs: int = 200
    main_epochs: int = 100
    warmup_lr: float = 1e-3
    main_lr: float = 1e-6
    patience: int = 20
    batch_size: int = 32
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.main_lr > 0 or not self.warmup_lr > 0:
            raise ValueError("learning rates must be > 0")
        if not self.patience < max(self.main_epochs, 1):
            raise ValueError("patience must be smaller than the epoch budget")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """From-scratch settings: no warm-up (nothing pretrained to protect),
        ordinary Adam rate for the main phase."""
        base = dict(warmup_epochs=0, main_epochs=60, main_lr=1e-3, patience=10)
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainReport:
    task: TaskSpec
    best_epoch: int
    best_val: float
    epochs_run: int
    checkpoint: str
    log: str


def _loss_fn(spec: TaskSpec) -> nn.Module:
    return nn.CrossEntropyLoss() if spec.task == "count" else nn.L1Loss()


def _val_metric(spec: TaskSpec, model: nn.Module, loader: DataLoader, device) -> float:
    """Validation loss (lower is better); classification uses error rate."""
    model.eval()
    loss_fn = _loss_fn(spec)
    total, n = 0.0, 0
    correct = 0
    with torch.no_grad():
        for images, targets in loader:
            images, targets = images.to(device), targets.to(device)
            out = model(images)
            if spec.task == "count":
                correct += int((out.argmax(dim=1) == targets).sum())
            else:
                total += float(loss_fn(out, targets)) * len(images)
            n += len(images)
    if spec.task == "count":
        return 1.0 - correct / n
    return total / n


def train(
    spec: TaskSpec,
    records: list[Record],
    data_root,
    out_dir,
    config: TrainConfig | None = None,
    *,
    train_split: str = "train",
    val_split: str = "val",
    model: nn.Module | None = None,
    warmup: bool | None = None,
) -> TrainReport:
    """Train one task model from a manifest; returns paths to artifacts.

    Pass an existing `model` to fine-tune it (transfer); `warmup=False`
    skips the head-only phase regardless of the config.
    """
    config = config or TrainConfig()
    torch.manual_seed(config.seed)
    np.random.seed(config.seed & 0xFFFFFFFF)
    device = torch.device("cpu")

    train_records = augmented(records, train_split)
    val_records = augmented(records, val_split)
    train_ds = FringeDataset(data_root, train_records, spec.task, spec.m)
    val_ds = FringeDataset(data_root, val_records, spec.task, spec.m)
    train_loader = DataLoader(train_ds, batch_size=config.batch_size, shuffle=True,
                              generator=torch.Generator().manual_seed(config.seed))
    val_loader = DataLoader(val_ds, batch_size=config.batch_size)

    if model is None:
        model = build_model(spec, config.backbone, config.dropout)
    model.to(device)
    loss_fn = _loss_fn(spec)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = spec.task if spec.m is None else f"{spec.task}-m{spec.m}"
    ckpt_path = out / f"{tag}.pt"
    log_path = out / f"{tag}-log.csv"

    best = {"val": float("inf"), "epoch": -1, "state": None}
    since_best = 0
    epochs_run = 0

    phases = []
    do_warmup = config.warmup_epochs > 0 if warmup is None else warmup
    if do_warmup and config.warmup_epochs > 0:
        phases.append(("warmup", config.warmup_epochs, config.warmup_lr, True))
    phases.append(("main", config.main_epochs, config.main_lr, False))

    with open(log_path, "w", newline="") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(["phase", "epoch", "train_loss", "val_metric", "seconds"])
        for phase, epochs, lr, freeze_backbone in phases:
            for p in model.backbone.parameters():
                p.requires_grad = not freeze_backbone
            params = [p for p in model.parameters() if p.requires_grad]
            optimizer = torch.optim.Adam(params, lr=lr)
            since_best = 0
            for epoch in range(epochs):
                t0 = time.time()
                model.train()
                total, n = 0.0, 0
                for images, targets in train_loader:
                    images, targets = images.to(device), targets.to(device)
                    optimizer.zero_grad()
                    loss = loss_fn(model(images), targets)
                    loss.backward()
                    optimizer.step()
                    total += float(loss) * len(images)
                    n += len(images)
                val = _val_metric(spec, model, val_loader, device)
                epochs_run += 1
                writer.writerow([phase, epochs_run, f"{total / n:.6f}", f"{val:.6f}", f"{time.time() - t0:.2f}"])
                if val < best["val"] - 1e-12:
                    best = {"val": val, "epoch": epochs_run,
                            "state": {k: v.detach().clone() for k, v in model.state_dict().items()}}
                    since_best = 0
                else:
                    since_best += 1
                    if since_best > config.patience:
                        break

    if best["state"] is not None:
        model.load_state_dict(best["state"])
    torch.save(
        {
            "state_dict": model.state_dict(),
            "task": spec.task,
            "m": spec.m,
            "backbone": config.backbone if isinstance(config.backbone, str) else "custom",
            "config": {k: v for k, v in asdict(config).items() if not callable(v)},
        },
        ckpt_path,
    )
    return TrainReport(
        task=spec,
        best_epoch=best["epoch"],
        best_val=best["val"],
        epochs_run=epochs_run,
        checkpoint=str(ckpt_path),
        log=str(log_path),
    )


def load_model(path) -> tuple[nn.Module, TaskSpec]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    spec = TaskSpec(payload["task"], payload["m"])
    model = build_model(spec, payload.get("backbone", "small"))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, spec
