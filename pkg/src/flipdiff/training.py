"""Training loop: resample or iterate batches, noise to a uniform random
backward time, take AdamW steps on the combined loss, and log a CSV row per
step."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError
from .losses import LossSpec, draw_clean_states, make_batch
from .model import ModelConfig, OptimizerState, init_params, loss_and_grad, optimizer_step
from .states import Distribution, EmpiricalSet

LOG_HEADER = ("step", "loss_total", "loss_l2", "loss_e", "loss_ce", "clamped_frac")

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 3000
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 0.0
    decay_every: int = 0
    decay_rate: float = 1.0
    ema: bool = False
    ema_rate: float = 0.99

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")


@dataclass
class TrainResult:
    params: np.ndarray
    opt_state: OptimizerState
    log_rows: list[tuple] = field(repr=False, default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.log_rows[-1][1]


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)
        writer.writerows(rows)


def train(dataset: Distribution | EmpiricalSet, model_config: ModelConfig,
          spec: LossSpec, settings: TrainSettings, lam: float, t_f: float,
          rng: np.random.Generator, init: np.ndarray | None = None,
          opt_state: OptimizerState | None = None, start_step: int = 0,
          log_path=None) -> TrainResult:
    """Fit the denoiser; deterministic given the rng seed and inputs.

    ``init``/``opt_state``/``start_step`` allow resuming so step numbering
    continues across checkpoints.
    """
    params = init_params(model_config) if init is None else init.copy()
    state = opt_state or OptimizerState(
        lr=settings.lr, weight_decay=settings.weight_decay,
        decay_every=settings.decay_every, decay_rate=settings.decay_rate,
        step=start_step)
    ema_params = params.copy() if settings.ema else None
    rows: list[tuple] = []
    for step in range(start_step, start_step + settings.steps):
        x0s = draw_clean_states(dataset, settings.batch_size, rng)
        batch = make_batch(x0s, lam, t_f, rng)
        total, grad, parts = loss_and_grad(params, model_config, batch, spec)
        if not np.isfinite(total) or abs(total) > DIVERGENCE_LIMIT:
            raise TrainingError(
                f"training diverged at step {step}: loss={total!r} "
                f"(l2={parts['l2']!r}, e={parts['e']!r}, ce={parts['ce']!r})")
        params = optimizer_step(params, grad, state)
        if ema_params is not None:
            ema_params = settings.ema_rate * ema_params + (1.0 - settings.ema_rate) * params
        rows.append((step, total, parts["l2"], parts["e"], parts["ce"], batch.clamped_frac))
    if log_path is not None:
        write_log(log_path, rows)
    final = ema_params if ema_params is not None else params
    return TrainResult(params=final, opt_state=state, log_rows=rows)
