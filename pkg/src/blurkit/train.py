"""Optimization recipe: momentum SGD with step-decayed learning rate,
per-pixel cross-entropy on the softmax output, checkpointing, and a
finite-difference gradient checker for the network graph.
"""

import copy
import time
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError
from .model import build_model
from .checkpoint import save_checkpoint

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
KINK_MARGIN = 1e-4  # min |ReLU pre-activation| required at a grad-check point


@dataclass
class TrainSchedule:
    base_lr: float = 0.01
    decay_factor: float = 0.1
    decay_period: int = 25
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0

    def validate(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_period < 1:
            raise ConfigError(f"decay_period must be >= 1, got {self.decay_period}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError(
                f"batch_size must be >= 1 and epochs >= 0, got "
                f"{self.batch_size}/{self.epochs}"
            )
        return self


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    def append(self, record: EpochRecord):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ConfigError(
                f"epoch numbers must be strictly increasing, got {record.epoch} "
                f"after {self.records[-1].epoch}"
            )
        self.records.append(record)

    @property
    def final_loss(self):
        return self.records[-1].loss if self.records else None

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,loss,lr,seconds\n")
            for r in self.records:
                fh.write(f"{r.epoch},{r.loss!r},{r.lr!r},{r.seconds:.3f}\n")

    @classmethod
    def from_csv(cls, path):
        out = cls()
        with open(path) as fh:
            next(fh)
            for line in fh:
                epoch, loss, lr, seconds = line.strip().split(",")
                out.append(EpochRecord(int(epoch), float(loss), float(lr), float(seconds)))
        return out


def lr_at_epoch(schedule: TrainSchedule, epoch: int) -> float:
    """Step-decayed rate: base_lr scaled by decay_factor every decay_period epochs."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    # repeated multiplication keeps the decade values exact in float64,
    # base_lr * factor**k does not
    lr = schedule.base_lr
    for _ in range(epoch // schedule.decay_period):
        lr *= schedule.decay_factor
    return lr


def cross_entropy_loss(probabilities: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean -log p(true class) over batch and pixels, p floored at 1e-12.

    Takes the model's softmax output directly (probabilities summing to 1
    across the class dimension) and a batch of integer class masks.
    """
    if probabilities.ndim != 4 or mask.ndim != 3 \
            or probabilities.shape[0] != mask.shape[0] \
            or probabilities.shape[2:] != mask.shape[1:]:
        raise ShapeError(
            f"expected BxCxHxW probabilities with BxHxW mask, got "
            f"{tuple(probabilities.shape)} and {tuple(mask.shape)}"
        )
    p_true = probabilities.gather(1, mask.unsqueeze(1).long()).squeeze(1)
    return -torch.log(p_true.clamp_min(PROB_FLOOR)).mean()


def pixel_accuracy(probabilities: torch.Tensor, mask: torch.Tensor) -> float:
    return (probabilities.argmax(dim=1) == mask).double().mean().item()


def sgd_step(model, grads: dict, state: dict, lr: float, schedule: TrainSchedule):
    """Classical momentum update: g += wd*theta; v = m*v + g; theta -= lr*v.

    ``state`` maps parameter names to momentum buffers and is created lazily
    (buffers start at zero); it is mutated in place and returned.
    """
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name not in grads:
                raise ConfigError(f"missing gradient for parameter {name!r}")
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(
                    f"gradient shape {tuple(g.shape)} does not match parameter "
                    f"{name!r} of shape {tuple(p.shape)}"
                )
            if schedule.weight_decay:
                g = g + schedule.weight_decay * p
            buf = state.get(name)
            if buf is None:
                buf = torch.zeros_like(p)
            buf = schedule.momentum * buf + g
            state[name] = buf
            p -= lr * buf
    return model, state


def train(model, images, masks, schedule: TrainSchedule, out_dir=None,
          checkpoint_every: int = 25, start_epoch: int = 0,
          momentum_state=None, deterministic: bool = False) -> TrainLog:
    """Run the optimization loop over preprocessed arrays.

    Mini-batch order is reshuffled every epoch from a generator seeded by
    (schedule.seed, epoch), so a run resumed from a checkpoint continues
    bit-identically to an uninterrupted one. Checkpoints are written to
    ``out_dir`` every ``checkpoint_every`` epochs and at the end.
    """
    schedule.validate()
    n = len(images)
    if n == 0:
        raise ConfigError("training set is empty")
    if deterministic:
        torch.set_num_threads(1)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.asarray(images), dtype=dtype)
    y = torch.as_tensor(np.asarray(masks), dtype=torch.long)
    state = momentum_state if momentum_state is not None else {}
    train_log = TrainLog()

    def checkpoint(epoch_done, tag):
        if out_dir is None:
            return
        path = f"{out_dir}/checkpoint_{tag}.pt"
        try:
            save_checkpoint(path, model, epoch_done, state)
        except Exception:
            train_log.to_csv(f"{out_dir}/trainlog.partial.csv")
            raise
        train_log.checkpoints.append(path)

    model.train()
    for epoch in range(start_epoch, schedule.epochs):
        started = time.perf_counter()
        lr = lr_at_epoch(schedule, epoch)
        gen = torch.Generator().manual_seed(schedule.seed * 1_000_003 + epoch)
        order = torch.randperm(n, generator=gen)
        total = 0.0
        for lo in range(0, n, schedule.batch_size):
            idx = order[lo:lo + schedule.batch_size]
            probs = model(x[idx])
            batch_loss = cross_entropy_loss(probs, y[idx])
            model.zero_grad()
            batch_loss.backward()
            grads = {
                name: p.grad if p.grad is not None else torch.zeros_like(p)
                for name, p in model.named_parameters()
            }
            sgd_step(model, grads, state, lr, schedule)
            total += batch_loss.item() * len(idx)
        train_log.append(EpochRecord(epoch, total / n, lr, time.perf_counter() - started))
        if checkpoint_every and (epoch + 1) % checkpoint_every == 0 \
                and epoch + 1 < schedule.epochs:
            checkpoint(epoch + 1, f"epoch{epoch + 1:04d}")
    checkpoint(schedule.epochs, "final")
    return train_log


def _linearized(model):
    """Copy of the model with every ReLU and the softmax replaced by identity."""
    clone = copy.deepcopy(model)
    for module in clone.modules():
        for name, child in list(module.named_children()):
            if isinstance(child, nn.ReLU):
                setattr(module, name, nn.Identity())
    clone.softmax = nn.Identity()
    return clone


def min_relu_preactivation(model, batch) -> float:
    """Smallest |input| seen by any ReLU during one forward pass."""
    values = []
    hooks = [
        m.register_forward_pre_hook(lambda mod, inp: values.append(inp[0].abs().min().item()))
        for m in model.modules() if isinstance(m, nn.ReLU)
    ]
    try:
        with torch.no_grad():
            model(batch)
    finally:
        for h in hooks:
            h.remove()
    return min(values) if values else float("inf")


class _ActivationPattern:
    """Captures which piecewise-linear branch every ReLU and max-pool takes.

    A central difference is only a valid derivative estimate when both stencil
    points stay on the same branch, so slices whose pattern changes under the
    perturbation are discarded by the checker.
    """

    def __init__(self, model):
        self.model = model
        self.snapshot = None

    def __enter__(self):
        self._hooks = []
        for module in self.model.modules():
            if isinstance(module, nn.ReLU):
                self._hooks.append(module.register_forward_pre_hook(self._on_relu))
            elif isinstance(module, nn.MaxPool2d):
                self._hooks.append(module.register_forward_pre_hook(self._on_pool))
        return self

    def __exit__(self, *exc):
        for h in self._hooks:
            h.remove()

    def _on_relu(self, module, inputs):
        self.snapshot.append(inputs[0] > 0)

    def _on_pool(self, module, inputs):
        _, idx = torch.nn.functional.max_pool2d(
            inputs[0], module.kernel_size, module.stride, return_indices=True)
        self.snapshot.append(idx)

    def run(self, fn):
        self.snapshot = []
        value = fn()
        return value, self.snapshot

    @staticmethod
    def same(a, b):
        return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def grad_check(model, image, mask=None, epsilon: float = 1e-3,
               n_params: int = 200, seed: int = 0, linear: bool = False) -> float:
    """Max relative error between autograd and central finite differences.

    Samples ``n_params`` scalar parameters at random; relative error uses
    |a - fd| / max(|a| + |fd|, 1e-8). Slices where the +/-epsilon evaluations
    land on a different ReLU/pool branch than the base point are replaced by
    fresh samples (finite differences are meaningless across a kink).
    ``linear=True`` checks a linearized copy (ReLU and softmax dropped)
    against a fixed linear readout, for which per-coordinate central
    differences are exact up to roundoff.
    """
    if linear:
        model = _linearized(model)
    named = list(model.named_parameters())
    dtype = named[0][1].dtype

    readout = None
    if linear:
        gen = torch.Generator().manual_seed(seed + 7)
        with torch.no_grad():
            out_shape = model(image).shape
        readout = torch.empty(out_shape, dtype=dtype)
        readout.normal_(0.0, 1.0, generator=gen)

    def objective():
        out = model(image)
        if linear:
            return (out * readout).mean()
        return cross_entropy_loss(out, mask)

    model.zero_grad()
    objective().backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
                for _, p in named]

    sizes = np.array([p.numel() for _, p in named])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    candidates = rng.permutation(total)
    wanted = min(n_params, total)

    worst = 0.0
    checked = skipped = 0
    with torch.no_grad(), _ActivationPattern(model) as pattern:
        _, base_branches = pattern.run(objective)
        for flat in candidates:
            if checked >= wanted:
                break
            flat = int(flat)
            which = int(np.searchsorted(offsets, flat, side="right") - 1)
            local = flat - int(offsets[which])
            p = named[which][1].view(-1)
            original = p[local].item()
            p[local] = original + epsilon
            f_plus, branches_plus = pattern.run(objective)
            p[local] = original - epsilon
            f_minus, branches_minus = pattern.run(objective)
            p[local] = original
            if not (pattern.same(base_branches, branches_plus)
                    and pattern.same(base_branches, branches_minus)):
                skipped += 1
                continue
            fd = (f_plus.item() - f_minus.item()) / (2 * epsilon)
            a = analytic[which].view(-1)[local].item()
            worst = max(worst, abs(a - fd) / max(abs(a) + abs(fd), 1e-8))
            checked += 1
    if checked < wanted:
        raise RuntimeError(
            f"only {checked} kink-free parameter slices out of {wanted} requested "
            f"({skipped} crossed an activation boundary)"
        )
    if skipped:
        log.debug("grad check: %d slices replaced for crossing a kink", skipped)
    return worst


def run_grad_check(config, epsilon: float = 1e-3, n_params: int = 200,
                   data_seed: int = 0, init_seed: int = 0, max_tries: int = 20):
    """Gradient-check a double-precision model built from ``config`` at a
    kink-avoiding point.

    The init seed is advanced until every ReLU pre-activation clears
    ``KINK_MARGIN``; with tens of thousands of activations no seed may
    qualify, in which case the largest-margin seed from the pool is used
    (the checker independently discards any slice whose activation pattern
    changes under the perturbation, so finite differences stay valid either
    way). Returns (max relative error, init seed used).
    """
    gen = torch.Generator().manual_seed(data_seed)
    shape = (1, config.in_channels, config.input_size, config.input_size)
    image = torch.rand(shape, generator=gen, dtype=torch.float64)
    mask = (torch.rand((1, config.input_size, config.input_size), generator=gen) > 0.5).long()
    best_seed, best_margin = init_seed, -1.0
    for attempt in range(max_tries):
        seed = init_seed + attempt
        model = build_model(config, seed=seed, dtype=torch.float64)
        margin = min_relu_preactivation(model, image)
        if margin >= KINK_MARGIN:
            best_seed, best_margin = seed, margin
            break
        if margin > best_margin:
            best_seed, best_margin = seed, margin
        log.debug("init seed %d: min |pre-activation| %.2e", seed, margin)
    model = build_model(config, seed=best_seed, dtype=torch.float64)
    return grad_check(model, image, mask, epsilon=epsilon,
                      n_params=n_params, seed=data_seed), best_seed
