"""Small-scale training of the recognizer.

PyTorch supplies LSTM backpropagation and the Adam optimizer; the loss and
its gradient w.r.t. the log-posteriors come from :func:`phode.ctc.ctc_loss`.
Weights move in and out of the network as :class:`phode.model.ModelWeights`,
so a trained model is evaluated with the numpy forward pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from phode.ctc import ctc_loss
from phode.model import (BN_EPS, BatchNormWeights, LSTMWeights, ModelWeights, N_LSTM,
                         init_weights)
from phode.phonemes import N_TOKENS

log = logging.getLogger(__name__)

LEARNING_RATE = 1.5e-4
WEIGHT_DECAY = 1e-5
BATCH_SIZE = 64
BN_MOMENTUM = 0.1


class TrainingError(RuntimeError):
    pass


class MaskedBatchNorm(nn.Module):
    """Batch norm over all valid (batch, time) frames of a padded batch."""

    def __init__(self, size: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(size))
        self.bias = nn.Parameter(torch.zeros(size))
        self.register_buffer("running_mean", torch.zeros(size))
        self.register_buffer("running_var", torch.ones(size))

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if self.training:
            valid = x[mask]
            mean = valid.mean(0)
            var = valid.var(0, unbiased=False)
            n = valid.shape[0]
            with torch.no_grad():
                self.running_mean.mul_(1 - BN_MOMENTUM).add_(BN_MOMENTUM * mean)
                unbiased = var * n / max(n - 1, 1)
                self.running_var.mul_(1 - BN_MOMENTUM).add_(BN_MOMENTUM * unbiased)
        else:
            mean, var = self.running_mean, self.running_var
        return (x - mean) / torch.sqrt(var + BN_EPS) * self.weight + self.bias


class PhodeNet(nn.Module):
    def __init__(self, hidden_size: int, n_layers: int = N_LSTM, input_size: int = 64,
                 output_size: int = N_TOKENS):
        super().__init__()
        self.register_buffer("input_mean", torch.zeros(input_size))
        self.register_buffer("input_std", torch.ones(input_size))
        self.lstms = nn.ModuleList(
            nn.LSTM(input_size if i == 0 else hidden_size, hidden_size, batch_first=True)
            for i in range(n_layers))
        self.bns = nn.ModuleList(MaskedBatchNorm(hidden_size) for _ in range(n_layers))
        self.fc = nn.Linear(hidden_size, output_size)

    def forward(self, x: torch.Tensor, lengths: Sequence[int]) -> torch.Tensor:
        T = x.shape[1]
        mask = torch.arange(T)[None, :] < torch.as_tensor(lengths)[:, None]
        h = (x - self.input_mean) / self.input_std
        h = h * mask[..., None]
        for lstm, bn in zip(self.lstms, self.bns):
            h, _ = lstm(h)
            h = bn(h, mask)
        return self.fc(h)

    def load(self, w: ModelWeights) -> None:
        with torch.no_grad():
            self.input_mean.copy_(torch.from_numpy(w.input_mean))
            self.input_std.copy_(torch.from_numpy(w.input_std))
            for lstm, bn, lw, bw in zip(self.lstms, self.bns, w.lstm, w.bn):
                lstm.weight_ih_l0.copy_(torch.from_numpy(lw.w_ih))
                lstm.weight_hh_l0.copy_(torch.from_numpy(lw.w_hh))
                lstm.bias_ih_l0.copy_(torch.from_numpy(lw.bias))
                lstm.bias_hh_l0.zero_()
                bn.weight.copy_(torch.from_numpy(bw.gamma))
                bn.bias.copy_(torch.from_numpy(bw.beta))
                bn.running_mean.copy_(torch.from_numpy(bw.running_mean))
                bn.running_var.copy_(torch.from_numpy(bw.running_var))
            self.fc.weight.copy_(torch.from_numpy(w.fc_w))
            self.fc.bias.copy_(torch.from_numpy(w.fc_b))

    def export(self) -> ModelWeights:
        def f(t):
            return t.detach().cpu().numpy().astype(np.float32).copy()

        lstm = [LSTMWeights(f(l.weight_ih_l0), f(l.weight_hh_l0), f(l.bias_ih_l0 + l.bias_hh_l0))
                for l in self.lstms]
        bn = [BatchNormWeights(f(b.weight), f(b.bias), f(b.running_mean), f(b.running_var))
              for b in self.bns]
        return ModelWeights(lstm, bn, f(self.fc.weight), f(self.fc.bias),
                            f(self.input_mean), f(self.input_std))


class _CTC(torch.autograd.Function):
    @staticmethod
    def forward(ctx, log_probs, lengths, targets):
        lp = log_probs.detach().cpu().numpy().astype(np.float64)
        grad = np.zeros_like(lp)
        total, used = 0.0, 0
        for b, (n, tgt) in enumerate(zip(lengths, targets)):
            with np.errstate(invalid="ignore"):
                loss, g = ctc_loss(lp[b, :n], tgt)
            if np.isnan(loss):
                # let the trainer abort with diagnostics
                return log_probs.new_tensor(float("nan"))
            if np.isfinite(loss):
                total += loss
                grad[b, :n] = g
                used += 1
        used = max(used, 1)
        ctx.save_for_backward(torch.from_numpy(grad / used).to(log_probs.dtype))
        ctx.n_used = used
        return log_probs.new_tensor(total / used)

    @staticmethod
    def backward(ctx, grad_output):
        (grad,) = ctx.saved_tensors
        return grad * grad_output, None, None


@dataclass
class Example:
    features: np.ndarray  # (T, 64) spectrogram
    target: list[int]


def _pad(batch: Sequence[Example]) -> tuple[torch.Tensor, list[int]]:
    lengths = [e.features.shape[0] for e in batch]
    x = np.zeros((len(batch), max(lengths), batch[0].features.shape[1]), np.float32)
    for i, e in enumerate(batch):
        x[i, :lengths[i]] = e.features
    return torch.from_numpy(x), lengths


@dataclass
class Trainer:
    """Owns a network and its Adam state; not safe to share between threads."""

    weights: ModelWeights
    lr: float = LEARNING_RATE
    weight_decay: float = WEIGHT_DECAY
    seed: int = 0
    clip_norm: float | None = None
    losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        torch.manual_seed(self.seed)
        w = self.weights
        self.net = PhodeNet(w.hidden_size, len(w.lstm), w.input_size, w.output_size)
        self.net.load(w)
        self.optimizer = torch.optim.Adam(self.net.parameters(), lr=self.lr,
                                          weight_decay=self.weight_decay)

    def step(self, batch: Sequence[Example]) -> float:
        self.net.train()
        x, lengths = _pad(batch)
        logits = self.net(x, lengths)
        log_probs = torch.log_softmax(logits, dim=-1)
        loss = _CTC.apply(log_probs, lengths, [e.target for e in batch])
        value = float(loss.detach())
        if not np.isfinite(value):
            raise TrainingError(
                f"non-finite loss {value} at step {len(self.losses)}; "
                f"max |logit| {float(logits.detach().abs().max()):.3g}, "
                f"frames {lengths}, last loss {self.losses[-1] if self.losses else None}")
        self.optimizer.zero_grad()
        loss.backward()
        if self.clip_norm:
            nn.utils.clip_grad_norm_(self.net.parameters(), self.clip_norm)
        self.optimizer.step()
        self.losses.append(value)
        return value

    def export(self) -> ModelWeights:
        self.net.eval()
        return self.net.export()


def train_step(batch: Sequence[Example], trainer: Trainer) -> ModelWeights:
    """One Adam update; returns the updated weights."""
    trainer.step(batch)
    return trainer.export()


def input_statistics(features: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate([np.asarray(f, np.float64) for f in features])
    mean = stacked.mean(0)
    std = np.maximum(stacked.std(0), 1e-3)
    return mean.astype(np.float32), std.astype(np.float32)


def train(examples: Sequence[Example], hidden_size: int = 500, steps: int = 500,
          batch_size: int = BATCH_SIZE, lr: float = LEARNING_RATE,
          weight_decay: float = WEIGHT_DECAY, seed: int = 0,
          n_layers: int = N_LSTM, clip_norm: float | None = None,
          log_every: int = 50) -> tuple[ModelWeights, list[float]]:
    """Train from scratch on ``examples``; returns weights and the loss curve."""
    torch.set_num_threads(1)
    w = init_weights(hidden_size, n_layers, examples[0].features.shape[1], N_TOKENS, seed=seed)
    w.input_mean, w.input_std = input_statistics([e.features for e in examples])
    trainer = Trainer(w, lr, weight_decay, seed, clip_norm)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(examples))
    pos = 0
    for step in range(steps):
        if pos + batch_size > len(order):
            order = rng.permutation(len(examples))
            pos = 0
        batch = [examples[i] for i in order[pos:pos + batch_size]]
        pos += batch_size
        loss = trainer.step(batch)
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d loss %.4f", step + 1, loss)
    return trainer.export(), trainer.losses
