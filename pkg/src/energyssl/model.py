"""Small convolutional classifier, parameter EMA, and a finite-difference checker."""

from __future__ import annotations

import copy

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, NumericError


class ConvNet(nn.Module):
    """Three stride-2 conv blocks, global average pool, linear head.

    forward() returns (logits, embedding); the pooled penultimate vector is the
    embedding used by the metric-learning loss.
    """

    def __init__(self, num_classes, conv_widths=(32, 64, 128), in_channels=1, batch_norm=False):
        super().__init__()
        blocks = []
        c_in = in_channels
        for c_out in conv_widths:
            blocks.append(nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1))
            if batch_norm:
                blocks.append(nn.BatchNorm2d(c_out))
            blocks.append(nn.ReLU(inplace=True))
            c_in = c_out
        self.features = nn.Sequential(*blocks)
        self.embed_dim = conv_widths[-1]
        self.head = nn.Linear(self.embed_dim, num_classes)
        self.num_classes = num_classes

    def forward(self, x):
        if x.dim() == 3:
            x = x.unsqueeze(1)
        if x.dim() != 4:
            raise ConfigError(f"expected NxHxW or NxCxHxW input, got shape {tuple(x.shape)}")
        feats = self.features(x)
        if not torch.isfinite(feats).all():
            raise NumericError("non-finite activations after conv features")
        emb = feats.mean(dim=(2, 3))
        logits = self.head(emb)
        if not torch.isfinite(logits).all():
            raise NumericError("non-finite logits at linear head")
        return logits, emb


class ParamEma:
    """Shadow copy of model parameters: shadow <- decay*shadow + (1-decay)*live."""

    def __init__(self, model: nn.Module, decay: float):
        if not (0.0 < decay <= 1.0):
            raise ConfigError("EMA decay must lie in (0, 1]")
        self.decay = decay
        self.shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}
        # normalization statistics are copied from the live model, not averaged
        self.buffer_names = {k for k, _ in model.named_buffers()}

    @torch.no_grad()
    def update(self, model: nn.Module):
        for k, v in model.state_dict().items():
            if self.shadow[k].shape != v.shape:
                raise ConfigError(f"EMA shape mismatch for {k}")
            if k in self.buffer_names or not v.dtype.is_floating_point:
                self.shadow[k].copy_(v)
            else:
                self.shadow[k].mul_(self.decay).add_(v, alpha=1.0 - self.decay)

    def build_model(self, model: nn.Module) -> nn.Module:
        """Fresh evaluation model carrying the shadow parameters."""
        eval_model = copy.deepcopy(model)
        eval_model.load_state_dict(self.shadow)
        eval_model.eval()
        return eval_model


def grad_check(loss_fn, named_params, h=1e-3, zero_grad_floor=1e-6):
    """Max relative error between analytic and central-difference gradients.

    loss_fn: () -> scalar tensor, pure in the given parameters.
    named_params: iterable of (name, tensor) with requires_grad set.
    Returns {name: max_rel_err} with float('nan') for groups where every
    analytic coordinate is below zero_grad_floor.
    """
    named_params = list(named_params)
    params = [p for _, p in named_params]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    report = {}
    with torch.no_grad():
        for (name, p), g in zip(named_params, grads):
            if g is None:
                g = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = g.view(-1)
            worst = None
            for i in range(flat.numel()):
                if abs(gflat[i].item()) <= zero_grad_floor:
                    continue
                orig = flat[i].item()
                flat[i] = orig + h
                lp = float(loss_fn())
                flat[i] = orig - h
                lm = float(loss_fn())
                flat[i] = orig
                fd = (lp - lm) / (2.0 * h)
                rel = abs(fd - gflat[i].item()) / max(abs(gflat[i].item()), abs(fd))
                worst = rel if worst is None else max(worst, rel)
            report[name] = float("nan") if worst is None else worst
    return report
