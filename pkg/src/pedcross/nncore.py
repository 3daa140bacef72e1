"""Differentiable building blocks shared by all model architectures.

Backed by torch tensors/autograd; this module pins down the exact conventions
the rest of the code relies on (attention scaling, clamped BCE, Adam update)
and provides an independent finite-difference gradient checker.

Training runs in f32; gradient checks run in f64, where central-difference
tolerances are meaningful.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

SIGMOID_CLAMP = 1e-7
LAYERNORM_EPS = 1e-5


class NumericsError(RuntimeError):
    pass


# --- functional ops ---------------------------------------------------------

def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Affine map over the last axis: x @ W + b, with W of shape (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"inner dims disagree: {x.shape[-1]} vs {weight.shape[0]}")
    return x @ weight + bias


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return F.softmax(x, dim=dim)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def relu(x: torch.Tensor) -> torch.Tensor:
    return F.relu(x)


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Normalize the last axis to mean 0 / variance 1 (eps 1e-5), then affine."""
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + LAYERNORM_EPS) * gain + bias


def global_avg_pool(x: torch.Tensor, dims: tuple[int, ...]) -> torch.Tensor:
    """Mean over the given spatial dims."""
    return x.mean(dim=dims)


def mean_pool_over_sequence(x: torch.Tensor, dim: int = -2) -> torch.Tensor:
    return x.mean(dim=dim)


def bce_loss(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy on probabilities, clamped to [1e-7, 1 - 1e-7]."""
    p = p.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
    return (-(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))).mean()


def conv2d(x: torch.Tensor, kernels: torch.Tensor, stride: int = 1, pad: int = 0
           ) -> torch.Tensor:
    """Cross-correlation; x is (N, C, H, W), kernels (O, C, kh, kw)."""
    return F.conv2d(x, kernels, stride=stride, padding=pad)


def conv3d(x: torch.Tensor, kernels: torch.Tensor, stride=1, pad=0) -> torch.Tensor:
    """Cross-correlation; x is (N, C, T, H, W), kernels (O, C, kt, kh, kw)."""
    return F.conv3d(x, kernels, stride=stride, padding=pad)


# --- multi-head attention ---------------------------------------------------

class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention; forward returns (output, attention weights).

    Weights have shape (..., heads, queries, keys); each (head, query) row is a
    probability distribution over keys.
    """

    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads != 0:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.d_head = d // heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)

    def forward(self, x_q: torch.Tensor, x_k: torch.Tensor | None = None,
                x_v: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        x_k = x_q if x_k is None else x_k
        x_v = x_k if x_v is None else x_v
        *batch, seq_q, d = x_q.shape
        seq_k = x_k.shape[-2]
        q = self.q_proj(x_q).reshape(*batch, seq_q, self.heads, self.d_head).transpose(-3, -2)
        k = self.k_proj(x_k).reshape(*batch, seq_k, self.heads, self.d_head).transpose(-3, -2)
        v = self.v_proj(x_v).reshape(*batch, seq_k, self.heads, self.d_head).transpose(-3, -2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.d_head)
        attn = F.softmax(scores, dim=-1)  # (..., heads, seq_q, seq_k)
        out = attn @ v
        out = out.transpose(-3, -2).reshape(*batch, seq_q, self.d)
        return self.out_proj(out), attn


class FeedForward(nn.Module):
    """Pointwise two-layer feed-forward with relu."""

    def __init__(self, d: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(d, hidden)
        self.fc2 = nn.Linear(hidden, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(x)))


class LayerNorm(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return layer_norm(x, self.gain, self.bias)


# --- optimizer --------------------------------------------------------------

class AdamState:
    """First/second moment buffers plus the shared timestep."""

    def __init__(self, params: dict[str, torch.Tensor]):
        self.m = {k: torch.zeros_like(v) for k, v in params.items()}
        self.v = {k: torch.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
              state: AdamState, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NumericsError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    t = state.t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            state.m[name].mul_(beta1).add_(g, alpha=1 - beta1)
            state.v[name].mul_(beta2).addcmul_(g, g, value=1 - beta2)
            m_hat = state.m[name] / (1 - beta1 ** t)
            v_hat = state.v[name] / (1 - beta2 ** t)
            p.add_(-lr * m_hat / (v_hat.sqrt() + eps))


# --- gradient checking ------------------------------------------------------

def grad_check(fn, inputs: list[torch.Tensor], eps: float = 1e-5) -> float:
    """Max relative error between autograd and central finite differences.

    ``fn`` maps the inputs to a scalar. Inputs must be f64 leaf tensors;
    relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    inputs = [x.detach().double().requires_grad_(True) for x in inputs]
    out = fn(*inputs)
    if out.numel() != 1:
        raise ValueError("grad_check expects a scalar-valued function")
    analytic = torch.autograd.grad(out, inputs, allow_unused=False)
    max_err = 0.0
    for x, a in zip(inputs, analytic):
        flat = x.detach().clone().reshape(-1)
        num = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            f_plus = fn(*[flat.reshape(x.shape) if y is x else y.detach() for y in inputs]).item()
            flat[i] = orig - eps
            f_minus = fn(*[flat.reshape(x.shape) if y is x else y.detach() for y in inputs]).item()
            flat[i] = orig
            num[i] = (f_plus - f_minus) / (2 * eps)
        a_flat = a.reshape(-1)
        denom = torch.maximum(a_flat.abs(), num.abs()).clamp_min(1e-8)
        err = ((a_flat - num).abs() / denom).max().item()
        max_err = max(max_err, err)
    return max_err
