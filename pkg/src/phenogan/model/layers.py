"""Building blocks: orthogonal init, spectral normalization, self-attention."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils import parametrize


def orthogonal_init(shape, generator: torch.Generator | None = None, gain: float = 1.0) -> torch.Tensor:
    """Sample a (semi-)orthogonal weight of ``shape``.

    Trailing dimensions are flattened, so the result satisfies
    ``W W^T = I`` (wide) or ``W^T W = I`` (tall) on the 2-D view.
    """
    shape = tuple(shape)
    if len(shape) < 2:
        raise ValueError("orthogonal init needs at least 2 dimensions")
    rows = shape[0]
    cols = int(torch.tensor(shape[1:]).prod())
    flat = torch.randn(max(rows, cols), min(rows, cols), generator=generator, dtype=torch.float64)
    q, r = torch.linalg.qr(flat)
    # sign fix makes Q Haar-distributed
    q = q * torch.sign(torch.diagonal(r)).unsqueeze(0)
    if rows < cols:
        q = q.T
    return (gain * q).reshape(shape).to(torch.get_default_dtype())


def orthogonal_(tensor: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    with torch.no_grad():
        tensor.copy_(orthogonal_init(tensor.shape, generator).to(tensor.dtype))
    return tensor


def _as_matrix(weight: torch.Tensor, dim: int) -> torch.Tensor:
    if dim != 0:
        perm = [dim] + [d for d in range(weight.dim()) if d != dim]
        weight = weight.permute(*perm)
    return weight.reshape(weight.shape[0], -1)


def _power_step(w: torch.Tensor, u: torch.Tensor, eps: float = 1e-12):
    v = F.normalize(w.T @ u, dim=0, eps=eps)
    u = F.normalize(w @ v, dim=0, eps=eps)
    return u, v


def spectral_normalize(weight: torch.Tensor, n_iter: int = 50, dim: int = 0,
                       generator: torch.Generator | None = None) -> torch.Tensor:
    """Divide ``weight`` by a power-iteration estimate of its top singular value."""
    w = _as_matrix(weight.detach(), dim)
    if not torch.any(w != 0):
        raise ValueError("cannot spectrally normalize an all-zero weight")
    u = F.normalize(torch.randn(w.shape[0], generator=generator, dtype=w.dtype), dim=0)
    for _ in range(n_iter):
        u, v = _power_step(w, u)
    sigma = torch.dot(u, w @ v)
    return weight / sigma


class SpectralNorm(nn.Module):
    """Weight parametrization ``W / sigma(W)`` with a persistent singular-vector estimate.

    One power-iteration step runs per forward pass in training mode; in eval
    mode the stored vectors are reused so inference is side-effect free.
    """

    def __init__(self, weight: torch.Tensor, dim: int = 0, warmup: int = 30):
        super().__init__()
        self.dim = dim
        w = _as_matrix(weight.detach(), dim)
        u = F.normalize(torch.randn(w.shape[0], dtype=w.dtype), dim=0)
        for _ in range(warmup):
            u, v = _power_step(w, u)
        self.register_buffer("_u", u)
        self.register_buffer("_v", v)

    def forward(self, weight: torch.Tensor) -> torch.Tensor:
        w = _as_matrix(weight, self.dim)
        if self.training:
            with torch.no_grad():
                u, v = _power_step(w, self._u)
                self._u.copy_(u)
                self._v.copy_(v)
        # clones keep earlier graphs valid when the buffers are updated in place
        sigma = torch.dot(self._u.clone(), w @ self._v.clone())
        return weight / sigma


def spectral_norm(module: nn.Module, name: str = "weight") -> nn.Module:
    """Attach :class:`SpectralNorm` to ``module.<name>``."""
    dim = 1 if isinstance(module, nn.ConvTranspose2d) else 0
    parametrize.register_parametrization(module, name, SpectralNorm(getattr(module, name), dim=dim))
    return module


def sn_layer(module: nn.Module) -> nn.Module:
    """Orthogonally initialise a conv/linear layer, zero its bias, then spectrally normalize it."""
    orthogonal_(module.weight)
    if getattr(module, "bias", None) is not None:
        nn.init.zeros_(module.bias)
    return spectral_norm(module)


def spectral_sigma(module: nn.Module) -> float:
    """Exact top singular value of the effective (normalized) weight, via SVD."""
    dim = 1 if isinstance(module, nn.ConvTranspose2d) else 0
    with torch.no_grad():
        w = _as_matrix(module.weight, dim)
        return float(torch.linalg.matrix_norm(w.double(), ord=2))


class SelfAttention(nn.Module):
    """Residual self-attention over spatial positions, gated by a scalar ``gamma``."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"channels ({channels}) must be divisible by reduction ({reduction})")
        inner = channels // reduction
        self.query = sn_layer(nn.Conv2d(channels, inner, 1, bias=False))
        self.key = sn_layer(nn.Conv2d(channels, inner, 1, bias=False))
        self.value = sn_layer(nn.Conv2d(channels, channels, 1, bias=False))
        self.gamma = nn.Parameter(torch.zeros(1))

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Attention weights ``(B, N, N)``; row ``i`` is the distribution for query position ``i``."""
        b, _, h, w = x.shape
        q = self.query(x).view(b, -1, h * w)
        k = self.key(x).view(b, -1, h * w)
        return torch.softmax(torch.bmm(q.transpose(1, 2), k), dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        attn = self.attention(x)
        v = self.value(x).view(b, c, h * w)
        out = torch.bmm(v, attn.transpose(1, 2)).view(b, c, h, w)
        return x + self.gamma * out
