"""Clean-sample predictors: an exact Gaussian posterior mean and a small conditional U-Net.

Both expose ``predict(x, sigma, c=None)`` on numpy arrays so the samplers in
:mod:`radardiff.diffusion` can treat them alike.  The network side is torch;
images are ``(B, H, W)`` on the numpy side and ``(B, 1, H, W)`` inside.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion import NoiseSchedule, sample_training_sigma
from .errors import NumericError, ShapeMismatchError

LAMBDA_MSE = 0.8
LAMBDA_PERCEPTUAL = 0.2


class AnalyticGaussianDenoiser:
    """Exact posterior mean for data ``x0 ~ N(mean, var)`` observed as ``x0 + sigma * n``."""

    def __init__(self, mean, var):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = np.asarray(var, dtype=np.float64)
        if np.any(self.var <= 0):
            raise ValueError("variance must be positive")

    def predict(self, x, sigma, c=None):
        x = np.asarray(x, dtype=np.float64)
        s2 = np.asarray(sigma, dtype=np.float64) ** 2
        return (self.var * x + s2 * self.mean) / (self.var + s2)

    def score(self, x, sigma):
        return -(np.asarray(x) - self.mean) / (self.var + sigma**2)


# --- network -----------------------------------------------------------------


def _groups(ch: int) -> int:
    for g in (8, 4, 2, 1):
        if ch % g == 0:
            return g
    return 1


class SinusoidalEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
        args = t[:, None] * freqs[None, :]
        return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb = nn.Linear(emb_dim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class SelfAttention(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(ch), ch)
        self.qkv = nn.Conv2d(ch, 3 * ch, 1)
        self.proj = nn.Conv2d(ch, ch, 1)

    def forward(self, x):
        B, C, H, W = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(B, 3, C, H * W).unbind(1)
        w = torch.softmax(torch.einsum("bci,bcj->bij", q, k) / math.sqrt(C), dim=-1)
        h = torch.einsum("bij,bcj->bci", w, v).reshape(B, C, H, W)
        return x + self.proj(h)


@dataclass
class UNetConfig:
    in_channels: int = 2  # noisy sample + condition
    out_channels: int = 1
    channels: tuple = (8, 16, 32)
    emb_dim: int = 32
    attention: bool = True

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


class TinyUNet(nn.Module):
    """U-Net with one residual block per level and attention at the coarsest level.

    ``len(channels)`` levels, each halving the resolution, so a 64x64 input
    bottoms out at 8x8 with the default three levels.  The noise level is
    fed through a sinusoidal embedding and an MLP to every residual block.
    """

    def __init__(self, config: UNetConfig | None = None):
        super().__init__()
        self.config = cfg = config or UNetConfig()
        ch, e = list(cfg.channels), cfg.emb_dim
        self.embed = nn.Sequential(SinusoidalEmbedding(e), nn.Linear(e, e), nn.SiLU(), nn.Linear(e, e))
        self.stem = nn.Conv2d(cfg.in_channels, ch[0], 3, padding=1)
        self.down = nn.ModuleList()
        prev = ch[0]
        for c in ch:
            self.down.append(ResBlock(prev, c, e))
            prev = c
        self.mid = ResBlock(prev, prev, e)
        self.attn = SelfAttention(prev) if cfg.attention else nn.Identity()
        self.up = nn.ModuleList()
        for c in reversed(ch):
            self.up.append(ResBlock(prev + c, c, e))
            prev = c
        self.out_norm = nn.GroupNorm(_groups(prev), prev)
        self.out = nn.Conv2d(prev, cfg.out_channels, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x, noise_cond):
        emb = self.embed(noise_cond)
        h = self.stem(x)
        skips = []
        for block in self.down:
            h = block(h, emb)
            skips.append(h)
            h = F.avg_pool2d(h, 2)
        h = self.attn(self.mid(h, emb))
        for block in self.up:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
        return self.out(F.silu(self.out_norm(h)))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _to_tensor(x, ref: nn.Module) -> torch.Tensor:
    p = next(ref.parameters())
    return torch.as_tensor(np.asarray(x), dtype=p.dtype, device=p.device)


def _sigma_column(sigma, x: torch.Tensor) -> torch.Tensor:
    s = torch.as_tensor(sigma, dtype=x.dtype, device=x.device)
    if s.ndim == 0:
        s = s.expand(x.shape[0])
    return s.reshape(-1)


class _NumpyPredictMixin:
    """numpy ``predict`` built on a torch ``forward(x, sigma, c)``."""

    def predict(self, x, sigma, c=None):
        x = np.asarray(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
            c = None if c is None else np.asarray(c)[None]
        if c is not None and np.shape(c) != x.shape:
            raise ShapeMismatchError(f"condition shape {np.shape(c)} does not match sample shape {x.shape}")
        with torch.no_grad():
            xt = _to_tensor(x, self)[:, None]
            ct = None if c is None else _to_tensor(c, self)[:, None]
            out = self(xt, sigma, ct)[:, 0].double().cpu().numpy()
        return out[0] if squeeze else out


class EDMDenoiser(_NumpyPredictMixin, nn.Module):
    """Preconditioned clean-sample predictor ``D(x; sigma, c)``.

    ``D = c_skip * x + c_out * F(c_in * x ++ c, c_noise)`` where ``++`` is
    channel concatenation of the (unscaled) radar condition.
    """

    def __init__(self, net: TinyUNet | None = None, sigma_data: float = 0.5):
        super().__init__()
        self.net = net or TinyUNet()
        self.sigma_data = sigma_data

    def forward(self, x, sigma, c=None):
        s = _sigma_column(sigma, x)[:, None, None, None]
        sd = self.sigma_data
        c_skip = sd**2 / (s**2 + sd**2)
        c_out = s * sd / torch.sqrt(s**2 + sd**2)
        c_in = 1 / torch.sqrt(s**2 + sd**2)
        c_noise = torch.log(s.reshape(-1)) / 4
        inp = c_in * x
        if c is not None:
            if c.shape[-2:] != x.shape[-2:]:
                raise ShapeMismatchError("condition and sample differ in spatial shape")
            inp = torch.cat([inp, c], dim=1)
        return c_skip * x + c_out * self.net(inp, c_noise)


# --- perceptual distance -----------------------------------------------------


class RandomFeatureExtractor(nn.Module):
    """Fixed multi-scale random convolution features.

    Each 3x3 filter is drawn from a seeded numpy generator and scaled to
    unit norm; ``tanh`` keeps the first stage injective so distinct inputs
    always get distinct features.
    """

    def __init__(self, channels=(8, 16, 16), seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        cin = 1
        for i, cout in enumerate(channels):
            w = rng.standard_normal((cout, cin, 3, 3))
            w /= np.linalg.norm(w.reshape(cout, -1), axis=1)[:, None, None, None]
            self.register_buffer(f"w{i}", torch.as_tensor(w, dtype=torch.float32))
            cin = cout
        self.n_levels = len(channels)

    def forward(self, x) -> list[torch.Tensor]:
        feats = []
        h = x
        for i in range(self.n_levels):
            if i:
                h = F.avg_pool2d(h, 2)
            w = getattr(self, f"w{i}").to(h.dtype)
            h = torch.tanh(F.conv2d(h, w, padding=1))
            feats.append(h)
        return feats


_DEFAULT_FEATURES: dict = {}


def default_feature_extractor(dtype=torch.float32) -> RandomFeatureExtractor:
    if dtype not in _DEFAULT_FEATURES:
        _DEFAULT_FEATURES[dtype] = RandomFeatureExtractor().to(dtype)
    return _DEFAULT_FEATURES[dtype]


def perceptual_distance(a, b, f_p: RandomFeatureExtractor | None = None) -> torch.Tensor:
    """Squared feature distance, averaged over feature elements and summed over scales.

    ``a`` and ``b`` are ``(B, 1, H, W)`` tensors (numpy arrays are accepted).
    """
    a = torch.as_tensor(a)
    b = torch.as_tensor(b, dtype=a.dtype)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{tuple(a.shape)} vs {tuple(b.shape)}")
    while a.ndim < 4:
        a, b = a[None], b[None]
    f_p = f_p or default_feature_extractor(a.dtype)
    total = a.new_zeros(())
    for fa, fb in zip(f_p(a), f_p(b)):
        total = total + ((fa - fb) ** 2).mean()
    return total


def training_loss(model, x0, c, sigma, noise, weights=(LAMBDA_MSE, LAMBDA_PERCEPTUAL), f_p=None):
    """Weighted MSE plus perceptual loss of the clean-sample prediction.

    Returns ``(total, mse, perceptual)`` as scalar tensors.
    """
    s = sigma.reshape(-1, 1, 1, 1)
    pred = model(x0 + s * noise, sigma, c)
    lm = ((pred - x0) ** 2).mean()
    lam_m, lam_p = weights
    lp = perceptual_distance(pred, x0, f_p) if lam_p else pred.new_zeros(())
    return lam_m * lm + lam_p * lp, lm, lp


def train_step(
    model: EDMDenoiser,
    batch: dict,
    optimizer: torch.optim.Optimizer,
    rng: np.random.Generator,
    schedule: NoiseSchedule = NoiseSchedule(),
    loss_weights=(LAMBDA_MSE, LAMBDA_PERCEPTUAL),
    batch_id: int = 0,
) -> float:
    """One optimisation step on ``batch = {"x0": (B,H,W), "c": (B,H,W)}``.

    Noise levels and noise come from the numpy ``rng`` so the step is
    reproducible independently of torch's global RNG.  Returns the loss
    before the update.
    """
    lam_m, lam_p = loss_weights
    if lam_m < 0 or lam_p < 0:
        raise ValueError("loss weights must be non-negative")
    x0 = _to_tensor(batch["x0"], model)[:, None]
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    c = batch.get("c")
    c = None if c is None else _to_tensor(c, model)[:, None]
    sigma_np = sample_training_sigma(rng, x0.shape[0], schedule)
    sigma = _to_tensor(sigma_np, model)
    noise = _to_tensor(rng.standard_normal(tuple(x0.shape)), model)

    model.train()
    loss, _, _ = training_loss(model, x0, c, sigma, noise, loss_weights)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NumericError(f"non-finite training loss in batch {batch_id}; sigmas={np.array2string(sigma_np, precision=4)}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    model.eval()
    return value


def make_optimizer(model: nn.Module, lr: float = 1e-5) -> torch.optim.Optimizer:
    return torch.optim.RAdam(model.parameters(), lr=lr)
