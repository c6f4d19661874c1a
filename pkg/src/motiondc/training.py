"""Contrast-weighted SSIM loss, evaluation metrics, dataset generation and training."""
from __future__ import annotations

from dataclasses import dataclass, field
import copy
import logging
import math

import numpy as np
from scipy import ndimage
import torch
import torch.nn.functional as F

from .acquisition import ScanOrder, coil_combine, coil_project
from .motion import MotionConfig, MotionTrace, sample_motion_trace, simulate_corrupted, synth_phantom
from .network import CascadeNet, NetworkConfig, to_channels, to_complex, zero_filled
from .numerics import resample_rigid
from .partition import DEFAULT_BAND, select_dp, split

log = logging.getLogger(__name__)

VARIANTS = ("zero_filled", "single_branch", "two_branch")


# -- losses and metrics ------------------------------------------------------

@dataclass(frozen=True)
class LossParams:
    alpha: float = 0.3
    beta: float = 1.0
    gamma: float = 0.3
    k1: float = 0.01
    k2: float = 0.03
    window: int = 11
    sigma: float = 1.5
    # training-only: slope of base**a (a < 1) is evaluated at max(base, grad_floor)
    grad_floor: float = 0.0


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _scale_of(y: torch.Tensor) -> torch.Tensor:
    """``max{y}`` per batch item, falling back to ``max|y|`` and then 1 for degenerate targets."""
    flat = y.reshape(y.shape[0], -1)
    top = flat.max(dim=1).values
    top = torch.where(top > 0, top, flat.abs().max(dim=1).values)
    return torch.where(top > 0, top, torch.ones_like(top)).detach()


def _filter(x: torch.Tensor, win: torch.Tensor) -> torch.Tensor:
    pad = win.shape[-1] // 2
    return F.conv2d(F.pad(x[:, None], (pad, pad, pad, pad), mode="reflect"), win)[:, 0]


def _safe_sqrt(v: torch.Tensor) -> torch.Tensor:
    pos = v > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, v, torch.ones_like(v))), torch.zeros_like(v))


class _FlooredSlopePower(torch.autograd.Function):
    """``max(base, 0) ** a`` whose backward uses the slope at ``max(base, floor)``."""

    @staticmethod
    def forward(ctx, base, exponent, floor):
        pos = base > 0
        safe = torch.where(pos, base, torch.ones_like(base))
        ctx.save_for_backward(base)
        ctx.exponent, ctx.floor = exponent, floor
        return torch.where(pos, safe**exponent, torch.zeros_like(base))

    @staticmethod
    def backward(ctx, grad):
        (base,) = ctx.saved_tensors
        pos = base > 0
        at = torch.clamp(torch.where(pos, base, torch.ones_like(base)), min=ctx.floor)
        slope = torch.where(pos, ctx.exponent * at ** (ctx.exponent - 1), torch.zeros_like(base))
        return grad * slope, None, None


def _power(base: torch.Tensor, exponent: float, grad_floor: float = 0.0) -> torch.Tensor:
    if exponent == 1.0:
        return base
    if float(exponent).is_integer():
        return base**exponent
    if grad_floor > 0 and exponent < 1:
        return _FlooredSlopePower.apply(base, exponent, grad_floor)
    pos = base > 0
    safe = torch.where(pos, base, torch.ones_like(base))
    return torch.where(pos, safe**exponent, torch.zeros_like(base))


def ssim_c(x: torch.Tensor, y: torch.Tensor, p: LossParams = LossParams()) -> torch.Tensor:
    """Contrast-weighted SSIM loss of real images, averaged over the batch.

    ``x`` and ``y`` are (B, H, W) or (H, W).  Constants come from ``max{y}``.
    Negative bases under fractional exponents are clamped to zero.
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.dim() == 2:
        x, y = x[None], y[None]
    win = torch.as_tensor(gaussian_window(p.window, p.sigma), dtype=x.dtype)[None, None]
    scale = _scale_of(y)[:, None, None]
    c1 = (p.k1 * scale) ** 2
    c2 = (p.k2 * scale) ** 2

    mu_x, mu_y = _filter(x, win), _filter(y, win)
    var_x = torch.clamp(_filter(x * x, win) - mu_x * mu_x, min=0.0)
    var_y = torch.clamp(_filter(y * y, win) - mu_y * mu_y, min=0.0)
    cov = _filter(x * y, win) - mu_x * mu_y
    sxsy = _safe_sqrt(var_x * var_y)

    lum = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    con = (2 * sxsy + c2) / (var_x + var_y + c2)
    struct = (cov + c2 / 2) / (sxsy + c2 / 2)
    prod = (_power(lum, p.alpha, p.grad_floor) * _power(con, p.beta, p.grad_floor)
            * _power(struct, p.gamma, p.grad_floor))
    return torch.mean(0.5 - 0.5 * prod.mean(dim=(-2, -1)))


def total_loss(x_out: torch.Tensor, y: torch.Tensor, p: LossParams = LossParams()) -> torch.Tensor:
    """SSIM-C on real parts plus SSIM-C on imaginary parts; (B, 2, H, W) or complex inputs."""
    if torch.is_complex(x_out):
        x_out = to_channels(x_out if x_out.dim() == 3 else x_out[None])
    if torch.is_complex(y):
        y = to_channels(y if y.dim() == 3 else y[None])
    if x_out.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x_out.shape)} vs {tuple(y.shape)}")
    return ssim_c(x_out[:, 0], y[:, 0], p) + ssim_c(x_out[:, 1], y[:, 1], p)


def ssim(x: np.ndarray, y: np.ndarray, data_range: float | None = None,
         window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Standard single-scale SSIM of real images (Gaussian window, mirror boundary).

    ``data_range`` defaults to ``max{y}`` with the same fallbacks as the loss.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if data_range is None:
        data_range = y.max()
        if data_range <= 0:
            data_range = np.abs(y).max() or 1.0
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    w = gaussian_window(window, sigma)

    def filt(a):
        return ndimage.correlate(a, w, mode="mirror")

    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x**2
    var_y = filt(y * y) - mu_y**2
    cov = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def nmse(x: np.ndarray, y: np.ndarray) -> float:
    """``||x - y||^2 / ||y||^2``."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    ref = float(np.sum(np.abs(y) ** 2))
    if ref == 0.0:
        raise ValueError("nmse reference is identically zero")
    return float(np.sum(np.abs(x - y) ** 2)) / ref


# -- datasets ----------------------------------------------------------------

@dataclass
class TrainSample:
    seed: int
    trace: MotionTrace
    dp_pose: int
    mask: np.ndarray
    k_cor: np.ndarray
    target: np.ndarray


@dataclass
class Dataset:
    order: ScanOrder
    maps: np.ndarray
    samples: list[TrainSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.maps.shape[1:])


def make_sample(seed: int, order: ScanOrder, maps: np.ndarray, cfg: MotionConfig,
                band: int = DEFAULT_BAND) -> TrainSample:
    h, w = maps.shape[1:]
    phantom = synth_phantom(seed, h, w)
    trace = sample_motion_trace(np.random.default_rng([seed, 1]), order, cfg)
    k_cor = simulate_corrupted(phantom.image, maps, order, trace)
    dp = select_dp(order, trace, band)
    dp_image = resample_rigid(phantom.image, trace.pose_transform(dp.pose_index))
    target = coil_combine(coil_project(dp_image, maps), maps)
    return TrainSample(seed=seed, trace=trace, dp_pose=dp.pose_index, mask=dp.mask,
                       k_cor=k_cor, target=target)


def generate_dataset(seeds, order: ScanOrder, maps: np.ndarray,
                     cfg: MotionConfig = MotionConfig(), band: int = DEFAULT_BAND) -> Dataset:
    """One phantom, motion trace and corrupted acquisition per seed."""
    return Dataset(order=order, maps=maps,
                   samples=[make_sample(int(s), order, maps, cfg, band) for s in seeds])


@dataclass
class Batch:
    x0_dp: torch.Tensor
    x0_rp: torch.Tensor
    mask: torch.Tensor
    k_dp: torch.Tensor
    maps: torch.Tensor
    target: torch.Tensor

    def __getitem__(self, idx) -> "Batch":
        return Batch(self.x0_dp[idx], self.x0_rp[idx], self.mask[idx], self.k_dp[idx],
                     self.maps, self.target[idx])


def to_batch(dataset: Dataset, dtype: torch.dtype = torch.float32) -> Batch:
    """Split every sample into DP/RP parts and build zero-filled branch inputs."""
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    maps = torch.as_tensor(dataset.maps).to(cdtype)[None]
    k_dp, k_rp = zip(*(split(s.k_cor, s.mask) for s in dataset.samples))
    k_dp = torch.as_tensor(np.stack(k_dp)).to(cdtype)
    k_rp = torch.as_tensor(np.stack(k_rp)).to(cdtype)
    mask = torch.as_tensor(np.stack([s.mask for s in dataset.samples])).to(dtype)
    target = torch.as_tensor(np.stack([s.target for s in dataset.samples])).to(cdtype)
    return Batch(x0_dp=zero_filled(k_dp, maps), x0_rp=zero_filled(k_rp, maps), mask=mask,
                 k_dp=k_dp, maps=maps, target=to_channels(target))


def run_model(model: CascadeNet, batch: Batch, variant: str) -> torch.Tensor:
    if variant == "two_branch":
        return model(batch.x0_dp, batch.x0_rp, batch.mask, batch.k_dp, batch.maps)
    if variant == "single_branch":
        return model.forward_single_branch(batch.x0_dp, batch.mask, batch.k_dp, batch.maps)
    if variant == "zero_filled":
        return batch.x0_dp
    raise ValueError(f"unknown variant {variant!r}")


# -- training ----------------------------------------------------------------

@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 4
    seed: int = 0
    variant: str = "two_branch"
    dtype: str = "float32"
    grad_floor: float = 0.05


@dataclass
class TrainResult:
    model: CascadeNet
    history: list[tuple[int, float, float]]
    best_epoch: int


def _torch_dtype(name: str) -> torch.dtype:
    try:
        return {"float32": torch.float32, "float64": torch.float64}[name]
    except KeyError:
        raise ValueError(f"unsupported dtype {name!r}") from None


def evaluate_loss(model: CascadeNet, batch: Batch, variant: str, batch_size: int,
                  p: LossParams = LossParams()) -> float:
    n = batch.x0_dp.shape[0]
    total = 0.0
    with torch.no_grad():
        for i in range(0, n, batch_size):
            sub = batch[i:i + batch_size]
            total += float(total_loss(run_model(model, sub, variant), sub.target, p)) * sub.x0_dp.shape[0]
    return total / n


def train(train_set: Dataset, cfg: NetworkConfig = NetworkConfig(),
          opt: OptimConfig = OptimConfig(), val_set: Dataset | None = None,
          model: CascadeNet | None = None, p: LossParams | None = None) -> TrainResult:
    """Adam on the SSIM-C loss; keeps the weights with the best validation loss.

    Unless ``p`` is given, the loss slope is floored at ``opt.grad_floor``
    (see :class:`LossParams`); validation losses are always exact.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if opt.variant not in ("two_branch", "single_branch"):
        raise ValueError(f"cannot train variant {opt.variant!r}")
    cfg.check_shape(*train_set.shape)
    if p is None:
        p = LossParams(grad_floor=opt.grad_floor)
    exact = LossParams(**{**p.__dict__, "grad_floor": 0.0})
    dtype = _torch_dtype(opt.dtype)
    torch.manual_seed(opt.seed)
    if model is None:
        model = CascadeNet(cfg, seed=opt.seed)
    model = model.to(dtype)
    data = to_batch(train_set, dtype)
    val = to_batch(val_set, dtype) if val_set is not None and len(val_set) else None
    optim = torch.optim.Adam(model.parameters(), lr=opt.lr, betas=(opt.beta1, opt.beta2),
                             eps=opt.eps)
    rng = np.random.default_rng(opt.seed)
    n = len(train_set)
    history = []
    best = (math.inf, copy.deepcopy(model.state_dict()), 0)
    for epoch in range(1, opt.epochs + 1):
        model.train()
        order = rng.permutation(n)
        running = 0.0
        for i in range(0, n, opt.batch_size):
            sub = data[torch.as_tensor(order[i:i + opt.batch_size])]
            loss = total_loss(run_model(model, sub, opt.variant), sub.target, p)
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {i // opt.batch_size}: {float(loss)}")
            optim.zero_grad()
            loss.backward()
            optim.step()
            running += loss.item() * sub.x0_dp.shape[0]
        train_loss = running / n
        model.eval()
        val_loss = evaluate_loss(model, val, opt.variant, opt.batch_size, exact) if val else float("nan")
        history.append((epoch, train_loss, val_loss))
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        score = val_loss if val else train_loss
        if score < best[0]:
            best = (score, copy.deepcopy(model.state_dict()), epoch)
    if opt.epochs:
        model.load_state_dict(best[1])
    return TrainResult(model=model, history=history, best_epoch=best[2])


# -- evaluation --------------------------------------------------------------

@dataclass(frozen=True)
class EvalRow:
    sample_id: int
    variant: str
    nmse: float
    nmse_magnitude: float
    ssim: float


def reconstruct(model: CascadeNet | None, dataset: Dataset, variant: str,
                batch_size: int = 8) -> np.ndarray:
    """Complex outputs (N, H, W) of one variant, computed in float64."""
    if variant != "zero_filled" and model is None:
        raise ValueError(f"variant {variant!r} needs a model")
    if model is not None:
        model = copy.deepcopy(model).to(torch.float64).eval()
    data = to_batch(dataset, torch.float64)
    outs = []
    with torch.no_grad():
        for i in range(0, len(dataset), batch_size):
            outs.append(to_complex(run_model(model, data[i:i + batch_size], variant)).numpy())
    return np.concatenate(outs)


def evaluate(model: CascadeNet | None, dataset: Dataset, variant: str) -> list[EvalRow]:
    """Per-sample NMSE (complex and magnitude) and magnitude SSIM against the DP targets."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if model is not None:
        model.cfg.check_shape(*dataset.shape)
    outs = reconstruct(model, dataset, variant)
    rows = []
    for s, out in zip(dataset.samples, outs):
        mag_t = np.abs(s.target)
        rows.append(EvalRow(sample_id=s.seed, variant=variant, nmse=nmse(out, s.target),
                            nmse_magnitude=nmse(np.abs(out), mag_t),
                            ssim=ssim(np.abs(out), mag_t)))
    return rows


def mean_nmse(rows: list[EvalRow]) -> float:
    return float(np.mean([r.nmse for r in rows]))
