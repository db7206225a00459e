"""CycleGAN objective terms: adversarial, cycle-consistency and gradient-consistency losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, as_tensor, axis_gradient, clamp, log, mean, select, sqrt, tabs, tsum

PROB_EPS = 1e-7

# GC weights the three per-axis NCC terms by 1/2, as printed in the original
# formulation (not 1/3); GC(a, a) is therefore 1.5.
GC_AXIS_COEFF = 0.5
GC_MAX = 3 * GC_AXIS_COEFF

# volume axes (x, y, z) inside (N, C, D, H, W) tensors
_AXES = {"x": 4, "y": 3, "z": 2}


@dataclass(frozen=True)
class LossWeights:
    lambda_cycle: float = 10.0
    gamma_gc: float = 1.0

    def __post_init__(self):
        if not (self.lambda_cycle > 0 and self.gamma_gc > 0):
            raise ValueError("loss weights must be strictly positive")


@dataclass(frozen=True)
class LossReport:
    adv_ct: float
    adv_mr: float
    cycle: float
    gc: float
    total: float

    CSV_HEADER = "step,adv_ct,adv_mr,cycle,gc,total"

    def csv_row(self, step: int) -> str:
        return f"{step},{self.adv_ct!r},{self.adv_mr!r},{self.cycle!r},{self.gc!r},{self.total!r}"

    def values(self) -> tuple[float, ...]:
        return (self.adv_ct, self.adv_mr, self.cycle, self.gc, self.total)


def _check_prob(t: Tensor, what: str) -> None:
    d = t.data
    if d.size == 0 or np.any(d < 0) or np.any(d > 1) or not np.all(np.isfinite(d)):
        raise ValueError(f"{what} must hold probabilities in [0, 1] (missing sigmoid?)")


def _clamped(t: Tensor) -> Tensor:
    return clamp(t, PROB_EPS, 1 - PROB_EPS)


def adversarial_loss_ct(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """``mean(log D(real)) + mean(log(1 - D(fake)))``; the discriminator ascends this."""
    d_real, d_fake = as_tensor(d_real), as_tensor(d_fake)
    _check_prob(d_real, "d_real")
    _check_prob(d_fake, "d_fake")
    return mean(log(_clamped(d_real))) + mean(log(1.0 - _clamped(d_fake)))


def adversarial_loss_mr(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Same objective for the MR discriminator and the CT->MR generator."""
    return adversarial_loss_ct(d_real, d_fake)


def generator_adv_loss(d_fake: Tensor, saturating: bool = False) -> Tensor:
    """Generator side of the adversarial game.

    The default non-saturating form minimizes ``-mean(log D(G(x)))``. With
    ``saturating=True`` the literal minimax term ``mean(log(1 - D(G(x))))`` is
    minimized instead.
    """
    d_fake = as_tensor(d_fake)
    _check_prob(d_fake, "d_fake")
    if saturating:
        return mean(log(1.0 - _clamped(d_fake)))
    return -mean(log(_clamped(d_fake)))


def discriminator_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Negated adversarial objective, so minimizing it ascends the GAN loss."""
    return -adversarial_loss_ct(d_real, d_fake)


def cycle_loss(real_ct: Tensor, rec_ct: Tensor, real_mr: Tensor, rec_mr: Tensor) -> Tensor:
    """Mean absolute voxel error per domain, summed over the two domains."""
    real_ct, rec_ct, real_mr, rec_mr = map(as_tensor, (real_ct, rec_ct, real_mr, rec_mr))
    if real_ct.shape != rec_ct.shape or real_mr.shape != rec_mr.shape:
        raise ValueError("real and recovered volumes must share a shape")
    return mean(tabs(rec_ct - real_ct)) + mean(tabs(rec_mr - real_mr))


def ncc(a: Tensor, b: Tensor) -> Tensor:
    """Normalized cross-correlation of two equally shaped tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError("ncc inputs must share a shape")
    ac = a - mean(a)
    bc = b - mean(b)
    saa = tsum(ac * ac)
    sbb = tsum(bc * bc)
    # NaN falls through so the training loop can report divergence
    if float(saa.data) == 0 or float(sbb.data) == 0:
        raise ValueError("degenerate NCC input (zero variance)")
    return tsum(ac * bc) / (sqrt(saa) * sqrt(sbb))


def _as_5d(t: Tensor) -> Tensor:
    t = as_tensor(t)
    if t.ndim == 3:
        return t.reshape((1, 1) + t.shape)
    if t.ndim != 5:
        raise ValueError("expected a 3D volume or a (N, C, D, H, W) tensor")
    return t


def _gc_single(a: Tensor, b: Tensor) -> Tensor:
    terms = [ncc(axis_gradient(a, _AXES[ax]), axis_gradient(b, _AXES[ax])) for ax in ("x", "y", "z")]
    return GC_AXIS_COEFF * (terms[0] + terms[1] + terms[2])


def gradient_correlation(a: Tensor, b: Tensor) -> Tensor:
    """Sum of per-axis gradient NCCs scaled by ``GC_AXIS_COEFF`` (batch-averaged)."""
    a, b = _as_5d(a), _as_5d(b)
    if a.shape != b.shape:
        raise ValueError("gradient_correlation inputs must share a shape")
    if min(a.shape[2:]) < 2:
        raise ValueError("gradient_correlation needs >= 2 voxels along every axis")
    n = a.shape[0]
    if n == 1:
        return _gc_single(a, b)
    total = _gc_single(select(a, 0), select(b, 0))
    for i in range(1, n):
        total = total + _gc_single(select(a, i), select(b, i))
    return total * (1.0 / n)


def gc_loss(real_ct: Tensor, fake_mr: Tensor, real_mr: Tensor, fake_ct: Tensor) -> Tensor:
    """``0.5 * [(1 - GC(ct, G_ct2mr(ct))) + (1 - GC(mr, G_mr2ct(mr)))]``."""
    gc_ct = gradient_correlation(real_ct, fake_mr)
    gc_mr = gradient_correlation(real_mr, fake_ct)
    return 0.5 * ((1.0 - gc_ct) + (1.0 - gc_mr))


def total_objective(adv_ct: float, adv_mr: float, cycle: float, gc: float,
                    weights: LossWeights = LossWeights()) -> LossReport:
    adv_ct, adv_mr, cycle, gc = float(adv_ct), float(adv_mr), float(cycle), float(gc)
    total = adv_ct + adv_mr + weights.lambda_cycle * cycle + weights.gamma_gc * gc
    return LossReport(adv_ct, adv_mr, cycle, gc, total)
