import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import gc_loop, l1_mean_loop, mean_log_loop, ncc_loop
from voxsynth.autograd import Tensor, float64_mode, grad_check
from voxsynth.losses import (
    GC_AXIS_COEFF,
    GC_MAX,
    PROB_EPS,
    LossReport,
    LossWeights,
    adversarial_loss_ct,
    adversarial_loss_mr,
    cycle_loss,
    discriminator_loss,
    gc_loss,
    generator_adv_loss,
    gradient_correlation,
    ncc,
    total_objective,
)


def vol(seed, shape=(4, 5, 6)):
    return np.random.default_rng(seed).normal(size=shape)


def probs(seed, shape=(1, 1, 3, 3, 3)):
    return np.random.default_rng(seed).uniform(0.01, 0.99, shape)


# -- adversarial ---------------------------------------------------------------
def test_adversarial_closed_forms():
    half = Tensor(np.full(8, 0.5))
    assert adversarial_loss_ct(half, half).item() == pytest.approx(2 * math.log(0.5), abs=1e-6)
    assert adversarial_loss_mr(half, half).item() == pytest.approx(-1.3863, abs=1e-4)
    perfect = adversarial_loss_ct(Tensor(np.full(8, 1 - PROB_EPS)), Tensor(np.full(8, PROB_EPS))).item()
    assert abs(perfect) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_adversarial_matches_loop(seed):
    a, b = probs(seed), probs(seed + 100, (1, 1, 2, 3, 4))
    with float64_mode():
        ct = adversarial_loss_ct(Tensor(a), Tensor(b)).item()
        mr = adversarial_loss_mr(Tensor(a), Tensor(b)).item()
    assert abs(ct - mean_log_loop(a, b)) < 1e-5
    assert ct == mr


def test_adversarial_rejects_logits():
    with pytest.raises(ValueError, match="sigmoid"):
        adversarial_loss_ct(Tensor(np.array([1.5])), Tensor(np.array([0.5])))
    with pytest.raises(ValueError):
        generator_adv_loss(Tensor(np.array([-0.1])))


def test_generator_surrogates():
    d = probs(3)
    with float64_mode():
        ns = generator_adv_loss(Tensor(d)).item()
        sat = generator_adv_loss(Tensor(d), saturating=True).item()
        disc = discriminator_loss(Tensor(d), Tensor(d)).item()
    assert ns == pytest.approx(-np.log(d).mean(), abs=1e-12)
    assert sat == pytest.approx(np.log(1 - d).mean(), abs=1e-12)
    assert disc == pytest.approx(-mean_log_loop(d, d), abs=1e-12)


# -- cycle ---------------------------------------------------------------------
def test_cycle_examples():
    a, b = vol(0), vol(1)
    assert cycle_loss(Tensor(a), Tensor(a), Tensor(b), Tensor(b)).item() == 0.0
    with float64_mode():
        off = cycle_loss(Tensor(a), Tensor(a), Tensor(b), Tensor(b + 0.1)).item()
    assert off == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(ValueError):
        cycle_loss(Tensor(a), Tensor(b[:2]), Tensor(b), Tensor(b))


@given(st.integers(0, 10 ** 6))
def test_cycle_loop_and_symmetry(seed):
    r, c, rm, cm = (vol(seed + k, (2, 3, 3)) for k in range(4))
    with float64_mode():
        v = cycle_loss(Tensor(r), Tensor(c), Tensor(rm), Tensor(cm)).item()
        swapped = cycle_loss(Tensor(c), Tensor(r), Tensor(cm), Tensor(rm)).item()
    assert abs(v - (l1_mean_loop(r, c) + l1_mean_loop(rm, cm))) < 1e-6
    assert v == swapped and v > 0


# -- ncc / gradient correlation --------------------------------------------------
def test_ncc_examples():
    a = vol(2)
    with float64_mode():
        assert ncc(Tensor(a), Tensor(a)).item() == pytest.approx(1.0, abs=1e-12)
        assert ncc(Tensor(a), Tensor(-a)).item() == pytest.approx(-1.0, abs=1e-12)
        assert ncc(Tensor(a), Tensor(2 * a + 3)).item() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError, match="degenerate NCC input"):
        ncc(Tensor(a), Tensor(np.ones_like(a)))


@given(st.integers(0, 10 ** 6), st.floats(0.01, 100), st.floats(-100, 100))
def test_ncc_oracle_and_affine_invariance(seed, alpha, beta):
    a, b = vol(seed, (3, 3, 4)), vol(seed + 1, (3, 3, 4))
    with float64_mode():
        v = ncc(Tensor(a), Tensor(b)).item()
        w = ncc(Tensor(a), Tensor(alpha * b + beta)).item()
    assert abs(v - ncc_loop(a, b)) < 1e-6
    assert abs(v - w) < 1e-5
    assert -1 - 1e-12 <= v <= 1 + 1e-12


def test_gc_constant_is_printed_half():
    assert GC_AXIS_COEFF == 0.5 and GC_MAX == 1.5
    a = vol(4)
    with float64_mode():
        assert gradient_correlation(Tensor(a), Tensor(a)).item() == pytest.approx(1.5, abs=1e-12)
        assert gradient_correlation(Tensor(a), Tensor(a + 7.0)).item() == pytest.approx(1.5, abs=1e-12)
    with pytest.raises(ValueError):
        gradient_correlation(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 4, 4))))


@pytest.mark.parametrize("seed", range(5))
def test_gc_matches_composed_oracle(seed):
    a, b = vol(seed, (3, 4, 5)), vol(seed + 50, (3, 4, 5))
    with float64_mode():
        v = gradient_correlation(Tensor(a), Tensor(b)).item()
    assert abs(v - gc_loop(a, b)) < 1e-6


def test_gc_batch_average():
    a, b = vol(5, (2, 1, 3, 3, 3)), vol(6, (2, 1, 3, 3, 3))
    with float64_mode():
        v = gradient_correlation(Tensor(a), Tensor(b)).item()
    assert abs(v - 0.5 * (gc_loop(a[0, 0], b[0, 0]) + gc_loop(a[1, 0], b[1, 0]))) < 1e-9


def test_gc_loss_limits():
    # with the printed coefficient the extremes are 1 - GC_MAX and 1 + GC_MAX;
    # under a normalized GC they would read 0 and 2
    ct, mr = vol(7), vol(8)
    with float64_mode():
        same = gc_loss(Tensor(ct), Tensor(ct), Tensor(mr), Tensor(mr)).item()
        neg = gc_loss(Tensor(ct), Tensor(-ct), Tensor(mr), Tensor(-mr)).item()
    assert same == pytest.approx(1 - GC_MAX, abs=1e-12)
    assert neg == pytest.approx(1 + GC_MAX, abs=1e-12)
    assert (same - (1 - GC_MAX)) / GC_MAX == pytest.approx(0.0, abs=1e-12)
    assert 1 + (neg - 1) / GC_MAX == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gc_loss_matches_oracle(seed):
    ct, fmr, mr, fct = (vol(seed * 10 + k, (3, 3, 4)) for k in range(4))
    with float64_mode():
        v = gc_loss(Tensor(ct), Tensor(fmr), Tensor(mr), Tensor(fct)).item()
    ref = 0.5 * ((1 - gc_loop(ct, fmr)) + (1 - gc_loop(mr, fct)))
    assert abs(v - ref) < 1e-5


# -- total objective -------------------------------------------------------------
def test_total_examples():
    assert total_objective(0, 0, 0, 0).total == 0.0
    assert total_objective(0, 0, 1, 1).total == 11.0
    with pytest.raises(ValueError):
        LossWeights(gamma_gc=0)


@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.floats(0.1, 20), st.floats(0.1, 5))
def test_total_linear_combination(parts, lam, gam):
    r = total_objective(*parts, LossWeights(lam, gam))
    ref = parts[0] + parts[1] + lam * parts[2] + gam * parts[3]
    assert abs(r.total - ref) <= 1e-6 * (1 + abs(ref))


def test_report_csv_roundtrip():
    r = total_objective(-1.25, -1.5, 0.1, 0.3)
    row = r.csv_row(7).split(",")
    assert LossReport.CSV_HEADER.split(",")[0] == "step" and row[0] == "7"
    assert tuple(float(x) for x in row[1:]) == r.values()


# -- differentiability of the composed losses -------------------------------------
@pytest.mark.parametrize("seed", range(5))
def test_composed_losses_gradcheck(seed):
    r = np.random.default_rng(seed)
    s = (1, 1, 3, 3, 3)
    ct, fmr, mr, fct = (r.normal(size=s) for _ in range(4))
    dr, df = r.uniform(0.1, 0.9, s), r.uniform(0.1, 0.9, s)
    assert grad_check(lambda a, b: adversarial_loss_ct(a, b), [dr, df]) < 1e-3
    assert grad_check(lambda d: generator_adv_loss(d), [df]) < 1e-3
    # keep |rec - real| away from the kink of |.|
    assert grad_check(lambda a, b: cycle_loss(Tensor(ct), a, Tensor(mr), b), [ct + 0.5, mr - 0.5]) < 1e-3
    assert grad_check(lambda a, b: ncc(a, b), [ct, fmr]) < 1e-3
    assert grad_check(lambda a, b: gc_loss(Tensor(ct), a, Tensor(mr), b), [fmr, fct]) < 1e-3
