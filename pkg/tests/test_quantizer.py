import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import qp_capped, qp_power_of_base, quantize_exact
from qsgld.errors import DimensionError, RangeError, UsageError
from qsgld.numerics import RngStream
from qsgld.quantizer import (
    C0,
    CompensationConfig,
    ErrorSamples,
    QuantizationSchedule,
    compensation,
    qp_at,
    quantize_scalar,
    quantize_vector,
    quantized_step,
)


def test_quantize_scalar_examples():
    xq, e = quantize_scalar(0.3, 4)
    assert xq == 0.25 and e == pytest.approx(-0.2)
    assert quantize_scalar(0.5, 4) == (0.5, 0.0)
    xq, e = quantize_scalar(-0.3, 4)
    assert xq == -0.25 and e == pytest.approx(0.2)


def test_quantize_scalar_errors():
    with pytest.raises(UsageError):
        quantize_scalar(1.0, 0)
    with pytest.raises(UsageError):
        quantize_scalar(1.0, -2)
    with pytest.raises(RangeError):
        quantize_scalar(1e300, 1e10)


def test_ties_round_down_so_eps_stays_in_range():
    assert quantize_scalar(0.5, 1) == (0.0, -0.5)
    assert quantize_scalar(-1.5, 1) == (-2.0, -0.5)


@given(st.fractions(min_value=-50, max_value=50, max_denominator=10_000),
       st.sampled_from([1, 2, 4, 10, 602]))
def test_quantize_scalar_matches_exact_oracle(x, qp):
    xq, e = quantize_scalar(float(x), qp)
    ref_q, ref_e = quantize_exact(Fraction(float(x)), qp)
    assert xq == float(ref_q)
    assert e == pytest.approx(float(ref_e), abs=1e-9)


def test_quantize_vector_examples():
    q, errs = quantize_vector([0.3, -0.3], 4)
    assert q.values.tolist() == [0.25, -0.25]
    assert np.allclose(errs.epsilon, [-0.2, 0.2])
    assert len(errs) == 2 and [s.step_index for s in errs] == [0, 0]
    q, errs = quantize_vector([0.25, -1.75, 3.0], 4)
    assert np.all(errs.epsilon == 0)
    q, errs = quantize_vector(np.zeros(5), 7.3)
    assert np.all(q.values == 0) and np.all(errs.epsilon == 0)


def test_error_range_and_reconstruction_large_corpus():
    x = RngStream(0).uniform(-10, 10, size=1_000_000)
    for qp in (1.0, 4.0, 602.0):
        q, errs = quantize_vector(x, qp)
        e = errs.epsilon
        assert e.min() >= -0.5 and e.max() < 0.5
        assert np.max(np.abs(q.values - e / qp - x)) <= 1e-12
        # grid membership
        assert np.max(np.abs(q.values * qp - np.round(q.values * qp))) <= 1e-9


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10), st.sampled_from([1.0, 3.0, 724.077]))
def test_idempotent(x, qp):
    q, _ = quantize_vector(x, qp)
    q2, e2 = quantize_vector(q.values, qp)
    assert np.array_equal(q.numer, q2.numer)
    assert np.all(np.abs(e2.epsilon) < 1e-9)


def test_moment_match():
    x = RngStream(1).uniform(-10, 10, size=1_000_000)
    qp = 4.0
    _, errs = quantize_vector(x, qp)
    err = errs.epsilon / qp
    n = err.size
    sd = math.sqrt(C0) / qp
    assert abs(err.mean()) < 3 * sd / math.sqrt(n)
    assert abs(err.var(ddof=1) / (C0 / qp**2) - 1) < 0.02


def test_qp_at_examples():
    s = QuantizationSchedule(eta=1, base=2)
    assert qp_at(s, 100) == 2
    assert qp_at(s, 0) == 1
    c = QuantizationSchedule(kind="capped-sqrt-log", big_c=2.0**-19)
    assert qp_at(c, 0) == 602


def test_qp_at_matches_oracle():
    s = QuantizationSchedule(eta=3, base=2)
    c = QuantizationSchedule(kind="capped-sqrt-log", big_c=1e-3)
    for tau in [0, 1, 5, 53, 54, 100, 10**4, 10**6]:
        assert qp_at(s, tau) == qp_power_of_base(3, 2, tau)
        assert qp_at(c, tau) == qp_capped(1e-3, tau)


def test_capped_clamped_to_one():
    c = QuantizationSchedule(kind="capped-sqrt-log", big_c=100.0)
    assert qp_at(c, 0) == 1


@pytest.mark.parametrize("kind", ["power-of-base", "capped-sqrt-log"])
@pytest.mark.parametrize("B", [1, 7])
def test_schedule_monotone(kind, B):
    s = QuantizationSchedule(eta=2.0, base=2, big_c=1e-4, batches_per_epoch=B, kind=kind)
    prev = 0.0
    for tau in range(0, 1_000_001, 1 if B == 1 else 997):
        q = s.qp_at(tau)
        assert q >= prev
        prev = q


def test_schedule_frozen_within_epoch():
    s = QuantizationSchedule(eta=1.0, base=2, batches_per_epoch=50)
    # unfrozen the exponent would step up at tau = 53
    assert {s.qp_at(t) for t in range(50, 100)} == {s.qp_at(50)}
    assert s.qp_at(50) == 1 and s.qp_at(100) == 2


def test_power_of_base_on_lattice():
    s = QuantizationSchedule(eta=5.0, base=3)
    for tau in [0, 10, 10**3, 10**5, 10**7]:
        k = math.log(s.qp_at(tau) / 5.0, 3)
        assert abs(k - round(k)) < 1e-12 and round(k) >= 0


def test_schedule_validation():
    for bad in (dict(eta=0), dict(base=1), dict(big_c=-1), dict(kind="linear"), dict(batches_per_epoch=0)):
        with pytest.raises(UsageError):
            QuantizationSchedule(**bad)
    with pytest.raises(UsageError):
        QuantizationSchedule().qp_at(-1)


def test_compensation_examples():
    cfg = CompensationConfig(kappa=2.0, tau0=10, lam=0.3)
    h = np.array([3.0, -4.0])
    assert np.linalg.norm(compensation(cfg, 10, h)) == pytest.approx(0.15)
    assert np.linalg.norm(compensation(cfg, 30, h)) < 1e-17 * 0.3
    assert np.all(compensation(cfg, 0, np.zeros(3)) == 0)
    off = CompensationConfig(enabled=False)
    assert np.all(compensation(off, 0, h) == 0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), st.integers(0, 200),
       st.floats(0.1, 5), st.floats(1e-4, 1.0))
def test_compensation_aligned_and_bounded(h, tau, kappa, lam):
    cfg = CompensationConfig(kappa=kappa, tau0=50, lam=lam)
    r = compensation(cfg, tau, h)
    assert float(np.dot(r, h)) >= 0
    assert np.linalg.norm(r) <= lam * (1 + 1e-12)


def test_quantized_step_paralysis():
    qp, lam = 10.0, 0.1
    h = np.full(4, 0.1 / qp / lam)
    step, errs = quantized_step(h, lam, np.zeros(4), qp)
    assert np.all(step.numer == 0)
    assert np.allclose(errs.epsilon, -0.1)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_quantized_step_sign_boost(k):
    qp = 8.0
    lam = k / qp
    h = np.array([0.3, -0.2, 0.05]) / qp / lam * 0.4
    step, _ = quantized_step(h, lam, lam * np.sign(h), qp)
    assert np.allclose(step.values, lam * np.sign(h))


def test_quantized_step_zero_and_mismatch():
    step, _ = quantized_step(np.zeros(3), 0.5, np.zeros(3), 4.0)
    assert np.all(step.numer == 0)
    with pytest.raises(DimensionError):
        quantized_step(np.zeros(3), 0.5, np.zeros(2), 4.0)


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=3), st.sampled_from([4.0, 10.0, 602.0]),
       st.integers(1, 4), st.floats(0.01, 0.4))
def test_paralysis_escape(direction, qp, k, frac):
    h = np.array(direction)
    if not np.any(h):
        return
    lam = k / qp
    # scale so that lam * |h|_inf sits below half a cell
    h = h / np.max(np.abs(h)) * frac * 0.5 / qp / lam
    cfg = CompensationConfig(kappa=2.0, tau0=10**6, lam=lam)
    step, _ = quantized_step(h, lam, compensation(cfg, 0, h), qp)
    assert np.any(step.numer != 0)


def test_regrid_exact_on_nested_grid():
    q, _ = quantize_vector([0.3, -1.7, 2.25], 4.0)
    q2 = q.regrid(8.0)
    assert np.array_equal(q2.values, q.values) and q2.qp == 8.0


def test_error_samples_unbounded_roundtrip():
    sink = ErrorSamples()
    sink.append(quantize_vector([0.3, -0.3], 4, step_index=0)[1])
    sink.append(quantize_vector([0.1], 4, step_index=1)[1])
    steps, qps, eps = sink.arrays()
    assert steps.tolist() == [0, 0, 1] and qps.tolist() == [4, 4, 4]
    assert len(list(sink)) == 3 == len(sink)


def test_error_samples_reservoir_is_capped_and_uniform():
    kept = np.zeros(20)
    for trial in range(300):
        sink = ErrorSamples(limit=10, rng=RngStream(trial))
        for t in range(20):
            sink.append(quantize_vector(np.full(5, 0.01 * t), 1.0, step_index=t)[1])
        steps, _, _ = sink.arrays()
        assert len(sink) == 10 and sink.seen == 100
        np.add.at(kept, steps, 1)
    # 5 of the 100 rows come from each step and 10 are kept: 0.5 per step on average
    assert np.all(np.abs(kept / 300 - 0.5) < 0.2)
    with pytest.raises(UsageError):
        ErrorSamples(limit=5)
