import math

import numpy as np
import pytest

from cvarpg.errors import InputError
from cvarpg.schedules import (
    Box,
    Decision,
    PerturbationSchedule,
    StepSchedule,
    TimescaleStack,
    lambda_max_controller,
    nu_interval,
    project,
    relative_change,
    spsa_delta,
    step,
)

PG_STACK = TimescaleStack((
    StepSchedule(0.1, 1.0),
    StepSchedule(0.05, 0.8),
    StepSchedule(0.01, 0.55),
))
AC_STACK = TimescaleStack(
    (
        StepSchedule(1.0, 1.0),
        StepSchedule(1.0, 0.85),
        StepSchedule(0.5, 0.7),
        StepSchedule(0.5, 0.55),
    ),
    PerturbationSchedule(0.5, 0.1),
)


def test_step_values():
    assert step(StepSchedule(0.1, 1.0), 10) == pytest.approx(0.01)
    assert step(StepSchedule(0.05, 0.8), 1) == 0.05
    with pytest.raises(InputError):
        step(StepSchedule(0.1, 1.0), 0)


def test_schedule_validation():
    with pytest.raises(InputError):
        StepSchedule(0.0, 0.8)
    with pytest.raises(InputError):
        StepSchedule(0.1, 0.5)
    with pytest.raises(InputError):
        StepSchedule(0.1, 1.1)


def test_timescale_separation_ratios():
    # slow/fast ratio shrinks below 0.1 by i = 1e6 and decreases monotonically
    for stack in (PG_STACK, AC_STACK):
        slow, fast = stack.slow_to_fast[0], stack.slow_to_fast[-1]
        ratios = [slow(i) / fast(i) for i in (10, 10**3, 10**6)]
        assert ratios[0] > ratios[1] > ratios[2]
        assert ratios[2] < 0.1
    zeta1, zeta4 = AC_STACK.slow_to_fast[0], AC_STACK.slow_to_fast[-1]
    assert zeta1(10**6) / zeta4(10**6) < 1e-2


def test_timescale_stack_validation():
    with pytest.raises(InputError):
        TimescaleStack((StepSchedule(0.1, 0.8), StepSchedule(0.1, 0.8)))
    with pytest.raises(InputError):
        # perturbation decays too fast relative to the second schedule
        TimescaleStack(
            (StepSchedule(0.1, 1.0), StepSchedule(0.1, 0.8)),
            PerturbationSchedule(0.5, 0.4),
        )


def test_spsa_delta_values():
    sched = PerturbationSchedule(0.5, 0.1)
    assert spsa_delta(1, sched) == 0.5
    assert spsa_delta(1024, sched) == pytest.approx(0.25, abs=1e-12)


def test_spsa_square_summability_tail():
    # spot-check of sum (zeta2/Delta)^2 < inf with the default constants:
    # terms decay like k^{-1.5}, so the increment at k = 1e6 is tiny and
    # the residual tail is bounded by the integral test
    zeta2, delta = AC_STACK.slow_to_fast[1], AC_STACK.perturbation
    term = lambda k: (zeta2(k) / delta(k)) ** 2
    assert term(10**6) < 1e-8
    ks = np.arange(10**5, 10**6, 997)
    assert all(term(int(a)) > term(int(b)) for a, b in zip(ks, ks[1:]))
    exponent = 2.0 * (zeta2.p - delta.p)
    tail_bound = (zeta2.c / delta.c) ** 2 * (10**5) ** (1.0 - exponent) / (exponent - 1.0)
    assert tail_bound < 0.1


def test_projection_examples():
    assert project(np.array([5.0]), Box(0.0, 3.0))[0] == 3.0
    box = Box(np.array([-60.0, -60.0]), np.array([60.0, 60.0]))
    assert np.array_equal(project(np.array([-100.0, 100.0]), box), [-60.0, 60.0])
    interior = np.array([1.5, -2.5])
    assert np.array_equal(project(interior, box), interior)


def test_projection_idempotent_and_nonexpansive():
    rng = np.random.default_rng(3)
    box = Box(np.array([-1.0, 0.0, 2.0]), np.array([1.0, 5.0, 2.5]))
    for _ in range(200):
        x = rng.normal(0, 4, 3)
        y = rng.uniform([-1.0, 0.0, 2.0], [1.0, 5.0, 2.5])
        px = box.project(x)
        assert np.array_equal(box.project(px), px)
        assert np.linalg.norm(px - y) <= np.linalg.norm(x - y) + 1e-12


def test_nu_interval():
    box = nu_interval(4000.0, 0.95)
    assert box.lo == pytest.approx(-80000.0)
    assert box.hi == pytest.approx(80000.0)


def test_controller_double_when_pinned():
    lam_max = 10.0
    history = [lam_max] * 50
    assert lambda_max_controller(history, lam_max, window=50) is Decision.DOUBLE
    history = [lam_max * 0.995] * 50
    assert lambda_max_controller(history, lam_max, margin=0.01, window=50) is Decision.DOUBLE


def test_controller_accept_and_continue():
    lam_max = 10.0
    settled = [5.0 + 1e-7 * np.sin(i) for i in range(60)]
    assert lambda_max_controller(settled, lam_max, window=50) is Decision.ACCEPT
    wandering = [5.0 + np.sin(i) for i in range(60)]
    assert lambda_max_controller(wandering, lam_max, window=50) is Decision.CONTINUE
    # short history is never enough to decide
    assert lambda_max_controller([lam_max] * 10, lam_max, window=50) is Decision.CONTINUE


def test_controller_respects_params_converged_flag():
    settled = [5.0] * 60
    assert (
        lambda_max_controller(settled, 10.0, window=50, params_converged=False)
        is Decision.CONTINUE
    )


def test_controller_doubling_count_is_logarithmic():
    # a run whose multiplier needs lam_required doubles at most
    # ceil(log2(lam_required / lam_max0)) times
    lam_required = 37.0
    lam_max = 1.0
    doublings = 0
    for _ in range(100):
        lam = min(lam_required, lam_max)
        history = [lam] * 50
        decision = lambda_max_controller(history, lam_max, window=50)
        if decision is Decision.DOUBLE:
            lam_max *= 2.0
            doublings += 1
        else:
            break
    assert lam_max >= lam_required
    assert doublings <= math.ceil(math.log2(lam_required / 1.0))


def test_relative_change():
    assert relative_change([1.0], 5) == np.inf
    flat = [np.array([1.0, 2.0])] * 10
    assert relative_change(flat, 5) == 0.0
