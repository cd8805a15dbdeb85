#!/usr/bin/env python3
"""
Tests for the measurement simulator: scheduled batches and two-way ranging
"""

import os
import sys
from dataclasses import replace

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

import numpy as np
import pytest

from schedloc.config import NS, PPM, SPEED_OF_LIGHT
from schedloc.models import (
    ClockParams,
    NetworkClocks,
    NetworkGeometry,
    NoiseParams,
    ranges_from_geometry,
    split_measurement_sigma,
)
from schedloc.schedule import Schedule, build_schedule_matrices
from schedloc.simkit import (
    MeasurementBatch,
    SimConfig,
    batch_rng,
    draw_clocks,
    fit_line,
    simulate_batch,
    simulate_batches,
    simulate_twr,
    twr_skew_sweep,
)

ANCHORS = np.array([[0.0, 0.0], [10.33, 0.0], [4.90, 8.66]])
LISTENER = np.array([1.92, 2.42])
SCHEDULE = Schedule((1, 2, 3, 2, 1, 3, 1), 3e-3)


def _config(skews=(0.0, 0.0, 0.0), listener_skew=0.0, sigma=0.0, delay_err=0.0, n_batches=1):
    jitter_var, channel_var = split_measurement_sigma(sigma)
    anchors = tuple(
        ClockParams(skew=skew, jitter_var=jitter_var, delay_err_sigma=delay_err)
        for skew in skews
    )
    clocks = NetworkClocks(anchors, ClockParams(skew=listener_skew, jitter_var=jitter_var))
    return SimConfig(
        geometry=NetworkGeometry(ANCHORS, LISTENER),
        clocks=clocks,
        noise=NoiseParams(channel_var=channel_var),
        schedule=SCHEDULE,
        n_batches=n_batches,
        rng_seed=11,
    )


def test_noise_free_batch_matches_closed_form():
    matrices = build_schedule_matrices(SCHEDULE, 3)
    holders = np.array(SCHEDULE.delay_holders) - 1
    draws = np.random.default_rng(21)
    for draw in range(100):
        skews = draws.uniform(-20 * PPM, 20 * PPM, 3)
        listener_skew = draws.uniform(-20 * PPM, 20 * PPM)
        cfg = _config(skews=tuple(skews), listener_skew=listener_skew, delay_err=3.3 * NS)
        cfg = replace(
            cfg,
            geometry=NetworkGeometry(ANCHORS, draws.uniform([0.5, 0.5], [9.0, 7.0])),
        )
        batch = simulate_batch(cfg, matrices, batch_rng(draw, 0))

        propagation = matrices.S @ ranges_from_geometry(cfg.geometry).values / SPEED_OF_LIGHT
        nominal = SCHEDULE.nominal_delays()
        theta = cfg.theta_true
        eps = batch.delta_actual - nominal
        expected = (
            (1 + listener_skew) * propagation
            + nominal * (1 + theta[holders])
            + (1 + theta[holders]) * eps
        )
        assert np.allclose(batch.y, expected, rtol=0, atol=1e-15)
        assert np.array_equal(batch.truth.theta_true, theta)


def test_skew_bias_of_the_example_schedule():
    cfg = _config(skews=(10 * PPM, -5 * PPM, 3 * PPM))
    matrices = build_schedule_matrices(SCHEDULE, 3)
    batch = simulate_batch(cfg, matrices, batch_rng(cfg.rng_seed, 0))

    propagation = matrices.S @ ranges_from_geometry(cfg.geometry).values / SPEED_OF_LIGHT
    theta = cfg.theta_true
    skew_bias = batch.y - propagation - SCHEDULE.nominal_delays()
    expected = SCHEDULE.nominal_delay * theta[[1, 2, 1, 0, 2, 0]]
    assert np.allclose(skew_bias, expected, rtol=0, atol=1e-15)
    assert np.array_equal(batch.delta_actual, SCHEDULE.nominal_delays())


def test_delay_errors_are_carried_as_payload():
    cfg = _config(skews=(10 * PPM, -5 * PPM, 3 * PPM), delay_err=3.3 * NS)
    matrices = build_schedule_matrices(SCHEDULE, 3)
    batch = simulate_batch(cfg, matrices, batch_rng(cfg.rng_seed, 3), 3)

    propagation = matrices.S @ ranges_from_geometry(cfg.geometry).values / SPEED_OF_LIGHT
    holders = np.array(SCHEDULE.delay_holders) - 1
    skew_bias = cfg.theta_true[holders] * batch.delta_actual

    assert batch.batch_index == 3
    assert not np.array_equal(batch.delta_actual, SCHEDULE.nominal_delays())
    assert np.allclose(batch.y - batch.delta_actual, propagation + skew_bias, rtol=0, atol=1e-15)


def test_batches_are_reproducible_by_seed():
    cfg = _config(sigma=3 * NS, delay_err=3.3 * NS, n_batches=5)
    first = simulate_batches(cfg)
    second = simulate_batches(cfg)
    for one, other in zip(first, second):
        assert np.array_equal(one.y, other.y)
        assert np.array_equal(one.delta_actual, other.delta_actual)
    assert not np.array_equal(first[0].y, first[1].y)

    # Any slice of the stream regenerates on its own
    tail = simulate_batches(cfg, first_index=3)
    assert np.array_equal(tail[0].y, first[3].y)


def test_measurement_noise_statistics():
    cfg = _config(sigma=3 * NS, n_batches=2000)
    matrices = build_schedule_matrices(SCHEDULE, 3)
    batches = simulate_batches(cfg, matrices)

    propagation = matrices.S @ ranges_from_geometry(cfg.geometry).values / SPEED_OF_LIGHT
    errors = np.array([batch.y - batch.delta_actual - propagation for batch in batches])
    assert abs(errors.std() - 3 * NS) < 0.1 * 3 * NS
    assert abs(errors.mean()) < 0.2 * NS


def test_twr_identity_without_skews():
    clocks = ClockParams()
    rng = np.random.default_rng(0)
    rho12, rho13, rho23 = 10.0, 9.99978, 9.99978
    delta = 3e-3
    observation = simulate_twr(rho12, clocks, clocks, clocks, rho13, rho23, delta, rng)
    round_trip = 2 * rho12 / SPEED_OF_LIGHT

    assert abs(observation.y1 - delta - round_trip) < 1e-15
    assert abs(observation.y2 - delta - round_trip) < 1e-15
    assert abs(observation.y3_12 + observation.y3_21 - 2 * delta - round_trip) < 1e-15


def test_twr_skew_error_is_linear_in_delay():
    clocks = (ClockParams(skew=10 * PPM), ClockParams(skew=-5 * PPM), ClockParams(skew=3 * PPM))
    deltas = np.linspace(3e-3, 20e-3, 18)
    errors = twr_skew_sweep(10.0, 9.99978, 9.99978, *clocks, deltas)
    fit = fit_line(deltas, errors)

    expected_slope = 2 * 3 * PPM - 10 * PPM + 5 * PPM
    assert fit.r_squared > 0.999
    assert abs(fit.slope - expected_slope) < 0.01 * abs(expected_slope)


def test_twr_validation():
    rng = np.random.default_rng(0)
    clocks = ClockParams()
    with pytest.raises(ValueError):
        simulate_twr(0.0, clocks, clocks, clocks, 1.0, 1.0, 3e-3, rng)
    with pytest.raises(ValueError):
        simulate_twr(1.0, clocks, clocks, clocks, 1.0, 1.0, 0.0, rng)


def test_draw_clocks_respects_span():
    clocks = draw_clocks(50, 5 * PPM, np.random.default_rng(1), jitter_var=1e-18)
    skews = np.array([clock.skew for clock in clocks.anchors])
    assert np.all(np.abs(skews) <= 5 * PPM)
    assert np.all(np.abs(clocks.relative_skews) <= 10 * PPM)
    assert clocks.listener.jitter_var == 1e-18


def test_batch_and_config_validation():
    with pytest.raises(ValueError):
        MeasurementBatch(np.zeros(5), None, 0, SCHEDULE)
    with pytest.raises(ValueError, match="positive"):
        MeasurementBatch(np.zeros(6), np.zeros(6), 0, SCHEDULE)
    with pytest.raises(ValueError, match="never transmit"):
        SimConfig(
            geometry=NetworkGeometry(ANCHORS, LISTENER),
            clocks=_config().clocks,
            noise=NoiseParams(),
            schedule=Schedule((1, 2, 1, 2), 3e-3),
        )


def test_mismatched_matrices_are_rejected():
    cfg = _config()
    other = build_schedule_matrices(Schedule((1, 2, 3, 2, 1, 3), 3e-3), 3)
    with pytest.raises(ValueError, match="invalid schedule"):
        simulate_batch(cfg, other, batch_rng(0, 0))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
