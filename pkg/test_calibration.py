#!/usr/bin/env python3
"""
Tests for clock-error mitigation: delay retrieval, outlier rejection and
recursive skew estimation
"""

import logging
import os
import sys
from dataclasses import replace

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

import numpy as np
import pytest

from schedloc.calibration import (
    CalibrationSettings,
    apply_delay_retrieval,
    calibrate_batch,
    calibrate_stream,
    init_rls,
    precompute_gains,
    reject_outliers,
    rls_gain,
    rls_update,
    rls_update_with_gain,
    skew_residual,
    stacked_least_squares,
)
from schedloc.config import NS, PPM, SPEED_OF_LIGHT
from schedloc.models import (
    ClockParams,
    NetworkClocks,
    NetworkGeometry,
    NoiseParams,
    ranges_from_geometry,
    split_measurement_sigma,
)
from schedloc.schedule import Schedule, build_g_matrix, build_schedule_matrices
from schedloc.simkit import SimConfig, simulate_batches

ANCHORS = np.array([[0.0, 0.0], [10.33, 0.0], [4.90, 8.66]])
LISTENER = np.array([1.92, 2.42])
SCHEDULE = Schedule((1, 2, 3, 2, 1, 3, 1), 3e-3)
MATRICES = build_schedule_matrices(SCHEDULE, 3)
SKEWS = (10 * PPM, -10 * PPM, 5 * PPM)


def _config(skews=SKEWS, sigma=0.0, delay_err=0.0, n_batches=10, seed=5):
    jitter_var, channel_var = split_measurement_sigma(sigma)
    anchors = tuple(
        ClockParams(skew=skew, jitter_var=jitter_var, delay_err_sigma=delay_err)
        for skew in skews
    )
    return SimConfig(
        geometry=NetworkGeometry(ANCHORS, LISTENER),
        clocks=NetworkClocks(anchors, ClockParams(jitter_var=jitter_var)),
        noise=NoiseParams(channel_var=channel_var),
        schedule=SCHEDULE,
        n_batches=n_batches,
        rng_seed=seed,
    )


def _propagation(cfg):
    return MATRICES.S @ ranges_from_geometry(cfg.geometry).values / SPEED_OF_LIGHT


#########################################################################################
# Delay retrieval and outliers
#########################################################################################


def test_delay_retrieval_and_fallback():
    batch = simulate_batches(_config(delay_err=3.3 * NS, n_batches=1), MATRICES)[0]

    retrieved = apply_delay_retrieval(batch, SCHEDULE.nominal_delay)
    assert retrieved.retrieved
    assert np.array_equal(retrieved.values, batch.delta_actual)

    fallback = apply_delay_retrieval(batch.without_payload(), SCHEDULE.nominal_delay)
    assert not fallback.retrieved
    assert np.array_equal(fallback.values, SCHEDULE.nominal_delays())


def test_retrieval_removes_delay_resolution_error():
    cfg = _config(skews=(0.0, 0.0, 0.0), sigma=0.3 * NS, delay_err=3.3 * NS, n_batches=2000)
    batches = simulate_batches(cfg, MATRICES)
    propagation = _propagation(cfg)

    nominal = np.array([batch.y - SCHEDULE.nominal_delays() - propagation for batch in batches])
    retrieved = np.array(
        [
            batch.y - apply_delay_retrieval(batch, SCHEDULE.nominal_delay).values - propagation
            for batch in batches
        ]
    )
    assert 2.6 * NS <= nominal.std() <= 4.0 * NS
    assert 0.24 * NS <= retrieved.std() <= 0.38 * NS


def test_outlier_threshold():
    batch = simulate_batches(_config(skews=(0.0, 0.0, 0.0), n_batches=1), MATRICES)[0]
    assert not reject_outliers(batch, 100 * NS)
    # Zero is legal and rejects any deviation
    assert reject_outliers(batch, 0.0)

    corrupted = batch.y.copy()
    corrupted[2] += 200 * NS
    assert reject_outliers(replace(batch, y=corrupted), 100 * NS)
    with pytest.raises(ValueError, match="outlier threshold"):
        reject_outliers(batch, -1.0)


def test_outlier_rejection_is_monotone_in_threshold():
    cfg = _config(sigma=3 * NS, delay_err=3.3 * NS, n_batches=50)
    thresholds = np.linspace(0.0, 150 * NS, 61)
    for batch in simulate_batches(cfg, MATRICES):
        rejected = [reject_outliers(batch, threshold) for threshold in thresholds]
        # Once kept, a batch stays kept for every larger threshold
        assert rejected == sorted(rejected, reverse=True)
        assert rejected[0]


#########################################################################################
# Skew residual
#########################################################################################


def test_skew_residual_vanishes_without_skews():
    cfg = _config(skews=(0.0, 0.0, 0.0), n_batches=1)
    batch = simulate_batches(cfg, MATRICES)[0]
    rho = ranges_from_geometry(cfg.geometry)
    d_n = skew_residual(batch, MATRICES, rho, batch.delta_actual)
    assert np.allclose(d_n, 0.0, rtol=0, atol=1e-17)


def test_skew_residual_equals_skew_mapping():
    cfg = _config(delay_err=3.3 * NS, n_batches=3)
    for batch in simulate_batches(cfg, MATRICES):
        d_n = skew_residual(batch, MATRICES, cfg.geometry.anchor_ranges(), batch.delta_actual)
        g_matrix = build_g_matrix(MATRICES, SCHEDULE, batch.delta_actual)
        assert np.allclose(d_n, g_matrix.T @ cfg.theta_true, rtol=1e-9, atol=1e-17)


def test_skew_residual_ignores_listener_position():
    near = _config(delay_err=3.3 * NS, n_batches=5)
    far = replace(near, geometry=NetworkGeometry(ANCHORS, np.array([5.0, 3.0])))
    rho = near.geometry.anchor_ranges()
    for first, second in zip(simulate_batches(near, MATRICES), simulate_batches(far, MATRICES)):
        assert not np.array_equal(first.y, second.y)
        d_near = skew_residual(first, MATRICES, rho, first.delta_actual)
        d_far = skew_residual(second, MATRICES, rho, second.delta_actual)
        assert np.allclose(d_near, d_far, rtol=0, atol=1e-16)


def test_skew_residual_dimension_checks():
    batch = simulate_batches(_config(n_batches=1), MATRICES)[0]
    with pytest.raises(ValueError, match="dimension mismatch"):
        skew_residual(batch, MATRICES, np.ones(4), batch.delta_actual)
    with pytest.raises(ValueError, match="dimension mismatch"):
        skew_residual(batch, MATRICES, np.ones(3), batch.delta_actual[:-1])


def test_calibrate_batch_removes_skew_bias():
    cfg = _config(delay_err=3.3 * NS, n_batches=1)
    batch = simulate_batches(cfg, MATRICES)[0]
    delays = apply_delay_retrieval(batch, SCHEDULE.nominal_delay)
    calibrated = calibrate_batch(batch, MATRICES, cfg.theta_true, delays)
    assert np.allclose(calibrated.y_cal - calibrated.d_vec, _propagation(cfg), rtol=0, atol=1e-15)
    assert calibrated.retrieved
    with pytest.raises(ValueError, match="dimension mismatch"):
        calibrate_batch(batch, MATRICES, np.zeros(2), delays)


#########################################################################################
# Recursive least squares
#########################################################################################


def test_rls_matches_stacked_least_squares():
    rng = np.random.default_rng(8)
    theta = np.array([10e-6, -10e-6, 5e-6])
    state = init_rls(3, noise_scale=1e-9)
    gs, ds = [], []
    for _ in range(50):
        g_matrix = rng.normal(0.0, 1e-3, (3, 3))
        d_n = g_matrix.T @ theta + rng.normal(0.0, 1e-9, 3)
        state = rls_update(state, g_matrix, d_n)
        gs.append(g_matrix)
        ds.append(d_n)

    assert state.n_updates == 50
    assert np.allclose(state.theta_hat, stacked_least_squares(gs, ds), rtol=1e-8, atol=0)


def test_information_gain_equals_covariance_gain():
    rng = np.random.default_rng(9)
    scale = 1e-9
    state = rls_update(init_rls(3, scale), rng.normal(0.0, 1e-3, (3, 3)), np.zeros(3))
    g_matrix = rng.normal(0.0, 1e-3, (3, 3))

    gain, _ = rls_gain(state, g_matrix)
    covariance = state.covariance
    whitened = g_matrix / scale
    expected = covariance @ whitened @ np.linalg.inv(
        np.eye(3) + whitened.T @ covariance @ whitened
    )
    assert np.allclose(gain, expected, rtol=1e-6, atol=1e-6 * np.abs(expected).max())


def test_precomputed_gains_reproduce_online_updates():
    rng = np.random.default_rng(10)
    online = offline = init_rls(3)
    gains = precompute_gains(offline, MATRICES.G, 20)
    for gain, p_inv_next in gains:
        d_n = MATRICES.G.T @ np.array(SKEWS) + rng.normal(0.0, 3e-9, 3)
        online = rls_update(online, MATRICES.G, d_n)
        offline = rls_update_with_gain(offline, MATRICES.G, d_n, gain, p_inv_next)
    assert np.allclose(online.theta_hat, offline.theta_hat, rtol=1e-12, atol=0)
    assert np.allclose(online.p_inv, offline.p_inv, rtol=1e-12, atol=0)


def test_rls_dimension_mismatch():
    state = init_rls(3)
    with pytest.raises(ValueError, match="dimension mismatch"):
        rls_update(state, np.zeros((4, 3)), np.zeros(3))
    with pytest.raises(ValueError, match="dimension mismatch"):
        rls_update(state, MATRICES.G, np.zeros(2))


def test_rls_trace_record():
    state = init_rls(3, initial_covariance=1e6)
    record = state.trace_record()
    assert record[0] == 0
    assert record[1:4] == [0.0, 0.0, 0.0]
    assert abs(record[4] - 3e6) < 1e-3


#########################################################################################
# Calibration pipeline
#########################################################################################


def test_noise_free_stream_recovers_skews():
    cfg = _config(delay_err=3.3 * NS, n_batches=5)
    result = calibrate_stream(simulate_batches(cfg, MATRICES), MATRICES, cfg.geometry.anchor_ranges())
    assert np.allclose(result.theta_hat, cfg.theta_true, rtol=0, atol=1e-3 * PPM)
    assert result.n_fallbacks == 0
    assert len(result.trace) == 6


def test_noisy_stream_converges_below_one_ppm():
    cfg = _config(sigma=3 * NS, delay_err=3.3 * NS, n_batches=500)
    result = calibrate_stream(simulate_batches(cfg, MATRICES), MATRICES, cfg.geometry.anchor_ranges())
    assert np.max(np.abs(result.theta_hat - cfg.theta_true)) < 1 * PPM
    assert result.state.trace_p < result.trace[1][-1]


def test_outliers_never_reach_the_estimator():
    cfg = _config(delay_err=3.3 * NS, n_batches=10)
    batches = simulate_batches(cfg, MATRICES)
    batches[3] = replace(batches[3], y=batches[3].y + 500 * NS)

    result = calibrate_stream(batches, MATRICES, cfg.geometry.anchor_ranges())
    assert [batch.batch_index for batch in result.batches] == list(range(10))
    assert [batch.batch_index for batch in result.rejected] == [3]
    assert result.batches[3].y_cal is None
    assert result.state.n_updates == 9
    assert np.allclose(result.theta_hat, cfg.theta_true, rtol=0, atol=1e-3 * PPM)


def test_delay_retrieval_lowers_skew_estimate_variance():
    checkpoints = (10, 50, 100)
    errors = {True: [], False: []}
    for seed in range(60):
        cfg = _config(sigma=3 * NS, delay_err=3.3 * NS, n_batches=100, seed=seed)
        batches = simulate_batches(cfg, MATRICES)
        for retrieval in (True, False):
            result = calibrate_stream(
                batches,
                MATRICES,
                cfg.geometry.anchor_ranges(),
                CalibrationSettings(retrieval=retrieval),
            )
            history = np.array([row[1:4] for row in result.trace])
            errors[retrieval].append(history[list(checkpoints)] - cfg.theta_true)

    retrieved = np.var(np.array(errors[True]), axis=0).mean(axis=1)
    nominal = np.var(np.array(errors[False]), axis=0).mean(axis=1)
    assert np.all(retrieved < nominal)


def test_all_batches_rejected(caplog):
    cfg = _config(n_batches=4)
    settings = CalibrationSettings(outlier_threshold=0.0)
    with caplog.at_level(logging.WARNING):
        result = calibrate_stream(
            simulate_batches(cfg, MATRICES), MATRICES, cfg.geometry.anchor_ranges(), settings
        )
    assert result.kept == []
    assert len(result.rejected) == 4
    assert result.state.n_updates == 0
    assert "rejected" in caplog.text


def test_missing_payload_falls_back_to_nominal():
    cfg = _config(n_batches=4)
    batches = [batch.without_payload() for batch in simulate_batches(cfg, MATRICES)]
    result = calibrate_stream(batches, MATRICES, cfg.geometry.anchor_ranges())
    assert result.n_fallbacks == 4
    assert all(not batch.retrieved for batch in result.kept)
    assert np.array_equal(result.kept[0].d_vec, SCHEDULE.nominal_delays())


def test_disabled_skew_estimation_keeps_timings():
    cfg = _config(delay_err=3.3 * NS, n_batches=3)
    batches = simulate_batches(cfg, MATRICES)
    settings = CalibrationSettings(rls=False)
    result = calibrate_stream(batches, MATRICES, cfg.geometry.anchor_ranges(), settings)
    assert result.state is None
    assert result.trace == []
    for batch, calibrated in zip(batches, result.batches):
        assert np.array_equal(calibrated.y_cal, batch.y)
        assert np.array_equal(calibrated.d_vec, batch.delta_actual)
    with pytest.raises(ValueError):
        result.theta_hat


def test_final_estimate_recalibrates_early_batches():
    cfg = _config(sigma=3 * NS, delay_err=3.3 * NS, n_batches=20)
    batches = simulate_batches(cfg, MATRICES)
    rho = cfg.geometry.anchor_ranges()
    final = calibrate_stream(batches, MATRICES, rho)
    online = calibrate_stream(batches, MATRICES, rho, CalibrationSettings(apply_final_estimate=False))

    assert np.array_equal(final.batches[-1].y_cal, online.batches[-1].y_cal)
    assert not np.array_equal(final.batches[0].y_cal, online.batches[0].y_cal)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
