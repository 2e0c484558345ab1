import os
from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from simulation.channel import ChannelRealization
from simulation.datasets import load_dataset, partition_by_class
from simulation.errors import InvalidArgumentError
from simulation.federated import (
    BLIND_EQUAL,
    FEDCPU,
    IDEAL,
    RoundMetrics,
    TrainConfig,
    blind_equal_weight_aggregate,
    fedcpu_aggregate,
    ideal_aggregate,
    local_update,
    orthogonal_quantized_aggregate,
    over_the_air_round,
    run_experiment,
    run_jobs,
    run_seed,
)
from simulation.lattice import DEFAULT_BLOCK_GENERATOR, DEFAULT_SECOND_MOMENT
from simulation.model import ModelParams, ModelShape, accuracy, init_model
from simulation.receiver import CoefficientVector, dmse, dmse_for_equalizer, optimal_b, select_coefficients
from simulation.transceiver import encode, reconstruct
from utils.rng import DATA, DITHER, INIT, PARTITION, SGD, StreamFactory


def small_config(devices=2, antennas=2, rounds=2, fixed_channel_csv=None):
    return SimpleNamespace(
        devices=devices,
        antennas=antennas,
        rounds=rounds,
        dataset_path=None,
        train_samples=160,
        test_samples=60,
        record_wall_time=False,
        lattice=SimpleNamespace(block_generator=DEFAULT_BLOCK_GENERATOR, rho=1.0,
                                second_moment_samples=20000, seed=0),
        channel=SimpleNamespace(fading_rate=5.0, snr=10.0, power=1.0, fixed_channel_csv=fixed_channel_csv),
        training=SimpleNamespace(tau=2, mu=0.05, batch=16, hidden=8, dirichlet_alpha=1.0, classes_per_device=2),
    )


def clean_channel(K, snr=1e10):
    return ChannelRealization.from_complex(np.eye(K), 1.0, snr=snr)


class TestLocalUpdate:

    def test_zero_learning_rate_gives_zero_update(self, rng):
        shape = ModelShape(4, 3, 2)
        model = init_model(shape, rng)
        X, y = rng.standard_normal((20, 4)), rng.integers(0, 2, 20)
        cfg = TrainConfig(tau=3, mu=0.0, batch=5, rounds=1, n_devices=1)
        assert_array_equal(local_update(model, (X, y), cfg, rng), np.zeros(shape.n_params))

    def test_small_shard_samples_with_replacement(self, rng):
        shape = ModelShape(4, 3, 2)
        model = init_model(shape, rng)
        X, y = rng.standard_normal((3, 4)), np.array([0, 1, 0])
        cfg = TrainConfig(tau=2, mu=0.1, batch=10, rounds=1, n_devices=1)
        delta = local_update(model, (X, y), cfg, rng)
        assert delta.shape == (shape.n_params,)
        assert np.any(delta != 0)

    def test_empty_shard(self, rng):
        model = init_model(ModelShape(4, 3, 2), rng)
        cfg = TrainConfig(tau=1, mu=0.1, batch=4, rounds=1, n_devices=1)
        assert local_update(model, (np.zeros((0, 4)), np.zeros(0, dtype=int)), cfg, rng) is None

    @pytest.mark.parametrize("kwargs", [{"mu": -0.1}, {"tau": 0}, {"batch": 0}, {"mu": float("nan")}])
    def test_train_config_validation(self, kwargs):
        values = dict(tau=1, mu=0.1, batch=4, rounds=1, n_devices=1)
        values.update(kwargs)
        with pytest.raises(InvalidArgumentError):
            TrainConfig(**values)


class TestIdealAggregate:

    def test_opposite_updates_cancel(self, rng):
        v = rng.standard_normal(9)
        assert_allclose(ideal_aggregate([v, -v]), np.zeros(9), atol=1e-15)

    def test_identical_updates(self, rng):
        v = rng.standard_normal(9)
        assert_allclose(ideal_aggregate([v] * 5), v)

    def test_empty_input(self):
        with pytest.raises(InvalidArgumentError):
            ideal_aggregate([])


def test_orthogonal_quantized_close_to_ideal_at_fine_scale(lattice_factory, streams, rng):
    updates = [rng.standard_normal(11) for _ in range(3)]
    lat = lattice_factory(12, scale=0.01)
    aggregate = orthogonal_quantized_aggregate(lat, updates, streams, round_index=2)
    assert aggregate.shape == (11,)
    assert_allclose(aggregate, ideal_aggregate(updates), atol=0.01)


def test_orthogonal_quantized_single_device_is_codec_round_trip(lattice_factory, streams, rng):
    update = rng.standard_normal(10)
    lat = lattice_factory(10)
    expected = reconstruct(encode(lat, update, 1.0, streams.generator(DITHER, 0, 3)))
    assert_array_equal(orthogonal_quantized_aggregate(lat, [update], streams, round_index=3), expected)


class TestOverTheAir:

    def test_clean_identity_channel_matches_ideal(self, lattice_factory, streams, rng):
        # equal spreads leave only the lattice error
        v = rng.standard_normal(40)
        updates = [v, rng.permutation(v) + 0.5]
        lat = lattice_factory(40, scale=0.1)
        result = over_the_air_round(lat, clean_channel(2), updates, streams, round_index=1)

        assert str(result.a) == "1 1"
        assert result.decode_success
        ideal = ideal_aggregate(updates)
        assert np.mean((result.update - ideal) ** 2) < 1e-3 * np.mean(ideal ** 2)

    def test_blind_equal_matches_fedcpu_when_selection_picks_ones(self, lattice_factory, streams, rng):
        channel = ChannelRealization.from_complex(0.5 * np.eye(2), 1.0, snr=10.0)
        assert str(select_coefficients(channel.real_stacked, channel.snr)) == "1 1"
        updates = [rng.standard_normal(30) for _ in range(2)]
        lat = lattice_factory(30)

        adaptive = fedcpu_aggregate(lat, channel, updates, streams, round_index=4)
        blind = blind_equal_weight_aggregate(lat, channel, updates, streams, round_index=4)
        assert_array_equal(adaptive, blind)

    def test_output_keeps_model_dimension(self, lattice_factory, streams, rng, random_channel):
        updates = [rng.standard_normal(41) for _ in range(2)]
        lat = lattice_factory(42)
        assert fedcpu_aggregate(lat, random_channel(M=2, K=2), updates, streams).shape == (41,)

    def test_reports_receiver_diagnostics(self, lattice_factory, streams, rng, random_channel):
        updates = [rng.standard_normal(20) for _ in range(3)]
        result = over_the_air_round(lattice_factory(20), random_channel(M=3, K=3), updates, streams)
        assert len(result.a) == 3
        assert result.a.values.min() >= 1
        assert result.eta > 0
        assert result.dmse > 0 and result.qmse >= 0
        assert result.b_norm > 0

    def test_constant_updates_skip_the_round(self, lattice_factory, streams):
        updates = [np.full(6, 0.3), np.full(6, -0.1)]
        lat = lattice_factory(6)
        result = over_the_air_round(lat, clean_channel(2, snr=100.0), updates, streams,
                                    a=CoefficientVector.ones(2))
        assert_array_equal(result.update, np.zeros(6))
        assert result.eta is None and result.qmse is None
        assert result.decode_success is None
        assert result.dmse > 0
        assert result.dmse_cells == pytest.approx(result.dmse / lat.second_moment)

    def test_forced_weights_log_the_general_decoding_mse(self, lattice_factory, streams, rng, random_channel):
        channel = random_channel(M=2, K=3)
        lat = lattice_factory(20)
        updates = [rng.standard_normal(20) for _ in range(3)]
        result = over_the_air_round(lat, channel, updates, streams, a=CoefficientVector.ones(3))

        H, snr = channel.real_stacked, channel.snr
        ones = np.ones(3)
        assert result.dmse == pytest.approx(
            dmse_for_equalizer(H, snr, ones, optimal_b(H, snr, ones), lat.second_moment), rel=1e-12)
        assert result.dmse == pytest.approx(dmse(H, snr, ones, lat.second_moment), rel=1e-9)

    def test_dmse_cells_is_relative_to_the_second_moment(self, lattice_factory, streams, rng, random_channel):
        updates = [rng.standard_normal(20) for _ in range(2)]
        channel = random_channel(M=2, K=2)
        coarse = over_the_air_round(lattice_factory(20, scale=2.0), channel, updates, streams)
        fine = over_the_air_round(lattice_factory(20, scale=0.5), channel, updates, streams)

        assert coarse.dmse_cells == pytest.approx(coarse.dmse / (DEFAULT_SECOND_MOMENT * 4.0))
        # same channel, same weights: the absolute MSE barely moves, the per-cell MSE grows as rho shrinks
        assert str(coarse.a) == str(fine.a)
        assert fine.dmse < coarse.dmse
        assert fine.dmse_cells > coarse.dmse_cells

    def test_update_count_must_match_channel(self, lattice_factory, streams, rng):
        updates = [rng.standard_normal(6) for _ in range(3)]
        with pytest.raises(InvalidArgumentError):
            over_the_air_round(lattice_factory(6), clean_channel(2), updates, streams)

    def test_same_streams_same_aggregate(self, lattice_factory, rng, random_channel):
        updates = [rng.standard_normal(16) for _ in range(2)]
        channel = random_channel(M=2, K=2)
        lat = lattice_factory(16)
        first = fedcpu_aggregate(lat, channel, updates, StreamFactory(3), round_index=5)
        second = fedcpu_aggregate(lat, channel, updates, StreamFactory(3), round_index=5)
        assert_array_equal(first, second)


class TestRunSeed:

    def test_single_device_ideal_is_plain_local_training(self):
        cfg = small_config(devices=1, rounds=3)
        records = run_seed(cfg, IDEAL, seed=5)

        streams = StreamFactory(5)
        dataset = load_dataset(None, cfg.train_samples, cfg.test_samples, streams.generator(DATA))
        partition = partition_by_class(dataset.y_train, 1, streams.generator(PARTITION), 2, 1.0)
        shape = ModelShape(dataset.n_features, cfg.training.hidden, dataset.n_classes)
        model = init_model(shape, streams.generator(INIT))
        train_cfg = TrainConfig(tau=2, mu=0.05, batch=16, rounds=3, n_devices=1)
        expected = []
        for t in range(3):
            delta = local_update(model, partition.shard(dataset, 0), train_cfg, streams.generator(SGD, 0, t))
            model = ModelParams(shape, model.w + delta)
            expected.append(accuracy(model, dataset.X_test, dataset.y_test))

        assert [r.test_accuracy for r in records] == expected
        assert [r.round for r in records] == [1, 2, 3]
        assert all(r.aggregate_error_norm == 0.0 and r.a is None for r in records)

    def test_fedcpu_records(self):
        records = run_seed(small_config(), FEDCPU, seed=0)
        assert len(records) == 2
        for record in records:
            assert record.scheme == FEDCPU
            assert len(record.a.split()) == 2
            assert record.eta is not None and record.dmse > 0
            assert record.dmse_cells > record.dmse
            assert isinstance(record.decode_success, bool)
            assert 0.0 <= record.test_accuracy <= 1.0
            assert record.wall_time is None

    def test_replay_is_identical(self):
        cfg = small_config()
        assert run_seed(cfg, BLIND_EQUAL, seed=3) == run_seed(cfg, BLIND_EQUAL, seed=3)

    def test_wall_time_only_when_requested(self):
        cfg = small_config(rounds=1)
        cfg.record_wall_time = True
        assert run_seed(cfg, IDEAL, seed=0)[0].wall_time >= 0.0

    def test_frozen_model_skips_every_over_the_air_round(self):
        cfg = small_config(rounds=2)
        cfg.training.mu = 0.0
        records = run_seed(cfg, FEDCPU, seed=1)
        assert all(r.eta is None and r.qmse is None and r.decode_success is None for r in records)
        assert all(r.dmse > 0 and r.aggregate_error_norm == 0.0 for r in records)
        assert records[0].test_accuracy == records[1].test_accuracy

    def test_unknown_scheme(self):
        with pytest.raises(InvalidArgumentError):
            run_seed(small_config(), "analog", seed=0)

    def test_fixed_channel_must_match_device_count(self, smoke_config_path):
        csv = os.path.join(os.path.dirname(smoke_config_path), "fixtures", "channel_k2_m1.csv")
        with pytest.raises(InvalidArgumentError):
            run_seed(small_config(devices=3, antennas=1, fixed_channel_csv=csv), FEDCPU, seed=0)


def test_run_experiment_sorts_by_seed_and_round():
    cfg = small_config(rounds=2)
    done = []
    records = run_experiment(cfg, IDEAL, [1, 0], max_workers=2, on_seed_done=done.append)
    assert [(r.seed, r.round) for r in records] == [(0, 1), (0, 2), (1, 1), (1, 2)]
    assert sorted(done) == [0, 1]
    assert records[:2] == run_seed(cfg, IDEAL, seed=0)


def test_run_experiment_needs_seeds():
    with pytest.raises(InvalidArgumentError):
        run_experiment(small_config(), IDEAL, [])


def test_round_metrics_rejects_bad_accuracy():
    with pytest.raises(InvalidArgumentError):
        RoundMetrics(IDEAL, 0, 1, None, None, None, None, None, None, None, 0.0, 1.5)


def test_run_jobs_keeps_job_order():
    cfg = small_config(rounds=1)
    jobs = [(cfg, FEDCPU, 2), (cfg, IDEAL, 0), (cfg, IDEAL, 2)]
    finished = []
    results = run_jobs(jobs, max_workers=3, on_job_done=finished.append)

    assert [(records[0].scheme, records[0].seed) for records in results] == [(FEDCPU, 2), (IDEAL, 0), (IDEAL, 2)]
    assert sorted(finished, key=jobs.index) == jobs
    assert results[1] == run_seed(cfg, IDEAL, seed=0)
