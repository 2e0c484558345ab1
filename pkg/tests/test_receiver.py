import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from simulation.channel import ChannelRealization, draw_channel, load_channel_csv, transmit
from simulation.errors import DegenerateRoundError, InvalidArgumentError
from simulation.lattice import DEFAULT_SECOND_MOMENT
from simulation.receiver import (
    CoefficientVector,
    ReceiverPlan,
    aggregate,
    decode_combination,
    dmse,
    dmse_for_equalizer,
    dmse_via_identity,
    exhaustive_coefficients,
    optimal_b,
    optimal_eta,
    plan_receiver,
    qmse,
    qmse_at_eta,
    relaxed_coefficients,
    select_coefficients,
)
from simulation.transceiver import encode

SIGMA_Q2 = DEFAULT_SECOND_MOMENT


def random_instance(rng):
    K = int(rng.integers(1, 31))
    M = int(rng.integers(1, 31))
    snr = float(10 ** rng.uniform(0, 2))
    H = draw_channel(M, K, 5.0, rng, snr).real_stacked
    a = rng.integers(1, 8, size=K)
    return H, a, snr


class TestCoefficientVector:

    def test_valid(self):
        a = CoefficientVector([2, 0, 1])
        assert a.total == 3
        assert len(a) == 3
        assert str(a) == "2 0 1"

    @pytest.mark.parametrize("values", [[0, 0], [1, -1], [1.5, 1], []])
    def test_invalid(self, values):
        with pytest.raises(InvalidArgumentError):
            CoefficientVector(np.array(values))

    def test_ones(self):
        assert_array_equal(CoefficientVector.ones(4).values, [1, 1, 1, 1])


class TestDecodingMse:

    def test_optimal_b_matches_direct_solve(self, rng):
        H, a, snr = random_instance(rng)
        expected = np.linalg.solve(np.eye(H.shape[0]) / snr + H @ H.T, H @ a)
        assert_allclose(optimal_b(H, snr, a), expected, rtol=1e-8, atol=1e-12)

    def test_inversion_lemma_identity(self, rng):
        for _ in range(100):
            H, a, snr = random_instance(rng)
            closed = dmse(H, snr, a, SIGMA_Q2)
            assert dmse_via_identity(H, snr, a, SIGMA_Q2) == pytest.approx(closed, rel=1e-9)

    def test_closed_form_equals_objective_at_optimum(self, rng):
        for _ in range(20):
            H, a, snr = random_instance(rng)
            b = optimal_b(H, snr, a)
            assert dmse_for_equalizer(H, snr, a, b, SIGMA_Q2) == pytest.approx(dmse(H, snr, a, SIGMA_Q2), rel=1e-8)

    def test_optimal_b_is_a_minimum(self, rng):
        for _ in range(20):
            H, a, snr = random_instance(rng)
            b = optimal_b(H, snr, a)
            base = dmse_for_equalizer(H, snr, a, b, SIGMA_Q2)
            gradient = 2.0 * (H @ (H.T @ b - a) + b / snr)
            assert np.linalg.norm(gradient) <= 1e-8
            for _ in range(100):
                delta = rng.standard_normal(b.shape)
                delta *= 0.01 / np.linalg.norm(delta)
                assert dmse_for_equalizer(H, snr, a, b + delta, SIGMA_Q2) >= base - 1e-10

    def test_non_increasing_in_snr(self, rng):
        for _ in range(20):
            H, a, _ = random_instance(rng)
            values = [dmse(H, snr, a, SIGMA_Q2) for snr in np.logspace(-1, 3, 15)]
            assert all(later <= earlier * (1 + 1e-12) for earlier, later in zip(values, values[1:]))

    def test_extra_antennas_never_hurt(self, rng):
        for _ in range(20):
            H, a, snr = random_instance(rng)
            extra = draw_channel(int(rng.integers(1, 4)), H.shape[1], 5.0, rng, snr).real_stacked
            more = np.vstack([H, extra])
            assert dmse(more, snr, a, SIGMA_Q2) <= dmse(H, snr, a, SIGMA_Q2) * (1 + 1e-12)

    def test_silent_channel(self):
        a = np.array([1, 3, 2])
        H = np.zeros((4, 3))
        assert dmse(H, 10.0, a, SIGMA_Q2) == pytest.approx((1 + 2 * SIGMA_Q2) * 14.0, rel=1e-12)
        assert_array_equal(optimal_b(H, 10.0, a), np.zeros(4))

    def test_scalar_channel_has_closed_form_equalizer(self):
        h, snr, a = 0.6 - 0.8j, 5.0, np.array([3])
        H = ChannelRealization.from_complex(np.array([[h]]), 1.0, snr=snr).real_stacked
        expected = 3.0 * np.array([h.real, h.imag]) / (1.0 / snr + abs(h) ** 2)
        assert_allclose(optimal_b(H, snr, a), expected, rtol=1e-12)
        assert dmse(H, snr, a, 0.0) == pytest.approx(9.0 / (1.0 + snr * abs(h) ** 2), rel=1e-12)

    def test_push_through_form(self, rng):
        H, a, snr = random_instance(rng)
        expected = H @ np.linalg.solve(H.T @ H + np.eye(H.shape[1]) / snr, a)
        assert_allclose(optimal_b(H, snr, a), expected, rtol=1e-7, atol=1e-12)

    def test_zero_forcing_limit(self):
        gains = np.array([[1.0, 0.5j], [0.2, 1.0], [0.3 - 0.1j, 0.4]])
        H = ChannelRealization.from_complex(gains, 1.0, snr=1e6).real_stacked
        a = np.array([2, 1])
        b = optimal_b(H, 1e6, a)
        assert_allclose(b @ H, a, rtol=1e-4)
        assert_allclose(b, H @ np.linalg.solve(H.T @ H, a), rtol=1e-4, atol=1e-8)

    def test_mismatched_coefficients(self, rng):
        H, _, snr = random_instance(rng)
        with pytest.raises(InvalidArgumentError):
            dmse(H, snr, np.ones(H.shape[1] + 1), SIGMA_Q2)

    def test_rejects_non_finite_snr(self, rng):
        H, a, _ = random_instance(rng)
        with pytest.raises(InvalidArgumentError):
            optimal_b(H, np.inf, a)

    @pytest.mark.slow
    def test_monte_carlo_matches_closed_form(self, lattice_factory, streams, rng):
        lat = lattice_factory(100_000)
        for trial in range(3):
            ch = draw_channel(3, 2, 5.0, rng, 10.0)
            a = np.array([1, 2])
            encoded = [encode(lat, rng.standard_normal(lat.dimension), 1.0, streams.generator("dither", k, trial))
                       for k in range(2)]
            Y = transmit(ch, np.stack([e.signal for e in encoded]), streams.generator("noise", trial))
            b = optimal_b(ch.real_stacked, ch.snr, a)
            combination = a @ np.stack([e.lattice_point.coords for e in encoded])
            empirical = np.mean((np.sqrt(1.0 + 2.0 * SIGMA_Q2) * (b @ Y) - combination) ** 2)
            assert empirical == pytest.approx(dmse(ch.real_stacked, ch.snr, a, SIGMA_Q2), rel=0.03)


class TestQuantizationMse:

    def test_known_value(self):
        a, sigmas = np.ones(3), np.array([1.0, 2.0, 3.0])
        expected = (14.0 - 36.0 / (3.0 * (1.0 + SIGMA_Q2))) / 9.0
        assert qmse(a, sigmas, SIGMA_Q2) == pytest.approx(expected, rel=1e-12)

    def test_equal_sigmas_without_quantization_noise(self):
        assert qmse(np.array([1, 2, 3]), np.ones(3), 0.0) == 0.0

    def test_optimal_eta_closed_form(self):
        a, sigmas = np.array([1.0, 2.0]), np.array([0.5, 1.5])
        expected = (1.0 + SIGMA_Q2) * 5.0 / (0.5 + 4.0 * 1.5)
        assert optimal_eta(a, sigmas, SIGMA_Q2) == pytest.approx(expected)

    def test_general_form_at_optimum(self, rng):
        for _ in range(20):
            K = int(rng.integers(1, 10))
            a, sigmas = rng.integers(1, 6, size=K), rng.uniform(0.1, 3.0, size=K)
            eta = optimal_eta(a, sigmas, SIGMA_Q2)
            assert qmse_at_eta(a, sigmas, SIGMA_Q2, eta) == pytest.approx(qmse(a, sigmas, SIGMA_Q2), rel=1e-9, abs=1e-15)

    def test_grid_search_never_beats_optimum(self, rng):
        for _ in range(20):
            K = int(rng.integers(1, 10))
            a, sigmas = rng.integers(1, 6, size=K), rng.uniform(0.01, 3.0, size=K)
            sigma_q2 = float(rng.uniform(0.0, 0.1))
            eta = optimal_eta(a, sigmas, sigma_q2)
            best = qmse(a, sigmas, sigma_q2)
            grid = qmse_at_eta(a, sigmas, sigma_q2, eta * np.logspace(-3, 3, 10_001))
            assert grid.min() >= best - 1e-12

    def test_scale_invariant_in_coefficients(self, rng):
        for _ in range(20):
            K = int(rng.integers(1, 10))
            a, sigmas = rng.integers(1, 6, size=K), rng.uniform(0.1, 3.0, size=K)
            assert qmse(2 * a, sigmas, SIGMA_Q2) == pytest.approx(qmse(a, sigmas, SIGMA_Q2), rel=1e-9, abs=1e-15)

    def test_general_form_accepts_an_eta_grid(self):
        a, sigmas = np.array([1, 2, 1]), np.array([0.4, 1.0, 2.5])
        etas = np.array([0.1, 0.7, 3.0])
        values = qmse_at_eta(a, sigmas, SIGMA_Q2, etas)
        assert values.shape == (3,)
        assert_allclose(values, [qmse_at_eta(a, sigmas, SIGMA_Q2, float(e)) for e in etas], rtol=1e-12)

    def test_degenerate_round(self):
        with pytest.raises(DegenerateRoundError):
            optimal_eta(np.array([1, 1]), np.zeros(2), SIGMA_Q2)

    def test_zero_weight_devices_do_not_count(self):
        # the only zero-variance device has a_k = 0
        assert optimal_eta(np.array([1, 0]), np.array([2.0, 0.0]), 0.0) == pytest.approx(0.5)

    def test_sigma_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            qmse(np.ones(2), np.ones(3), SIGMA_Q2)


def diagonal_channel(gains, snr=10.0):
    return ChannelRealization.from_complex(np.diag(gains), 1.0, snr=snr)


class TestCoefficientSelection:

    def test_diagonal_gram_selects_all_ones(self):
        ch = diagonal_channel([0.3 + 0.4j, 0.8 - 0.1j])
        chosen = select_coefficients(ch.real_stacked, ch.snr)
        assert_array_equal(chosen.values, [1, 1])
        assert chosen.converged
        best, _ = exhaustive_coefficients(ch.real_stacked, ch.snr, max_coeff=8, min_coeff=1)
        assert_array_equal(best.values, [1, 1])

    def test_fixed_channel_fixture_matches_exhaustive_search(self, fixed_channel_path):
        ch = load_channel_csv(fixed_channel_path, 1.0, snr=10.0)
        chosen = select_coefficients(ch.real_stacked, ch.snr)
        best, _ = exhaustive_coefficients(ch.real_stacked, ch.snr, max_coeff=8, min_coeff=1)
        assert_array_equal(chosen.values, best.values)

    def test_always_at_least_one(self, rng):
        for _ in range(30):
            K = int(rng.integers(1, 6))
            ch = draw_channel(int(rng.integers(1, 6)), K, 5.0, rng, 10.0)
            assert np.all(select_coefficients(ch.real_stacked, ch.snr).values >= 1)

    def test_never_worse_than_all_ones(self, rng):
        for _ in range(30):
            ch = draw_channel(2, 3, 5.0, rng, 10.0)
            chosen = select_coefficients(ch.real_stacked, ch.snr)
            ones = np.ones(3)
            assert dmse(ch.real_stacked, ch.snr, chosen, 0.0) <= dmse(ch.real_stacked, ch.snr, ones, 0.0) + 1e-12

    def test_relaxed_solution_is_feasible(self, rng):
        ch = draw_channel(3, 4, 5.0, rng, 10.0)
        relaxed, converged = relaxed_coefficients(ch.real_stacked, ch.snr)
        assert converged
        assert np.all(relaxed >= 1.0)

    def test_iteration_cap_reports_non_convergence(self, rng):
        ch = draw_channel(3, 4, 5.0, rng, 10.0)
        _, converged = relaxed_coefficients(ch.real_stacked, ch.snr, max_iterations=1, tolerance=0.0)
        assert not converged

    def test_exhaustive_search_space(self, rng):
        ch = draw_channel(1, 2, 5.0, rng, 10.0)
        unconstrained, low = exhaustive_coefficients(ch.real_stacked, ch.snr, max_coeff=4, min_coeff=0)
        constrained, high = exhaustive_coefficients(ch.real_stacked, ch.snr, max_coeff=4, min_coeff=1)
        assert low <= high
        assert np.all(constrained.values >= 1)
        assert unconstrained.total > 0


class TestDecodeAndAggregate:

    def test_clean_channel_decodes_exact_combination(self, lattice_factory, streams, rng):
        lat = lattice_factory(50)
        ch = ChannelRealization.from_complex(np.eye(3), 1.0, noise_var=0.0)
        encoded = [encode(lat, rng.standard_normal(50), 1.0, streams.generator("dither", k, 0)) for k in range(3)]
        a = np.array([1, 2, 1])
        Y = transmit(ch, np.stack([e.signal for e in encoded]))
        b = np.concatenate([a, np.zeros(3)]).astype(float)
        decoded = decode_combination(lat, Y, b, lat.second_moment, 1.0)
        assert_array_equal(decoded.integer_rep, a @ np.stack([e.lattice_point.integer_rep for e in encoded]))

    def test_equalizer_shape_mismatch(self, lattice_factory):
        with pytest.raises(InvalidArgumentError):
            decode_combination(lattice_factory(4), np.zeros((3, 4)), np.ones(2), SIGMA_Q2, 1.0)

    def test_plan_receiver_is_consistent(self, rng):
        ch = draw_channel(4, 3, 5.0, rng, 10.0)
        sigmas = np.array([0.5, 1.0, 2.0])
        plan = plan_receiver(ch.real_stacked, ch.snr, sigmas, SIGMA_Q2)
        assert_allclose(plan.b, optimal_b(ch.real_stacked, ch.snr, plan.a))
        assert plan.eta == pytest.approx(optimal_eta(plan.a, sigmas, SIGMA_Q2))
        assert plan.dmse == pytest.approx(dmse(ch.real_stacked, ch.snr, plan.a, SIGMA_Q2))
        assert plan.qmse == pytest.approx(qmse(plan.a, sigmas, SIGMA_Q2))

    def test_plan_receiver_with_fixed_coefficients(self, rng):
        ch = draw_channel(2, 2, 5.0, rng, 10.0)
        plan = plan_receiver(ch.real_stacked, ch.snr, np.ones(2), SIGMA_Q2, a=[2, 1])
        assert_array_equal(plan.a.values, [2, 1])

    @pytest.mark.slow
    def test_clean_channel_error_matches_qmse(self, lattice_factory, streams, rng):
        dimension, sigmas, means = 2000, np.array([1.0, 2.0, 3.0]), np.array([0.5, -1.0, 2.0])
        lat = lattice_factory(dimension)
        raw = rng.standard_normal((dimension, 3))
        raw -= raw.mean(axis=0)
        q, _ = np.linalg.qr(raw)
        updates = sigmas[:, None] * np.sqrt(dimension) * q.T + means[:, None]
        a = CoefficientVector.ones(3)
        ch = ChannelRealization.from_complex(np.eye(3), 1.0, noise_var=0.0)
        b = np.concatenate([np.ones(3), np.zeros(3)])
        target = updates.mean(axis=0)

        errors = []
        for trial in range(300):
            encoded = [encode(lat, updates[k], 1.0, streams.generator("dither", k, trial)) for k in range(3)]
            observed = np.array([e.norm.std for e in encoded])
            assert_allclose(observed, sigmas)
            plan = ReceiverPlan(a, b, optimal_eta(a, observed, SIGMA_Q2), 0.0, qmse(a, observed, SIGMA_Q2))
            Y = transmit(ch, np.stack([e.signal for e in encoded]))
            result = aggregate(lat, Y, plan, np.stack([e.dither for e in encoded]), [e.norm for e in encoded], 1.0)
            errors.append(np.mean((result - target) ** 2))
        assert np.mean(errors) == pytest.approx(qmse(a, sigmas, SIGMA_Q2), rel=0.10)
