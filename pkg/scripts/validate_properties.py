"""
Property and oracle suite for the lattice codec and the two-layer receiver.

Runs the closed-form, optimality and Monte Carlo checks, plus desk-scale
experiment checks on the scheme ordering and the antenna and lattice-scale
trends, and fails if any of them does. Every check is seeded, so a failure
reproduces exactly. quick=True shrinks the property checks and skips the
experiment checks unless they are named explicitly.
"""
import traceback
from dataclasses import replace
from datetime import datetime

import numpy as np

from simulation.channel import ChannelRealization, draw_channel, transmit
from simulation.federated import FEDCPU, ORTHOGONAL_QUANTIZED, SCHEMES, run_experiment
from simulation.lattice import DEFAULT_BLOCK_GENERATOR, Lattice, build_lattice, quantize
from simulation.receiver import (
    CoefficientVector,
    ReceiverPlan,
    aggregate,
    dmse,
    dmse_for_equalizer,
    dmse_via_identity,
    exhaustive_coefficients,
    optimal_b,
    optimal_eta,
    qmse,
    qmse_at_eta,
    select_coefficients,
)
from simulation.transceiver import encode
from utils.config import DESK_CONFIG_PATH, MAX_WORKERS, load_experiment_config
from utils.logging_setup import configure_logging
from utils.metrics_writer import metrics_frame
from utils.rng import DITHER, NOISE, StreamFactory

# Configure logging
logger = configure_logging('validate_properties')

VALIDATE_STREAM = "validate"


def _random_instance(rng, max_devices=8, max_antennas=8):
    K = int(rng.integers(1, max_devices + 1))
    M = int(rng.integers(1, max_antennas + 1))
    channel = draw_channel(M, K, 5.0, rng, float(10 ** rng.uniform(0, 2)))
    a = rng.integers(1, 6, size=K)
    return channel, a


def check_dmse_identity(streams, instances=100):
    """Inversion-lemma and direct forms of the decoding MSE agree (K, M up to 30)."""
    rng = streams.generator(VALIDATE_STREAM, 1)
    worst = 0.0
    for _ in range(instances):
        channel, a = _random_instance(rng, max_devices=30, max_antennas=30)
        H, snr = channel.real_stacked, channel.snr
        sigma_q2 = float(rng.uniform(0.001, 0.1))
        closed = dmse(H, snr, a, sigma_q2)
        direct = dmse_via_identity(H, snr, a, sigma_q2)
        worst = max(worst, abs(closed - direct) / max(abs(closed), 1e-300))
    return worst <= 1e-9, f"max relative gap {worst:.2e}"


def check_equalizer_optimality(streams, instances=100, perturbations=1000):
    """No small perturbation of the MMSE equalizer lowers the decoding MSE; its gradient vanishes."""
    rng = streams.generator(VALIDATE_STREAM, 2)
    worst_gain, worst_grad = -np.inf, 0.0
    for _ in range(instances):
        channel, a = _random_instance(rng)
        H, snr = channel.real_stacked, channel.snr
        sigma_q2 = 31.0 / 6144.0
        b = optimal_b(H, snr, a)
        base = dmse_for_equalizer(H, snr, a, b, sigma_q2)
        gradient = 2.0 * (H @ (H.T @ b - a) + b / snr)
        worst_grad = max(worst_grad, float(np.linalg.norm(gradient)))
        for _ in range(perturbations):
            delta = rng.standard_normal(b.shape)
            delta *= 0.01 / np.linalg.norm(delta)
            worst_gain = max(worst_gain, base - dmse_for_equalizer(H, snr, a, b + delta, sigma_q2))
    return worst_gain <= 1e-10 and worst_grad <= 1e-8, f"max gain {worst_gain:.2e}, max |grad| {worst_grad:.2e}"


def check_eta_optimality(streams, instances=100, grid_points=10_000):
    """A log grid over eta never beats the optimal normalizing factor."""
    rng = streams.generator(VALIDATE_STREAM, 3)
    worst = -np.inf
    for _ in range(instances):
        K = int(rng.integers(1, 10))
        a = rng.integers(1, 6, size=K)
        sigmas = rng.uniform(0.01, 3.0, size=K)
        sigma_q2 = float(rng.uniform(0.0, 0.1))
        eta = optimal_eta(a, sigmas, sigma_q2)
        best = qmse(a, sigmas, sigma_q2)
        grid = qmse_at_eta(a, sigmas, sigma_q2, eta * np.logspace(-3, 3, grid_points))
        worst = max(worst, float(best - grid.min()))
    equal = qmse(np.array([1, 2, 3]), np.ones(3), 0.0)
    return worst <= 1e-12 and equal == 0.0, f"max improvement {worst:.2e}, equal-sigma QMSE {equal}"


def check_cvp_oracle(streams, inputs=1000, window=16):
    """Blockwise quantization matches a brute-force nearest-point search."""
    rng = streams.generator(VALIDATE_STREAM, 4)
    lat = Lattice(np.array(DEFAULT_BLOCK_GENERATOR), 1.0, 2)
    grid = np.stack(np.meshgrid(np.arange(-window, window + 1), np.arange(-window, window + 1)), -1).reshape(-1, 2)
    points = grid @ lat.generator.T
    mismatches = 0
    for _ in range(inputs):
        x = rng.uniform(-1.5, 1.5, size=2)
        nearest = points[np.argmin(np.sum((points - x) ** 2, axis=1))]
        found = quantize(lat, x).coords
        if not np.isclose(np.sum((found - x) ** 2), np.sum((nearest - x) ** 2), rtol=0, atol=1e-12):
            mismatches += 1
    return mismatches == 0, f"{mismatches} mismatches out of {inputs}"


def check_dither_statistics(streams, dimension=1_000_000, power=1.0, samples=1_000_000, tolerance=0.01):
    """Quantization error is zero-mean with the lattice second moment; transmit power stays in budget."""
    rng = streams.generator(VALIDATE_STREAM, 5)
    lat = build_lattice(DEFAULT_BLOCK_GENERATOR, 1.0, dimension, samples, 0)
    sigma_q2 = lat.second_moment
    update = rng.standard_normal(dimension)
    encoded = encode(lat, update, power, rng)
    normalized = (update - encoded.norm.mean) / encoded.norm.std
    error = encoded.lattice_point.coords - normalized - encoded.dither
    mean_ok = abs(error.mean()) <= 4.0 * error.std() / np.sqrt(dimension)
    moment = float(np.mean(error ** 2))
    moment_ok = abs(moment / sigma_q2 - 1.0) <= tolerance
    transmitted = float(np.mean(encoded.signal ** 2))
    return mean_ok and moment_ok and transmitted <= 1.02 * power, (
        f"mean {error.mean():.2e}, second moment {moment:.5g} vs {sigma_q2:.5g}, power {transmitted:.4f}"
    )


def check_dmse_monte_carlo(streams, instances=10, dimension=100_000):
    """Empirical decoding error at the MMSE equalizer matches the closed form."""
    rng = streams.generator(VALIDATE_STREAM, 6)
    lat = build_lattice(DEFAULT_BLOCK_GENERATOR, 1.0, dimension, 200_000, 0)
    sigma_q2, power = lat.second_moment, 1.0
    worst = 0.0
    for i in range(instances):
        channel, a = _random_instance(rng, max_devices=5, max_antennas=5)
        H, snr, K = channel.real_stacked, channel.snr, channel.n_devices
        encoded = [encode(lat, rng.standard_normal(dimension), power, streams.generator(DITHER, k, i)) for k in range(K)]
        Y = transmit(channel, np.stack([e.signal for e in encoded]), streams.generator(NOISE, i))
        b = optimal_b(H, snr, a)
        combination = a @ np.stack([e.lattice_point.coords for e in encoded])
        empirical = float(np.mean((np.sqrt((1.0 + 2.0 * sigma_q2) / power) * (b @ Y) - combination) ** 2))
        predicted = dmse(H, snr, a, sigma_q2)
        worst = max(worst, abs(empirical / predicted - 1.0))
    return worst <= 0.03, f"max relative gap {worst:.3%}"


def check_coefficient_selection(streams, instances=10):
    """Relaxed-and-rounded weights stay within 10% of the exhaustive integer optimum."""
    rng = streams.generator(VALIDATE_STREAM, 7)
    worst, widest = 0.0, 0.0
    all_positive = True
    for K in (2, 3):
        for _ in range(instances):
            snr = 10.0
            H = draw_channel(int(rng.integers(1, 6)), K, 5.0, rng, snr).real_stacked
            chosen = select_coefficients(H, snr)
            all_positive &= bool(np.all(chosen.values >= 1))
            _, best = exhaustive_coefficients(H, snr, max_coeff=8, min_coeff=1)
            _, unconstrained = exhaustive_coefficients(H, snr, max_coeff=8, min_coeff=0)
            worst = max(worst, dmse(H, snr, chosen, 0.0) / best - 1.0)
            widest = max(widest, best / unconstrained - 1.0)
    return worst <= 0.10 and all_positive, (
        f"worst excess {worst:.3%} over the a_k >= 1 optimum "
        f"(that optimum is at most {widest:.1%} above the a_k >= 0 one), all a_k >= 1: {all_positive}"
    )


def clean_channel_trial(lat, updates, a, streams, trial, power=1.0):
    """
    One noiseless round over H = [I; 0] with b = [a; 0].

    Returns:
        Tuple of (aggregate, a-weighted average of the updates)
    """
    K, dimension = updates.shape
    a = CoefficientVector(np.asarray(a))
    channel = ChannelRealization.from_complex(np.eye(K), power, noise_var=0.0)
    encoded = [encode(lat, updates[k], power, streams.generator(DITHER, k, trial)) for k in range(K)]
    sigmas = np.array([e.norm.std for e in encoded])
    b = np.concatenate([a.values.astype(float), np.zeros(K)])
    sigma_q2 = lat.require_second_moment()
    plan = ReceiverPlan(a=a, b=b, eta=optimal_eta(a, sigmas, sigma_q2), dmse=0.0, qmse=qmse(a, sigmas, sigma_q2))
    Y = transmit(channel, np.stack([e.signal for e in encoded]))
    result = aggregate(lat, Y, plan, np.stack([e.dither for e in encoded]), [e.norm for e in encoded], power)
    weights = a.values.astype(float)
    return result, weights @ updates / weights.sum()


def orthogonal_updates(rng, sigmas, means, dimension):
    """Zero-mean, mutually orthogonal rows rescaled to the given std and mean."""
    raw = rng.standard_normal((dimension, len(sigmas)))
    raw -= raw.mean(axis=0)
    q, _ = np.linalg.qr(raw)
    return np.asarray(sigmas)[:, None] * np.sqrt(dimension) * q.T + np.asarray(means)[:, None]


def check_clean_channel(streams, trials=1000, dimension=2000):
    """End-to-end aggregate error on a noiseless channel matches the QMSE prediction."""
    rng = streams.generator(VALIDATE_STREAM, 8)
    lat = build_lattice(DEFAULT_BLOCK_GENERATOR, 1.0, dimension, 200_000, 0)
    sigmas, a = np.array([1.0, 2.0, 3.0]), np.array([1, 1, 1])
    updates = orthogonal_updates(rng, sigmas, [0.5, -1.0, 2.0], dimension)
    errors = []
    for trial in range(trials):
        result, target = clean_channel_trial(lat, updates, a, streams, trial)
        errors.append(np.mean((result - target) ** 2))
    empirical = float(np.mean(errors))
    predicted = qmse(a, sigmas, lat.second_moment)
    return abs(empirical / predicted - 1.0) <= 0.10, f"empirical {empirical:.5g} vs predicted {predicted:.5g}"


def _stderr(values):
    values = np.asarray(values, dtype=float)
    return float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0


def _final_accuracy(cfg, scheme, max_workers):
    """Mean and standard error over seeds of the last-round test accuracy."""
    records = run_experiment(cfg, scheme, cfg.seeds, max_workers)
    final = [r.test_accuracy for r in records if r.round == cfg.rounds]
    return float(np.mean(final)), _stderr(final)


def check_accuracy_ordering(streams, cfg, max_workers=1):
    """
    Final-round accuracy follows ideal >= orthogonal_quantized >= fedcpu >= blind_equal,
    each gap within one standard error, and fedcpu stays within 5 points of
    orthogonal_quantized.
    """
    stats = {scheme: _final_accuracy(cfg, scheme, max_workers) for scheme in SCHEMES}
    ordered = all(
        stats[higher][0] - stats[lower][0] >= -np.hypot(stats[higher][1], stats[lower][1])
        for higher, lower in zip(SCHEMES, SCHEMES[1:])
    )
    shortfall = stats[ORTHOGONAL_QUANTIZED][0] - stats[FEDCPU][0]
    summary = ", ".join(f"{scheme} {mean:.3f}+/-{se:.3f}" for scheme, (mean, se) in stats.items())
    return ordered and shortfall <= 0.05, f"{summary}; fedcpu {100 * shortfall:.1f} points below orthogonal_quantized"


def check_antenna_trend(streams, cfg, max_workers=1, antennas=(2, 5, 10, 20)):
    """FedCPU final accuracy does not drop (beyond one standard error) as antennas are added."""
    stats = [_final_accuracy(replace(cfg, antennas=M), FEDCPU, max_workers) for M in antennas]
    rising = all(
        later[0] - earlier[0] >= -np.hypot(earlier[1], later[1])
        for earlier, later in zip(stats, stats[1:])
    )
    summary = ", ".join(f"M={M}: {mean:.3f}+/-{se:.3f}" for M, (mean, se) in zip(antennas, stats))
    return rising, summary


def check_rho_trend(streams, cfg, max_workers=1, scales=(2.0, 1.0, 0.5, 0.25)):
    """
    Shrinking rho trades decoding for quantization error: the decoding MSE per
    lattice cell grows while the QMSE falls.
    """
    rows = []
    for rho in scales:
        point = replace(cfg, lattice=replace(cfg.lattice, rho=rho))
        frame = metrics_frame(run_experiment(point, FEDCPU, cfg.seeds, max_workers))
        per_seed = frame.groupby('seed')[['dmse_cells', 'qmse']].mean()
        final = frame.loc[frame['round'] == cfg.rounds, 'test_accuracy']
        rows.append({
            'rho': rho,
            'dmse_cells': float(per_seed['dmse_cells'].mean()),
            'qmse': float(per_seed['qmse'].mean()),
            'qmse_se': _stderr(per_seed['qmse']),
            'accuracy': float(final.mean()),
        })

    decoding_rises = all(later['dmse_cells'] > earlier['dmse_cells'] for earlier, later in zip(rows, rows[1:]))
    quantization_falls = rows[-1]['qmse'] < rows[0]['qmse'] and all(
        later['qmse'] - earlier['qmse'] <= np.hypot(earlier['qmse_se'], later['qmse_se'])
        for earlier, later in zip(rows, rows[1:])
    )
    best = max(rows, key=lambda row: row['accuracy'])
    summary = ", ".join(
        f"rho={row['rho']:g}: dmse/cell {row['dmse_cells']:.4g} qmse {row['qmse']:.3g} acc {row['accuracy']:.3f}"
        for row in rows
    )
    return decoding_rises and quantization_falls, f"{summary}; best accuracy at rho={best['rho']:g}"


PROPERTY_CHECKS = {
    'dmse_identity': check_dmse_identity,
    'equalizer_optimality': check_equalizer_optimality,
    'eta_optimality': check_eta_optimality,
    'cvp_oracle': check_cvp_oracle,
    'dither_statistics': check_dither_statistics,
    'dmse_monte_carlo': check_dmse_monte_carlo,
    'coefficient_selection': check_coefficient_selection,
    'clean_channel': check_clean_channel,
}

# Desk-scale runs driven by an experiment config
EXPERIMENT_CHECKS = {
    'accuracy_ordering': check_accuracy_ordering,
    'antenna_trend': check_antenna_trend,
    'rho_trend': check_rho_trend,
}

CHECKS = {**PROPERTY_CHECKS, **EXPERIMENT_CHECKS}

# Reduced sizes for quick=True
QUICK_SIZES = {
    'dmse_identity': {'instances': 20},
    'equalizer_optimality': {'instances': 20, 'perturbations': 200},
    'eta_optimality': {'instances': 20},
    'cvp_oracle': {'inputs': 200},
    'dither_statistics': {'dimension': 200_000, 'samples': 200_000, 'tolerance': 0.03},
    'dmse_monte_carlo': {'instances': 5},
    'clean_channel': {'trials': 100},
}


def main(seed=0, checks=None, quick=False, cfg=None, config_path=DESK_CONFIG_PATH, max_workers=MAX_WORKERS):
    """
    Args:
        seed: Master seed for the property checks
        checks: Optional subset of CHECKS names
        quick: Reduced sizes, and no experiment checks unless named in checks
        cfg: ExperimentConfig for the experiment checks (takes precedence over config_path)
        config_path: TOML file loaded when an experiment check runs and cfg is None
        max_workers: Pool width for the experiment checks

    Returns:
        True when every selected check passes
    """
    try:
        start_time = datetime.now()
        streams = StreamFactory(seed)
        selected = list(checks or (PROPERTY_CHECKS if quick else CHECKS))
        unknown = [name for name in selected if name not in CHECKS]
        if unknown:
            raise ValueError(f"unknown check(s) {unknown}; expected some of {', '.join(CHECKS)}")

        failures = 0
        for name in selected:
            if name in EXPERIMENT_CHECKS:
                if cfg is None:
                    cfg = load_experiment_config(config_path)
                kwargs = {'cfg': cfg, 'max_workers': max_workers}
            else:
                kwargs = QUICK_SIZES.get(name, {}) if quick else {}
            passed, detail = CHECKS[name](streams, **kwargs)
            status = "PASS" if passed else "FAIL"
            print(f"{status} {name}: {detail}")
            if passed:
                logger.info(f"{name} passed ({detail})")
            else:
                failures += 1
                logger.error(f"{name} failed ({detail})")

        duration = datetime.now() - start_time
        logger.info(f"{len(selected) - failures}/{len(selected)} checks passed in {duration.total_seconds():.1f} s")
        return failures == 0

    except Exception as e:
        logger.error(f"Error: {e}")
        logger.error(traceback.format_exc())
        print(f"Error: {e}")
        return False


if __name__ == "__main__":
    main()
