"""
Federated learning engine: local SGD, the four aggregation schemes and the
round loop that ties them to the channel and receiver.

Schemes:
    ideal                 error-free FedAvg mean
    orthogonal_quantized  per-device dithered lattice quantization, no channel
    fedcpu                over-the-air aggregation with selected integer weights
    blind_equal           same pipeline with the weights forced to all ones
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from simulation.channel import draw_channel, load_channel_csv, transmit
from simulation.datasets import load_dataset, partition_by_class
from simulation.errors import DegenerateRoundError, InvalidArgumentError
from simulation.lattice import build_lattice, pad_vector
from simulation.model import ModelParams, ModelShape, accuracy, gradient, init_model
from simulation.receiver import (
    CoefficientVector,
    ReceiverPlan,
    decode_combination,
    dmse,
    dmse_for_equalizer,
    optimal_b,
    optimal_eta,
    qmse,
    reconstruct_aggregate,
    select_coefficients,
)
from simulation.transceiver import encode, reconstruct
from utils.rng import CHANNEL, DATA, DITHER, INIT, NOISE, PARTITION, SGD, StreamFactory

logger = logging.getLogger(__name__)

IDEAL = "ideal"
ORTHOGONAL_QUANTIZED = "orthogonal_quantized"
FEDCPU = "fedcpu"
BLIND_EQUAL = "blind_equal"
SCHEMES = (IDEAL, ORTHOGONAL_QUANTIZED, FEDCPU, BLIND_EQUAL)


@dataclass(frozen=True)
class TrainConfig:
    """
    Local training parameters.

    Attributes:
        tau: SGD steps per round
        mu: Learning rate (0 freezes the model)
        batch: Mini-batch size B
        rounds: Communication rounds T
        n_devices: K
    """
    tau: int
    mu: float
    batch: int
    rounds: int
    n_devices: int

    def __post_init__(self):
        for name in ("tau", "batch", "rounds", "n_devices"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)}")
        if not np.isfinite(self.mu) or self.mu < 0:
            raise InvalidArgumentError(f"mu must be non-negative, got {self.mu}")

    @classmethod
    def from_experiment(cls, cfg):
        training = cfg.training
        return cls(training.tau, training.mu, training.batch, cfg.rounds, cfg.devices)


@dataclass(frozen=True, eq=False)
class AggregationResult:
    """
    Aggregated update of one round plus the receiver diagnostics.

    Fields that do not apply to a scheme stay None. dmse_cells is the
    decoding MSE in units of the lattice second moment.
    """
    update: np.ndarray
    a: CoefficientVector = None
    b_norm: float = None
    eta: float = None
    dmse: float = None
    dmse_cells: float = None
    qmse: float = None
    decode_success: bool = None


@dataclass(frozen=True)
class RoundMetrics:
    """One record per (scheme, seed, round)."""
    scheme: str
    seed: int
    round: int
    a: str
    b_norm: float
    eta: float
    dmse: float
    dmse_cells: float
    qmse: float
    decode_success: bool
    aggregate_error_norm: float
    test_accuracy: float
    wall_time: float = None

    def __post_init__(self):
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise InvalidArgumentError(f"test accuracy must be in [0, 1], got {self.test_accuracy}")


def local_update(model, data, cfg, rng):
    """
    Run tau mini-batch SGD steps on one device shard.

    Args:
        model: Current global ModelParams
        data: Tuple of (X, y) for the device
        cfg: TrainConfig
        rng: The device's SGD stream for this round

    Returns:
        Model update w_end - w_start, or None for an empty shard
    """
    X, y = data
    n = X.shape[0]
    if n == 0:
        logger.warning("Empty device shard; skipping its local update")
        return None

    w = model.w.copy()
    for _ in range(cfg.tau):
        batch = rng.choice(n, size=cfg.batch, replace=n < cfg.batch)
        w -= cfg.mu * gradient(model.shape, w, X[batch], y[batch])
    return w - model.w


def _check_updates(updates):
    if len(updates) == 0:
        raise InvalidArgumentError("no model updates to aggregate")
    stacked = np.stack([np.asarray(u, dtype=float) for u in updates])
    if stacked.ndim != 2:
        raise InvalidArgumentError("model updates must be vectors of equal length")
    return stacked


def ideal_aggregate(updates):
    """Error-free FedAvg: the arithmetic mean of the updates."""
    return np.mean(_check_updates(updates), axis=0)


def orthogonal_quantized_aggregate(lat, updates, streams, round_index=0):
    """
    Quantize every update on its own (normalize, dither, quantize, remove the
    dither, de-normalize) and average the reconstructions.

    Args:
        lat: Lattice sized for the padded model dimension
        updates: Per-device updates
        streams: StreamFactory providing the dither streams
        round_index: Round counter for the dither streams

    Returns:
        Aggregated update with the unpadded length
    """
    stacked = _check_updates(updates)
    model_dim = stacked.shape[1]
    reconstructions = []
    for k, update in enumerate(stacked):
        encoded = encode(lat, pad_vector(update, lat.dimension), 1.0, streams.generator(DITHER, k, round_index))
        reconstructions.append(reconstruct(encoded)[:model_dim])
    return np.mean(reconstructions, axis=0)


def over_the_air_round(lat, channel, updates, streams, round_index=0, a=None):
    """
    One FedCPU round: encode on every device, superimpose over the channel,
    decode the integer combination and reconstruct the aggregate.

    Args:
        lat: Lattice sized for the padded model dimension
        channel: ChannelRealization with finite SNR
        updates: Per-device updates (length K)
        streams: StreamFactory (dither and noise streams)
        round_index: Round counter for the streams
        a: Fixed coefficient vector; selected from the channel when None

    Returns:
        AggregationResult. When every weighted update is constant the round
        is skipped: the update is zero and eta, qmse and decode_success stay None.
    """
    stacked = _check_updates(updates)
    K, model_dim = stacked.shape
    if K != channel.n_devices:
        raise InvalidArgumentError(f"{K} updates for a channel with {channel.n_devices} devices")
    sigma_q2 = lat.require_second_moment()
    H = channel.real_stacked

    encoded = [
        encode(lat, pad_vector(update, lat.dimension), channel.power, streams.generator(DITHER, k, round_index))
        for k, update in enumerate(stacked)
    ]
    norms = [e.norm for e in encoded]
    sigmas = np.array([n.std for n in norms])

    forced = a is not None
    if a is None:
        a = select_coefficients(H, channel.snr)
    elif not isinstance(a, CoefficientVector):
        a = CoefficientVector(np.asarray(a))

    b = optimal_b(H, channel.snr, a)
    if forced:
        decoding_mse = dmse_for_equalizer(H, channel.snr, a, b, sigma_q2)
    else:
        decoding_mse = dmse(H, channel.snr, a, sigma_q2)
    b_norm = float(np.linalg.norm(b))
    try:
        eta = optimal_eta(a, sigmas, sigma_q2)
    except DegenerateRoundError:
        logger.warning(f"Round {round_index}: every weighted update is constant; skipping aggregation")
        return AggregationResult(np.zeros(model_dim), a=a, b_norm=b_norm, dmse=decoding_mse,
                                 dmse_cells=decoding_mse / sigma_q2)

    plan = ReceiverPlan(a=a, b=b, eta=eta, dmse=decoding_mse, qmse=qmse(a, sigmas, sigma_q2))
    signals = np.stack([e.signal for e in encoded])
    Y = transmit(channel, signals, streams.generator(NOISE, round_index))
    decoded = decode_combination(lat, Y, b, sigma_q2, channel.power)

    expected = a.values @ np.stack([e.lattice_point.integer_rep for e in encoded])
    decode_success = bool(np.array_equal(decoded.integer_rep, expected))

    dithers = np.stack([e.dither for e in encoded])
    update = reconstruct_aggregate(decoded, plan, dithers, norms, model_dim)
    logger.debug(
        f"Round {round_index}: a=[{a}] |b|={np.linalg.norm(b):.4g} eta={eta:.4g} "
        f"dmse={plan.dmse:.4g} qmse={plan.qmse:.4g} decoded={decode_success}"
    )
    return AggregationResult(update, a=a, b_norm=b_norm, eta=eta, dmse=plan.dmse,
                             dmse_cells=plan.dmse / sigma_q2, qmse=plan.qmse, decode_success=decode_success)


def fedcpu_aggregate(lat, channel, updates, streams, round_index=0):
    """Over-the-air aggregate with channel-adapted integer weights."""
    return over_the_air_round(lat, channel, updates, streams, round_index).update


def blind_equal_weight_aggregate(lat, channel, updates, streams, round_index=0):
    """Over-the-air aggregate with a forced to all ones."""
    ones = CoefficientVector.ones(channel.n_devices)
    return over_the_air_round(lat, channel, updates, streams, round_index, a=ones).update


def _aggregate(scheme, cfg, lat, fixed_channel, updates, streams, round_index):
    if scheme == IDEAL:
        return AggregationResult(ideal_aggregate(updates))
    if scheme == ORTHOGONAL_QUANTIZED:
        return AggregationResult(orthogonal_quantized_aggregate(lat, updates, streams, round_index))

    channel = fixed_channel
    if channel is None:
        channel = draw_channel(cfg.antennas, cfg.devices, cfg.channel.fading_rate,
                               streams.generator(CHANNEL, round_index), cfg.channel.snr, cfg.channel.power)
    a = CoefficientVector.ones(cfg.devices) if scheme == BLIND_EQUAL else None
    return over_the_air_round(lat, channel, updates, streams, round_index, a=a)


def _fixed_channel(cfg):
    if not cfg.channel.fixed_channel_csv:
        return None
    channel = load_channel_csv(cfg.channel.fixed_channel_csv, cfg.channel.power, snr=cfg.channel.snr)
    if channel.n_devices != cfg.devices:
        raise InvalidArgumentError(
            f"fixed channel has {channel.n_devices} devices but the experiment uses {cfg.devices}"
        )
    return channel


def run_seed(cfg, scheme, seed):
    """
    Full T-round FedAvg loop for one scheme and one master seed.

    Args:
        cfg: ExperimentConfig
        scheme: One of SCHEMES
        seed: Master seed

    Returns:
        List of RoundMetrics, one per round
    """
    if scheme not in SCHEMES:
        raise InvalidArgumentError(f"unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")
    train_cfg = TrainConfig.from_experiment(cfg)
    streams = StreamFactory(seed)

    dataset = load_dataset(cfg.dataset_path, cfg.train_samples, cfg.test_samples, streams.generator(DATA))
    partition = partition_by_class(dataset.y_train, cfg.devices, streams.generator(PARTITION),
                                   cfg.training.classes_per_device, cfg.training.dirichlet_alpha)
    shape = ModelShape(dataset.n_features, cfg.training.hidden, dataset.n_classes)
    model = init_model(shape, streams.generator(INIT))

    lat = None
    if scheme != IDEAL:
        lat = build_lattice(cfg.lattice.block_generator, cfg.lattice.rho, shape.n_params,
                            cfg.lattice.second_moment_samples, cfg.lattice.seed)
    fixed_channel = _fixed_channel(cfg) if scheme in (FEDCPU, BLIND_EQUAL) else None

    records = []
    for t in range(train_cfg.rounds):
        started = time.perf_counter()
        updates = [
            local_update(model, partition.shard(dataset, k), train_cfg, streams.generator(SGD, k, t))
            for k in range(cfg.devices)
        ]
        if any(u is None for u in updates):
            raise InvalidArgumentError(f"round {t}: a device has no training data")

        result = _aggregate(scheme, cfg, lat, fixed_channel, updates, streams, t)
        error_norm = float(np.linalg.norm(result.update - ideal_aggregate(updates)))
        model = ModelParams(shape, model.w + result.update)
        test_accuracy = accuracy(model, dataset.X_test, dataset.y_test)

        records.append(RoundMetrics(
            scheme=scheme,
            seed=int(seed),
            round=t + 1,
            a=str(result.a) if result.a is not None else None,
            b_norm=result.b_norm,
            eta=result.eta,
            dmse=result.dmse,
            dmse_cells=result.dmse_cells,
            qmse=result.qmse,
            decode_success=result.decode_success,
            aggregate_error_norm=error_norm,
            test_accuracy=test_accuracy,
            wall_time=time.perf_counter() - started if cfg.record_wall_time else None,
        ))

    logger.info(f"{scheme} seed {seed}: final accuracy {records[-1].test_accuracy:.4f} after {train_cfg.rounds} rounds")
    return records


def run_jobs(jobs, max_workers=1, on_job_done=None, show_progress=False, desc="runs"):
    """
    Run (config, scheme, seed) jobs in one thread pool.

    Args:
        jobs: List of (ExperimentConfig, scheme, seed) tuples
        max_workers: Pool width
        on_job_done: Optional callback(job) after each job finishes
        show_progress: Show a tqdm bar over jobs
        desc: Label of the progress bar

    Returns:
        List of RoundMetrics lists, in job order
    """
    results = [None] * len(jobs)
    with ThreadPoolExecutor(max_workers=max(1, int(max_workers))) as executor:
        future_to_job = {
            executor.submit(run_seed, cfg, scheme, seed): index
            for index, (cfg, scheme, seed) in enumerate(jobs)
        }
        for future in tqdm(as_completed(future_to_job), total=len(jobs), desc=desc, disable=not show_progress):
            index = future_to_job[future]
            results[index] = future.result()
            if on_job_done:
                on_job_done(jobs[index])
    return results


def run_experiment(cfg, scheme, seeds, max_workers=1, on_seed_done=None, show_progress=False):
    """
    Run one scheme over several seeds, seeds in a thread pool.

    Args:
        cfg: ExperimentConfig
        scheme: One of SCHEMES
        seeds: Master seeds
        max_workers: Pool width
        on_seed_done: Optional callback(seed) after each seed finishes
        show_progress: Show a tqdm bar over seeds

    Returns:
        List of RoundMetrics sorted by (seed, round)
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise InvalidArgumentError("at least one seed is required")

    def seed_done(job):
        if on_seed_done:
            on_seed_done(job[2])

    results = run_jobs([(cfg, scheme, seed) for seed in seeds], max_workers, seed_done, show_progress, desc=scheme)
    records = [record for seed_records in results for record in seed_records]
    records.sort(key=lambda r: (r.seed, r.round))
    return records
