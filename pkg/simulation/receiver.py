"""
Server-side two-layer receiver.

Layer one equalizes the stacked antenna observations with the MMSE-optimal
vector b for a chosen integer coefficient vector a, and decodes the integer
combination sum_k a_k * lambda_k as a lattice point. Layer two removes the
dithers and rescales with the optimal normalizing factor eta to produce the
aggregated model update.

All MSE quantities are per dimension. Every inverse in the closed forms is
applied through a Cholesky solve.
"""
import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from simulation.errors import DegenerateRoundError, InvalidArgumentError
from simulation.lattice import quantize

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 5000
STEP_TOLERANCE = 1e-10
POWER_ITERATIONS = 500


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    """
    Integer aggregation weights a.

    Attributes:
        values: Non-negative integer vector, not all zero
        converged: False when the relaxed solver hit its iteration cap
    """
    values: np.ndarray
    converged: bool = True

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 1 or values.shape[0] == 0:
            raise InvalidArgumentError("coefficient vector must be a non-empty 1-d array")
        if not np.all(np.equal(np.mod(values, 1), 0)):
            raise InvalidArgumentError(f"coefficients must be integers, got {values}")
        values = values.astype(np.int64)
        if np.any(values < 0):
            raise InvalidArgumentError(f"coefficients must be non-negative, got {values}")
        if not np.any(values):
            raise InvalidArgumentError("the all-zero coefficient vector is not allowed")
        object.__setattr__(self, "values", values)

    @classmethod
    def ones(cls, K):
        return cls(np.ones(int(K), dtype=np.int64))

    @property
    def total(self):
        return int(self.values.sum())

    def __len__(self):
        return int(self.values.shape[0])

    def __str__(self):
        return " ".join(str(v) for v in self.values)


@dataclass(frozen=True, eq=False)
class ReceiverPlan:
    """
    Everything the server needs to aggregate one round.

    Attributes:
        a: CoefficientVector
        b: Equalization vector (length 2M)
        eta: Normalizing factor
        dmse: Decoding MSE for (a, b)
        qmse: Quantization MSE at eta
    """
    a: CoefficientVector
    b: np.ndarray
    eta: float
    dmse: float
    qmse: float


def _as_float_vector(a):
    if isinstance(a, CoefficientVector):
        return a.values.astype(float)
    return np.asarray(a, dtype=float)


def _check_inputs(H, snr, a=None):
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if not np.isfinite(snr) or snr <= 0:
        raise InvalidArgumentError(f"snr must be positive and finite, got {snr}")
    if a is not None:
        a = _as_float_vector(a)
        if a.shape != (H.shape[1],):
            raise InvalidArgumentError(f"coefficient vector of shape {a.shape} does not match {H.shape[1]} devices")
    return H, a


def _observation_factor(H, snr):
    """Cholesky factor of (1/SNR) I + H H^T (2M x 2M)."""
    return cho_factor(np.eye(H.shape[0]) / snr + H @ H.T)


def _coefficient_factor(H, snr):
    """Cholesky factor of I + SNR H^T H (K x K)."""
    return cho_factor(np.eye(H.shape[1]) + snr * (H.T @ H))


def optimal_b(H, snr, a):
    """
    MMSE equalization vector b = ((1/SNR) I + H H^T)^{-1} H a.

    Args:
        H: 2M x K real stacked channel
        snr: Signal-to-noise ratio
        a: Coefficient vector

    Returns:
        Real vector of length 2M
    """
    H, a = _check_inputs(H, snr, a)
    return cho_solve(_observation_factor(H, snr), H @ a)


def dmse(H, snr, a, sigma_q2):
    """
    Decoding MSE at the optimal equalizer: (1 + 2 sigma_q^2) a^T (I + SNR H^T H)^{-1} a.

    Args:
        H: 2M x K real stacked channel
        snr: Signal-to-noise ratio
        a: Coefficient vector
        sigma_q2: Lattice second moment

    Returns:
        Non-negative per-dimension MSE
    """
    H, a = _check_inputs(H, snr, a)
    return float((1.0 + 2.0 * sigma_q2) * a @ cho_solve(_coefficient_factor(H, snr), a))


def dmse_via_identity(H, snr, a, sigma_q2):
    """Same quantity before the matrix inversion lemma: a^T [I - H^T((1/SNR)I + HH^T)^{-1} H] a."""
    H, a = _check_inputs(H, snr, a)
    projected = H.T @ cho_solve(_observation_factor(H, snr), H @ a)
    return float((1.0 + 2.0 * sigma_q2) * (a @ a - a @ projected))


def dmse_for_equalizer(H, snr, a, b, sigma_q2):
    """
    Decoding MSE for an arbitrary equalizer b:
    (1 + 2 sigma_q^2) (||b^T H - a^T||^2 + ||b||^2 / SNR).
    """
    H, a = _check_inputs(H, snr, a)
    b = np.asarray(b, dtype=float)
    residual = b @ H - a
    return float((1.0 + 2.0 * sigma_q2) * (residual @ residual + (b @ b) / snr))


def _largest_eigenvalue(apply, size):
    """Power iteration for the largest eigenvalue of an SPD operator."""
    v = 1.0 + np.arange(size, dtype=float) / size
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(POWER_ITERATIONS):
        w = apply(v)
        updated = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0:
            break
        v = w / norm
        if abs(updated - estimate) <= 1e-12 * max(abs(updated), 1.0):
            estimate = updated
            break
        estimate = updated
    return estimate


def relaxed_coefficients(H, snr, max_iterations=MAX_ITERATIONS, tolerance=STEP_TOLERANCE):
    """
    Minimize a^T (I + SNR H^T H)^{-1} a over real a with a_k >= 1.

    Projected gradient on the half objective with fixed step 1/L, where L is
    the largest eigenvalue of the quadratic form (power iteration). The
    projection clamps each entry to at least 1.

    Returns:
        Tuple of (real minimizer, converged flag)
    """
    H, _ = _check_inputs(H, snr)
    factor = _coefficient_factor(H, snr)

    def apply(v):
        return cho_solve(factor, v)

    K = H.shape[1]
    lipschitz = _largest_eigenvalue(apply, K)
    step = 1.0 / lipschitz if lipschitz > 0 else 1.0

    a = np.ones(K)
    best, best_value = a, float(a @ apply(a))
    for iteration in range(max_iterations):
        updated = np.maximum(a - step * apply(a), 1.0)
        move = np.linalg.norm(updated - a)
        a = updated
        value = float(a @ apply(a))
        if value < best_value:
            best, best_value = a, value
        if move < tolerance:
            logger.debug(f"Relaxed coefficient search converged after {iteration + 1} iterations")
            return best, True

    logger.warning(f"Relaxed coefficient search did not converge in {max_iterations} iterations")
    return best, False


def select_coefficients(H, snr, max_iterations=MAX_ITERATIONS, tolerance=STEP_TOLERANCE):
    """
    Pick integer weights a (all a_k >= 1) that keep the decoding MSE small.

    Solves the relaxed convex problem, rounds to the nearest integers, clamps
    at 1 and falls back to the all-ones vector when rounding made things worse.

    Args:
        H: 2M x K real stacked channel
        snr: Signal-to-noise ratio

    Returns:
        CoefficientVector (converged=False if the relaxed solver hit its cap)
    """
    H, _ = _check_inputs(H, snr)
    relaxed, converged = relaxed_coefficients(H, snr, max_iterations, tolerance)
    rounded = np.maximum(np.rint(relaxed), 1.0)
    ones = np.ones(H.shape[1])

    factor = _coefficient_factor(H, snr)
    rounded_value = float(rounded @ cho_solve(factor, rounded))
    ones_value = float(ones @ cho_solve(factor, ones))
    chosen = rounded if rounded_value <= ones_value else ones
    return CoefficientVector(chosen.astype(np.int64), converged=converged)


def exhaustive_coefficients(H, snr, max_coeff=8, min_coeff=0):
    """
    Brute-force integer minimizer of a^T (I + SNR H^T H)^{-1} a over
    a in {min_coeff..max_coeff}^K without the all-zero vector. Only meant
    for small K.

    Returns:
        Tuple of (CoefficientVector, objective value)
    """
    H, _ = _check_inputs(H, snr)
    K = H.shape[1]
    grid = np.array(list(itertools.product(range(min_coeff, max_coeff + 1), repeat=K)), dtype=float)
    grid = grid[np.any(grid != 0, axis=1)]
    solved = cho_solve(_coefficient_factor(H, snr), grid.T)
    values = np.einsum("ij,ji->i", grid, solved)
    best = int(np.argmin(values))
    return CoefficientVector(grid[best].astype(np.int64)), float(values[best])


def decode_combination(lat, Y, b, sigma_q2, power):
    """
    Decode the integer combination: Q(sqrt((1 + 2 sigma_q^2) / P) * b^T Y).

    A decoding error shows up as a different lattice point, never as a failure.

    Args:
        lat: Lattice
        Y: 2M x s received matrix
        b: Equalization vector
        sigma_q2: Lattice second moment
        power: Transmit power P

    Returns:
        LatticePoint
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    b = np.asarray(b, dtype=float)
    if b.shape != (Y.shape[0],):
        raise InvalidArgumentError(f"equalizer of shape {b.shape} does not match {Y.shape[0]} observation rows")
    scaled = np.sqrt((1.0 + 2.0 * sigma_q2) / power) * (b @ Y)
    return quantize(lat, scaled)


def _check_sigmas(a, sigmas):
    a = _as_float_vector(a)
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.shape != a.shape:
        raise InvalidArgumentError(f"sigmas of shape {sigmas.shape} do not match coefficients {a.shape}")
    if np.any(sigmas < 0):
        raise InvalidArgumentError("standard deviations must be non-negative")
    return a, sigmas


def optimal_eta(a, sigmas, sigma_q2):
    """
    Normalizing factor eta = (1 + sigma_q^2) ||a||^2 / (a^T diag(sigma) a).

    Raises:
        DegenerateRoundError: every device with a_k > 0 has sigma_k = 0
    """
    a, sigmas = _check_sigmas(a, sigmas)
    weighted = float(a @ (sigmas * a))
    if weighted <= 0:
        raise DegenerateRoundError("all devices with non-zero coefficients reported zero variance")
    return float((1.0 + sigma_q2) * (a @ a) / weighted)


def qmse_at_eta(a, sigmas, sigma_q2, eta):
    """
    Quantization MSE for any eta:
    (||(I/eta - diag(sigma)) a||^2 + ||a||^2 sigma_q^2 / eta^2) / (1^T a)^2.

    eta may be an array; the result then has one value per entry.
    """
    a, sigmas = _check_sigmas(a, sigmas)
    etas = np.asarray(eta, dtype=float)
    inverse = 1.0 / etas[..., None]
    residual = (inverse - sigmas) * a
    values = (np.sum(residual ** 2, axis=-1) + (a @ a) * sigma_q2 * inverse[..., 0] ** 2) / a.sum() ** 2
    return float(values) if etas.ndim == 0 else values


def qmse(a, sigmas, sigma_q2):
    """
    Quantization MSE at the optimal eta:
    (a^T diag(sigma^2) a - (a^T diag(sigma) a)^2 / ((1 + sigma_q^2) ||a||^2)) / (1^T a)^2.
    """
    a, sigmas = _check_sigmas(a, sigmas)
    weighted = a @ (sigmas * a)
    value = (a @ (sigmas ** 2 * a) - weighted ** 2 / ((1.0 + sigma_q2) * (a @ a))) / a.sum() ** 2
    return float(max(value, 0.0))


def plan_receiver(H, snr, sigmas, sigma_q2, a=None):
    """
    Build the receiver plan for one round.

    Args:
        H: 2M x K real stacked channel
        snr: Signal-to-noise ratio
        sigmas: Per-device standard deviations
        sigma_q2: Lattice second moment
        a: Fixed coefficients; selected from the channel when None

    Returns:
        ReceiverPlan
    """
    if a is None:
        a = select_coefficients(H, snr)
    elif not isinstance(a, CoefficientVector):
        a = CoefficientVector(np.asarray(a))
    b = optimal_b(H, snr, a)
    eta = optimal_eta(a, sigmas, sigma_q2)
    return ReceiverPlan(
        a=a,
        b=b,
        eta=eta,
        dmse=dmse(H, snr, a, sigma_q2),
        qmse=qmse(a, sigmas, sigma_q2),
    )


def reconstruct_aggregate(decoded, plan, dithers, norms, model_dim=None):
    """
    Second receiver layer: remove dithers, rescale by eta and re-center.

    Args:
        decoded: LatticePoint from decode_combination
        plan: ReceiverPlan
        dithers: K x s matrix of device dithers
        norms: Per-device NormalizationParams
        model_dim: Unpadded model length (output is truncated to it)

    Returns:
        Aggregated model update
    """
    a = plan.a.values.astype(float)
    dithers = np.atleast_2d(np.asarray(dithers, dtype=float))
    if dithers.shape[0] != a.shape[0] or len(norms) != a.shape[0]:
        raise InvalidArgumentError("dithers and normalization params must have one entry per device")
    total = a.sum()
    means = np.array([norm.mean for norm in norms])
    combination = decoded.coords - a @ dithers
    aggregate_update = combination / (plan.eta * total) + (a @ means) / total
    if model_dim is not None:
        aggregate_update = aggregate_update[:model_dim]
    return aggregate_update


def aggregate(lat, Y, plan, dithers, norms, power, model_dim=None):
    """
    Full receiver: decode the integer combination and reconstruct the aggregate.

    Args:
        lat: Lattice
        Y: 2M x s received matrix
        plan: ReceiverPlan
        dithers: K x s dithers rebuilt from the shared streams
        norms: Per-device NormalizationParams
        power: Transmit power P
        model_dim: Unpadded model length

    Returns:
        Aggregated model update
    """
    decoded = decode_combination(lat, Y, plan.b, lat.require_second_moment(), power)
    return reconstruct_aggregate(decoded, plan, dithers, norms, model_dim)
