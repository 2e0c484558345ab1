"""
Device-side transmitter chain.

Each device normalizes its model update to zero mean and unit variance,
adds a Voronoi-uniform dither, quantizes onto the lattice and scales the
lattice point to the power budget. The two normalization scalars travel to
the server on an error-free side channel.
"""
import logging
from dataclasses import dataclass

import numpy as np

from simulation.errors import InvalidArgumentError
from simulation.lattice import quantize, sample_dither

logger = logging.getLogger(__name__)

DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class NormalizationParams:
    """
    Mean and population standard deviation of one model update.

    Attributes:
        mean: theta_k
        std: sigma_k (0 marks a degenerate, constant update)
    """
    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise InvalidArgumentError(f"std must be non-negative, got {self.std}")

    @property
    def degenerate(self):
        return self.std == 0.0


@dataclass(frozen=True, eq=False)
class EncodedUpdate:
    """
    Everything a device produces for one round.

    Attributes:
        norm: Normalization scalars shared with the server
        dither: Dither vector d_k in the Voronoi region
        lattice_point: Q(normalized + dither)
        signal: Power-scaled transmission x_k
        power: Per-dimension power budget P
    """
    norm: NormalizationParams
    dither: np.ndarray
    lattice_point: object
    signal: np.ndarray
    power: float

    @property
    def degenerate(self):
        return self.norm.degenerate


def power_scale(power, sigma_q2):
    """Amplitude factor sqrt(P / (1 + 2 sigma_q^2)) applied to lattice points."""
    return float(np.sqrt(power / (1.0 + 2.0 * sigma_q2)))


def normalize(delta_w):
    """
    Normalize a model update to zero mean and unit population variance.

    Args:
        delta_w: Real vector with at least two entries

    Returns:
        Tuple of (normalized vector, NormalizationParams). A constant update
        maps to the zero vector with std reported as 0.
    """
    delta_w = np.asarray(delta_w, dtype=float)
    if delta_w.ndim != 1 or delta_w.shape[0] == 0:
        raise InvalidArgumentError("model update must be a non-empty vector")
    if delta_w.shape[0] < 2:
        raise InvalidArgumentError("model update needs at least two entries to normalize")

    mean = float(np.mean(delta_w))
    std = float(np.sqrt(np.mean((delta_w - mean) ** 2)))
    if std < DEGENERATE_STD:
        return np.zeros_like(delta_w), NormalizationParams(mean=mean, std=0.0)
    return (delta_w - mean) / std, NormalizationParams(mean=mean, std=std)


def encode(lat, delta_w, power, rng):
    """
    Run the full transmitter chain for one device.

    Args:
        lat: Lattice with its second moment estimated
        delta_w: Model update already padded to lat.dimension
        power: Per-dimension transmit power budget P
        rng: The device's dither stream for this round

    Returns:
        EncodedUpdate
    """
    if power <= 0:
        raise InvalidArgumentError(f"power must be positive, got {power}")
    sigma_q2 = lat.require_second_moment()
    delta_w = np.asarray(delta_w, dtype=float)
    if delta_w.shape != (lat.dimension,):
        raise InvalidArgumentError(
            f"model update of shape {delta_w.shape} does not match lattice dimension {lat.dimension}"
        )

    normalized, norm = normalize(delta_w)
    dither = sample_dither(lat, rng)
    if norm.degenerate:
        # quantize(d) is the origin for any d in the Voronoi region
        lattice_point = lat.origin()
        logger.debug("Degenerate update (std = 0); transmitting the zero lattice point")
    else:
        lattice_point = quantize(lat, normalized + dither)

    signal = power_scale(power, sigma_q2) * lattice_point.coords
    return EncodedUpdate(norm=norm, dither=dither, lattice_point=lattice_point, signal=signal, power=float(power))


def reconstruct(encoded):
    """
    Invert the transmitter without a channel: (lattice point - dither) * sigma + theta.

    Args:
        encoded: EncodedUpdate

    Returns:
        Reconstructed model update (padded length)
    """
    return (encoded.lattice_point.coords - encoded.dither) * encoded.norm.std + encoded.norm.mean
