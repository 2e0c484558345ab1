"""
Block-fading multiple-access channel between K single-antenna devices
and an M-antenna server, in its real-valued stacked form.

Noise is added with variance sigma_z^2 on every real entry of the stacked
observation (not sigma_z^2 / 2), which is the reading under which the
decoding MSE closed form holds exactly.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from simulation.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

DEFAULT_FADING_RATE = 5.0


def stack_real(complex_gains):
    """[Re{H}; Im{H}] for an M x K complex matrix."""
    complex_gains = np.asarray(complex_gains, dtype=complex)
    return np.vstack([complex_gains.real, complex_gains.imag])


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """
    One round's channel.

    Attributes:
        complex_gains: M x K complex matrix
        real_stacked: 2M x K real matrix [Re; Im]
        noise_var: Noise variance per real entry (0 only for clean fixtures)
        snr: P / noise_var (inf for a clean fixture)
        power: Per-dimension transmit power P of the devices
    """
    complex_gains: np.ndarray
    real_stacked: np.ndarray
    noise_var: float
    snr: float
    power: float = 1.0

    @property
    def n_antennas(self):
        return int(self.complex_gains.shape[0])

    @property
    def n_devices(self):
        return int(self.complex_gains.shape[1])

    @classmethod
    def from_complex(cls, complex_gains, power, snr=None, noise_var=None):
        """
        Build a realization from complex gains and either an SNR or a noise variance.

        Args:
            complex_gains: M x K complex matrix
            power: Transmit power P
            snr: Signal-to-noise ratio P / sigma_z^2
            noise_var: sigma_z^2 (0 gives a noiseless fixture)

        Returns:
            ChannelRealization
        """
        gains = np.atleast_2d(np.asarray(complex_gains, dtype=complex))
        if power <= 0:
            raise InvalidArgumentError(f"power must be positive, got {power}")
        if (snr is None) == (noise_var is None):
            raise InvalidArgumentError("pass exactly one of snr or noise_var")
        if snr is not None:
            if snr <= 0:
                raise InvalidArgumentError(f"snr must be positive, got {snr}")
            noise_var = power / snr
        else:
            if noise_var < 0:
                raise InvalidArgumentError(f"noise_var must be non-negative, got {noise_var}")
            snr = np.inf if noise_var == 0 else power / noise_var
        return cls(gains, stack_real(gains), float(noise_var), float(snr), float(power))


def draw_channel(M, K, fading_rate, rng, snr, power=1.0):
    """
    Draw i.i.d. Rayleigh gains: |h|^2 ~ Exponential(rate), phase ~ U(0, 2pi).

    Args:
        M: Server antennas
        K: Devices
        fading_rate: Rate of the exponential power law (mean power 1 / rate)
        rng: Channel stream for this round
        snr: P / sigma_z^2
        power: Transmit power P

    Returns:
        ChannelRealization
    """
    if M < 1 or K < 1:
        raise InvalidArgumentError(f"need M, K >= 1, got M={M}, K={K}")
    if fading_rate <= 0:
        raise InvalidArgumentError(f"fading_rate must be positive, got {fading_rate}")
    power_gain = rng.exponential(scale=1.0 / fading_rate, size=(M, K))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(M, K))
    gains = np.sqrt(power_gain) * np.exp(1j * phase)
    return ChannelRealization.from_complex(gains, power, snr=snr)


def transmit(ch, X, rng=None):
    """
    Superimpose device signals over the channel: Y = H X + Z.

    Args:
        ch: ChannelRealization
        X: K x s matrix whose rows are the device signals
        rng: Noise stream (may be None only for a noiseless realization)

    Returns:
        2M x s real matrix
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != ch.n_devices:
        raise InvalidArgumentError(f"X has {X.shape[0]} rows but the channel has {ch.n_devices} devices")
    Y = ch.real_stacked @ X
    if ch.noise_var > 0:
        if rng is None:
            raise InvalidArgumentError("a noise stream is required for a noisy channel")
        Y = Y + np.sqrt(ch.noise_var) * rng.standard_normal(Y.shape)
    return Y


def load_channel_csv(path, power, snr=None, noise_var=None):
    """
    Load a fixed complex channel from CSV.

    Each of the M rows holds K (re, im) pairs: re_1, im_1, ..., re_K, im_K.

    Args:
        path: CSV path (no header)
        power: Transmit power P
        snr: Signal-to-noise ratio
        noise_var: Alternative to snr

    Returns:
        ChannelRealization
    """
    values = pd.read_csv(path, header=None, comment="#").to_numpy(dtype=float)
    if values.shape[1] % 2:
        raise InvalidArgumentError(f"{path}: expected an even number of columns (re, im pairs), got {values.shape[1]}")
    gains = values[:, 0::2] + 1j * values[:, 1::2]
    logger.info(f"Loaded fixed {gains.shape[0]}x{gains.shape[1]} channel from {path}")
    return ChannelRealization.from_complex(gains, power, snr=snr, noise_var=noise_var)
