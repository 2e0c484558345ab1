"""
Seeded random streams for the simulator.

One master seed fans out to named, independent streams. Each stream is a
counter-based Philox generator keyed by (stream name, *counters), so the
server can rebuild a device's dither from (seed, device, round) and
changing the draws of one subsystem never perturbs another.
"""
import zlib

import numpy as np

# Stream names used across the code base
CHANNEL = "channel"
NOISE = "noise"
DITHER = "dither"
SGD = "sgd"
PARTITION = "partition"
INIT = "init"
DATA = "data"


def stream_key(name):
    """Stable 32-bit key for a stream name (independent of PYTHONHASHSEED)."""
    return zlib.crc32(name.encode("utf-8"))


class StreamFactory:
    """
    Hands out reproducible numpy Generators keyed by name and counters.

    Args:
        master_seed: Non-negative integer seed for the whole experiment
    """

    def __init__(self, master_seed):
        if int(master_seed) < 0:
            raise ValueError(f"master_seed must be non-negative, got {master_seed}")
        self.master_seed = int(master_seed)

    def seed_sequence(self, name, *counters):
        spawn_key = (stream_key(name),) + tuple(int(c) for c in counters)
        return np.random.SeedSequence(entropy=self.master_seed, spawn_key=spawn_key)

    def generator(self, name, *counters):
        """
        Get a fresh generator for a named stream.

        Args:
            name: Stream name (e.g. "dither")
            *counters: Integer counters such as device id and round index

        Returns:
            numpy.random.Generator backed by Philox
        """
        return np.random.Generator(np.random.Philox(self.seed_sequence(name, *counters)))

    def __repr__(self):
        return f"StreamFactory(master_seed={self.master_seed})"
