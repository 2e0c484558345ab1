"""
Two-dimensional block lattice codec.

The full generator is diag{rho*G2, ..., rho*G2}. Because it is block
diagonal, the nearest lattice point can be found independently for each
2-dim block, which keeps the closest-point search exact and O(s). The dense
s x s generator is never built.
"""
import itertools
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from simulation.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

BLOCK_SIZE = 2
SEARCH_RADIUS = 3
DEFAULT_BLOCK_GENERATOR = ((0.25, 0.0), (0.125, 0.25))

# Exact per-dimension second moment of the default block at scale 1.
# The Voronoi cell is the hexagon (+-0.15625, 0), (+-0.09375, +-0.125).
DEFAULT_SECOND_MOMENT = 31.0 / 6144.0

# Integer offsets around the Babai point, in lexicographic order so that
# argmin picks the lexicographically smaller integer_rep on exact ties.
_OFFSETS = np.array(
    list(itertools.product(range(-SEARCH_RADIUS, SEARCH_RADIUS + 1), repeat=BLOCK_SIZE)),
    dtype=np.int64,
)
_CHUNK_BLOCKS = 65536


@dataclass(frozen=True, eq=False)
class LatticePoint:
    """
    A point of the block lattice.

    Attributes:
        coords: Real coordinates, length = lattice dimension
        integer_rep: Integer vector s with coords = G s (stored blockwise)
    """
    coords: np.ndarray
    integer_rep: np.ndarray

    @property
    def dimension(self):
        return int(self.coords.shape[0])

    def is_origin(self):
        return not np.any(self.integer_rep)


@dataclass(eq=False)
class Lattice:
    """
    Block-diagonal lattice diag{rho*G2, ..., rho*G2}.

    The only mutable field is the cached second moment, which is filled by
    estimate_second_moment(). Everything else is fixed at construction and the
    instance can be shared across threads.

    Attributes:
        block_generator: 2x2 base block G2
        scale: Multiplier rho applied to G2
        dimension: Even model-vector length s
        second_moment: Per-dimension second moment sigma_q^2, None until estimated
    """
    block_generator: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_BLOCK_GENERATOR))
    scale: float = 1.0
    dimension: int = BLOCK_SIZE
    second_moment: float = None

    def __post_init__(self):
        block = np.asarray(self.block_generator, dtype=float)
        if block.shape != (BLOCK_SIZE, BLOCK_SIZE):
            raise InvalidArgumentError(f"block_generator must be 2x2, got shape {block.shape}")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise InvalidArgumentError(f"scale must be positive, got {self.scale}")
        if int(self.dimension) != self.dimension or self.dimension <= 0 or self.dimension % BLOCK_SIZE:
            raise InvalidArgumentError(
                f"dimension must be a positive multiple of {BLOCK_SIZE}, got {self.dimension}"
            )
        generator = self.scale * block
        if abs(np.linalg.det(generator)) <= 1e-12:
            raise InvalidArgumentError("scaled block generator is singular")
        if self.second_moment is not None and self.second_moment < 0:
            raise InvalidArgumentError(f"second_moment must be non-negative, got {self.second_moment}")

        self.block_generator = block
        self.dimension = int(self.dimension)
        self._generator = generator
        self._generator_inv = np.linalg.inv(generator)

    @property
    def generator(self):
        """Scaled 2x2 block rho*G2."""
        return self._generator

    @property
    def n_blocks(self):
        return self.dimension // BLOCK_SIZE

    def with_dimension(self, dimension):
        """Same lattice (and cached second moment) over a different dimension."""
        return Lattice(self.block_generator, self.scale, dimension, self.second_moment)

    def require_second_moment(self):
        if self.second_moment is None:
            raise InvalidArgumentError("second moment not estimated yet; call estimate_second_moment()")
        return self.second_moment

    def point(self, integer_rep):
        """
        Build the lattice point G*s for an integer vector.

        Args:
            integer_rep: Integer vector of length dimension

        Returns:
            LatticePoint
        """
        z = np.asarray(integer_rep)
        if z.shape != (self.dimension,):
            raise InvalidArgumentError(f"integer_rep must have length {self.dimension}, got shape {z.shape}")
        z = z.astype(np.int64)
        coords = (z.reshape(-1, BLOCK_SIZE) @ self._generator.T).ravel()
        return LatticePoint(coords=coords, integer_rep=z)

    def origin(self):
        return self.point(np.zeros(self.dimension, dtype=np.int64))


def _nearest_blocks(generator, generator_inv, blocks):
    """Nearest integer vectors for an (n, 2) array of points."""
    babai = np.rint(blocks @ generator_inv.T).astype(np.int64)
    result = np.empty_like(babai)
    for start in range(0, blocks.shape[0], _CHUNK_BLOCKS):
        stop = start + _CHUNK_BLOCKS
        candidates = babai[start:stop, None, :] + _OFFSETS[None, :, :]
        diffs = candidates @ generator.T - blocks[start:stop, None, :]
        distances = np.einsum("nij,nij->ni", diffs, diffs)
        best = np.argmin(distances, axis=1)
        result[start:stop] = candidates[np.arange(candidates.shape[0]), best]
    return result


def quantize(lat, x):
    """
    Nearest lattice point to x (Euclidean distance).

    Args:
        lat: Lattice
        x: Real vector of length lat.dimension

    Returns:
        LatticePoint closest to x
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != lat.dimension:
        raise InvalidArgumentError(f"expected a vector of length {lat.dimension}, got shape {x.shape}")
    blocks = x.reshape(-1, BLOCK_SIZE)
    z = _nearest_blocks(lat.generator, lat._generator_inv, blocks)
    coords = (z @ lat.generator.T).ravel()
    return LatticePoint(coords=coords, integer_rep=z.ravel())


def _voronoi_blocks(lat, n_blocks, rng):
    """n_blocks points uniform over the 2-dim Voronoi cell of the scaled block."""
    u = rng.random((n_blocks, BLOCK_SIZE)) @ lat.generator.T
    z = _nearest_blocks(lat.generator, lat._generator_inv, u)
    return u - z @ lat.generator.T


def sample_dither(lat, rng):
    """
    Draw a dither vector uniform over the fundamental Voronoi region.

    A point uniform over the fundamental parallelepiped is folded modulo the
    lattice, which maps it to a point uniform over the Voronoi cell.

    Args:
        lat: Lattice
        rng: numpy Generator held exclusively by the caller

    Returns:
        Real vector of length lat.dimension
    """
    return _voronoi_blocks(lat, lat.n_blocks, rng).ravel()


def estimate_second_moment(lat, n_samples, rng, chunk_size=100_000):
    """
    Monte Carlo estimate of the per-dimension second moment sigma_q^2.

    Args:
        lat: Lattice (the estimate is cached into lat.second_moment)
        n_samples: Number of 2-dim Voronoi-uniform samples
        rng: numpy Generator
        chunk_size: Samples drawn per batch

    Returns:
        Estimated sigma_q^2
    """
    n_samples = int(n_samples)
    if n_samples <= 0:
        raise InvalidArgumentError(f"n_samples must be positive, got {n_samples}")

    total = 0.0
    remaining = n_samples
    while remaining > 0:
        batch = min(chunk_size, remaining)
        d = _voronoi_blocks(lat, batch, rng)
        total += float(np.einsum("ij,ij->", d, d))
        remaining -= batch

    value = total / (BLOCK_SIZE * n_samples)
    lat.second_moment = value
    logger.debug(f"Estimated second moment {value:.6g} at scale {lat.scale} from {n_samples} samples")
    return value


@lru_cache(maxsize=64)
def _cached_second_moment(block_generator, scale, n_samples, seed):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    probe = Lattice(np.array(block_generator), scale, BLOCK_SIZE)
    return estimate_second_moment(probe, n_samples, rng)


def build_lattice(block_generator, scale, dimension, n_samples, seed):
    """
    Build a lattice for the given model dimension with a cached second moment.

    The Monte Carlo estimate is memoized on (generator, scale, samples, seed),
    so sweeps and repeated seeds pay for it once.

    Args:
        block_generator: 2x2 nested sequence or array
        scale: rho
        dimension: Unpadded model dimension
        n_samples: Monte Carlo samples for sigma_q^2
        seed: Seed of the estimator stream

    Returns:
        Lattice with second_moment filled in
    """
    key = tuple(tuple(float(v) for v in row) for row in np.asarray(block_generator, dtype=float))
    second_moment = _cached_second_moment(key, float(scale), int(n_samples), int(seed))
    return Lattice(np.array(key), float(scale), padded_dimension(dimension), second_moment)


def padded_dimension(length):
    """Smallest multiple of the block size that holds `length` entries."""
    length = int(length)
    return length + (-length) % BLOCK_SIZE


def pad_vector(x, dimension):
    """Zero-pad a vector up to `dimension` entries."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] > dimension:
        raise InvalidArgumentError(f"vector of length {x.shape[0]} does not fit dimension {dimension}")
    if x.shape[0] == dimension:
        return x
    return np.concatenate([x, np.zeros(dimension - x.shape[0])])
