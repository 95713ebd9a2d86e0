"""Sequence numerics, deterministic RNG streams, and small dense linear algebra.

A *sequence* is an (N, d) float64 array: N frames of dimension d. A *frame*
is a (d,) float64 array. All sampling code in this package operates on these
two shapes and nothing else.
"""

import numpy as np
import scipy.linalg


class NotSpdError(ValueError):
    """Raised when a matrix handed to :func:`spd_solve` is not symmetric positive definite."""


def as_frame(x, dim: int | None = None) -> np.ndarray:
    """Validate and return ``x`` as a (d,) float64 frame."""
    f = np.asarray(x, dtype=np.float64)
    if f.ndim != 1 or f.size < 1:
        raise ValueError(f"frame must be a 1-D vector, got shape {f.shape}")
    if dim is not None and f.shape[0] != dim:
        raise ValueError(f"frame has dimension {f.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(f)):
        raise ValueError("frame has non-finite entries")
    return f


def as_sequence(x, n_frames: int | None = None, dim: int | None = None) -> np.ndarray:
    """Validate and return ``x`` as an (N, d) float64 sequence."""
    s = np.asarray(x, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
        raise ValueError(f"sequence must be a 2-D (N, d) array, got shape {s.shape}")
    if n_frames is not None and s.shape[0] != n_frames:
        raise ValueError(f"sequence has {s.shape[0]} frames, expected {n_frames}")
    if dim is not None and s.shape[1] != dim:
        raise ValueError(f"sequence frame dimension is {s.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(s)):
        raise ValueError("sequence has non-finite entries")
    return s


def reverse(x: np.ndarray) -> np.ndarray:
    """Frame-order reversal: output frame m is input frame N-1-m.

    Linear and an involution; the input is never modified.
    """
    return np.ascontiguousarray(x[::-1])


class RngStream:
    """Counter-based Gaussian noise stream addressed by (seed, stream id).

    Built on Philox so that the same (seed, stream) always replays the same
    draw sequence and distinct stream ids are statistically independent.
    Derive purpose-specific substreams with :meth:`split` (e.g. one stream
    for latent initialisation, one for churn, one for re-injection) so that
    adding draws to one purpose never shifts another.
    """

    # Golden-ratio multiplier; mixes (parent stream, label) into a child id.
    _SPLIT_MULT = 0x9E3779B97F4A7C15

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))
        self.n_draws = 0

    def split(self, label: int) -> "RngStream":
        """Return an independent stream derived from this one, same seed."""
        child = (self.stream * self._SPLIT_MULT + int(label) + 1) & 0xFFFFFFFFFFFFFFFF
        return RngStream(self.seed, child)

    def normal(self, shape) -> np.ndarray:
        """Draw standard-normal float64 values and advance the stream."""
        self.n_draws += 1
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, shape=None) -> np.ndarray:
        """Draw uniform [0, 1) float64 values and advance the stream."""
        self.n_draws += 1
        return self._gen.random(size=shape, dtype=np.float64)

    def choice(self, n: int, p=None) -> int:
        """Draw an index in [0, n) with optional probabilities."""
        self.n_draws += 1
        return int(self._gen.choice(n, p=p))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def gaussian_noise(shape, std: float, rng: RngStream) -> np.ndarray:
    """i.i.d. zero-mean Gaussian array with the given standard deviation.

    Always advances ``rng``, including for ``std == 0``.
    """
    if std < 0:
        raise ValueError(f"noise std must be >= 0, got {std}")
    return std * rng.normal(shape)


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A X = B for symmetric positive-definite A via Cholesky.

    Raises :class:`NotSpdError` when the factorization fails.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise NotSpdError(f"matrix is not symmetric positive definite: {exc}") from exc
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def sequence_hash(x: np.ndarray) -> str:
    """SHA-256 hex digest of a float64 array's canonical little-endian bytes."""
    import hashlib

    arr = np.ascontiguousarray(x, dtype="<f8")
    h = hashlib.sha256()
    h.update(np.asarray(arr.shape, dtype="<i8").tobytes())
    h.update(arr.tobytes())
    return h.hexdigest()
