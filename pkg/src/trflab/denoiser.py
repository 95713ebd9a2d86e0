"""Clean-sequence prediction: the denoiser contract and its backends.

A denoiser backend answers one question: given a sequence observed at noise
level sigma and a conditioning frame, what is the clean sequence? The
analytic backends answer it exactly (posterior means of Gaussian or
Gaussian-mixture worlds) and serve as ground-truth oracles for every
sampler in this package; the preconditioned trainable backend answers it
with a small network wrapped in input/output scalings so one set of weights
covers all noise levels.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import as_frame, as_sequence, spd_solve

#: Start-of-sequence conditioning role.
ROLE_START = "start"
#: End-of-sequence conditioning role.
ROLE_END = "end"


@dataclass(frozen=True, eq=False)
class Condition:
    """A clean bounding frame plus its role (start or end of the sequence)."""

    frame: np.ndarray
    role: str = ROLE_START

    def __post_init__(self):
        object.__setattr__(self, "frame", as_frame(self.frame))
        if self.role not in (ROLE_START, ROLE_END):
            raise ValueError(f"role must be '{ROLE_START}' or '{ROLE_END}', got {self.role!r}")

    @property
    def dim(self) -> int:
        return self.frame.shape[0]

    def key(self) -> bytes:
        """Byte key identifying the conditioning value (role excluded)."""
        return np.ascontiguousarray(self.frame, dtype="<f8").tobytes()


class DenoiserBackend:
    """Contract: deterministic clean-sequence prediction.

    ``predict_x0(x, sigma, cond)`` maps an (N, d) sequence at noise level
    sigma to an (N, d) estimate of the clean sequence. Implementations must
    be deterministic, preserve shape, and report that shape via
    ``seq_shape`` so sampling loops know what latent to draw.
    """

    def predict_x0(self, x: np.ndarray, sigma: float, cond: Condition) -> np.ndarray:
        raise NotImplementedError

    @property
    def seq_shape(self) -> tuple[int, int]:
        raise NotImplementedError


class GaussianWorldDenoiser:
    """Exact posterior mean under one conditioned Gaussian world.

    Holds the conditional mean (length N*d) and SPD covariance (N*d x N*d)
    of the stacked clean sequence; ``posterior_x0`` returns
    mean + cov (cov + sigma^2 I)^(-1) (x - mean), the Bayes-optimal
    denoiser for this world.
    """

    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.cov = np.asarray(cov, dtype=np.float64)
        n = self.mean.size
        if self.cov.shape != (n, n):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean size {n}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        self._eye = np.eye(n)

    def posterior_x0(self, x: np.ndarray, sigma: float) -> np.ndarray:
        x = as_sequence(x)
        n_frames, dim = x.shape
        if n_frames * dim != self.mean.size:
            raise ValueError(f"sequence size {n_frames * dim} does not match world size {self.mean.size}")
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        if sigma == 0.0:
            # cov (cov + 0)^-1 is the identity; the observation is already clean.
            return x.copy()
        resid = x.reshape(-1) - self.mean
        sol = spd_solve(self.cov + sigma * sigma * self._eye, resid)
        return (self.mean + self.cov @ sol).reshape(n_frames, dim)


def gp_posterior_x0(d: GaussianWorldDenoiser, x: np.ndarray, sigma: float) -> np.ndarray:
    """Posterior-mean denoise of ``x`` at level ``sigma`` under a Gaussian world."""
    return d.posterior_x0(x, sigma)


class GmmWorldDenoiser:
    """Exact posterior mean under an isotropic Gaussian-mixture world.

    Component k has weight w_k, stacked mean mu_k (length N*d) and isotropic
    variance tau_k^2. The posterior mean at noise level sigma is
    sum_k r_k(x) m_k(x) with responsibilities
    r_k proportional to w_k N(x; mu_k, (tau_k^2 + sigma^2) I), evaluated in
    log space, and per-component shrinkage
    m_k = mu_k + tau_k^2 / (tau_k^2 + sigma^2) (x - mu_k).
    """

    def __init__(self, weights, means, variances):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.variances = np.asarray(variances, dtype=np.float64)
        if self.means.ndim != 2 or self.means.shape[0] != self.weights.size:
            raise ValueError("means must be (K, N*d) with one row per weight")
        if self.variances.shape != self.weights.shape:
            raise ValueError("need one variance per component")
        if np.any(self.weights <= 0) or not np.isclose(self.weights.sum(), 1.0, atol=1e-9):
            raise ValueError("weights must be positive and sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("component variances must be positive")

    @property
    def n_components(self) -> int:
        return self.weights.size

    def responsibilities(self, x_flat: np.ndarray, sigma: float) -> np.ndarray:
        """Posterior component probabilities of a noisy stacked observation."""
        total_var = self.variances + sigma * sigma  # (K,)
        quad = np.sum((x_flat[None, :] - self.means) ** 2, axis=1)
        dim = x_flat.size
        log_lik = np.log(self.weights) - 0.5 * quad / total_var - 0.5 * dim * np.log(2.0 * np.pi * total_var)
        log_lik -= log_lik.max()
        r = np.exp(log_lik)
        return r / r.sum()

    def posterior_x0(self, x: np.ndarray, sigma: float) -> np.ndarray:
        x = as_sequence(x)
        if sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {sigma}")
        x_flat = x.reshape(-1)
        if x_flat.size != self.means.shape[1]:
            raise ValueError(f"sequence size {x_flat.size} does not match mixture size {self.means.shape[1]}")
        r = self.responsibilities(x_flat, sigma)
        shrink = self.variances / (self.variances + sigma * sigma)  # (K,)
        comp_means = self.means + shrink[:, None] * (x_flat[None, :] - self.means)
        return (r @ comp_means).reshape(x.shape)


def gmm_posterior_x0(d: GmmWorldDenoiser, x: np.ndarray, sigma: float) -> np.ndarray:
    """Posterior-mean denoise of ``x`` at level ``sigma`` under a mixture world."""
    return d.posterior_x0(x, sigma)


def precondition_apply(net, x: np.ndarray, sigma: float, cond: Condition, sigma_data: float) -> np.ndarray:
    """Wrap a raw network in noise-level-dependent input/output scalings.

    Returns c_skip * x + c_out * net(c_in * x, c_noise, cond) with
    c_skip = sd^2 / (sigma^2 + sd^2), c_out = sigma sd / sqrt(sigma^2 + sd^2),
    c_in = 1 / sqrt(sigma^2 + sd^2), c_noise = ln(sigma) / 4. At low sigma
    the skip path dominates (the input is nearly clean); at high sigma the
    network output, bounded by c_out -> sd, carries the prediction.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    sd2 = sigma_data * sigma_data
    s2 = sigma * sigma
    c_skip = sd2 / (s2 + sd2)
    c_out = sigma * sigma_data / np.sqrt(s2 + sd2)
    c_in = 1.0 / np.sqrt(s2 + sd2)
    c_noise = np.log(sigma) / 4.0
    return c_skip * x + c_out * net(c_in * x, c_noise, cond)


class AnalyticGaussianBackend(DenoiserBackend):
    """Denoiser contract over a Gaussian-process world, any conditioning frame.

    Conditioning pins frame 0 of the world's data process; the per-condition
    moments come from ``world.conditional_moments`` and are cached, as are
    the Cholesky factors of (cov + sigma^2 I) since samplers revisit the
    same ladder of sigma values for every chain.
    """

    def __init__(self, world):
        self.world = world
        self._denoisers: dict[bytes, GaussianWorldDenoiser] = {}
        self._factors: dict[tuple[bytes, float], object] = {}

    @property
    def seq_shape(self) -> tuple[int, int]:
        return self.world.seq_shape

    def denoiser_for(self, cond: Condition) -> GaussianWorldDenoiser:
        key = cond.key()
        if key not in self._denoisers:
            mean, cov = self.world.conditional_moments(cond)
            self._denoisers[key] = GaussianWorldDenoiser(mean, cov)
        return self._denoisers[key]

    def predict_x0(self, x: np.ndarray, sigma: float, cond: Condition) -> np.ndarray:
        import scipy.linalg

        d = self.denoiser_for(cond)
        if sigma == 0.0:
            return np.asarray(x, dtype=np.float64).copy()
        fkey = (cond.key(), float(sigma))
        factor = self._factors.get(fkey)
        if factor is None:
            factor = scipy.linalg.cho_factor(d.cov + sigma * sigma * d._eye, lower=True, check_finite=False)
            self._factors[fkey] = factor
        x = as_sequence(x)
        resid = x.reshape(-1) - d.mean
        sol = scipy.linalg.cho_solve(factor, resid, check_finite=False)
        return (d.mean + d.cov @ sol).reshape(x.shape)


class AnalyticGmmBackend(DenoiserBackend):
    """Denoiser contract over a trajectory-mixture world, any conditioning frame."""

    def __init__(self, world):
        self.world = world
        self._denoisers: dict[bytes, GmmWorldDenoiser] = {}

    @property
    def seq_shape(self) -> tuple[int, int]:
        return self.world.seq_shape

    def denoiser_for(self, cond: Condition) -> GmmWorldDenoiser:
        key = cond.key()
        if key not in self._denoisers:
            self._denoisers[key] = self.world.conditional_gmm(cond)
        return self._denoisers[key]

    def predict_x0(self, x: np.ndarray, sigma: float, cond: Condition) -> np.ndarray:
        return self.denoiser_for(cond).posterior_x0(x, sigma)


class PerFrameConditionBackend(DenoiserBackend):
    """Compose a base backend under a different conditioning frame per output frame.

    Frame n of the prediction is frame n of the base backend's prediction
    under conditions[n]. Used by the condition-interpolation baseline, where
    each frame is steered by its own blend of the two bounding frames.
    """

    def __init__(self, base: DenoiserBackend, conditions: list[Condition]):
        self.base = base
        self.conditions = list(conditions)

    @property
    def seq_shape(self) -> tuple[int, int]:
        return self.base.seq_shape

    def predict_x0(self, x: np.ndarray, sigma: float, cond: Condition) -> np.ndarray:
        x = as_sequence(x, n_frames=len(self.conditions))
        out = np.empty_like(x)
        for n, cond_n in enumerate(self.conditions):
            out[n] = self.base.predict_x0(x, sigma, cond_n)[n]
        return out
