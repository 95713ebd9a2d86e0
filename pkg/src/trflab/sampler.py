"""Forward conditional sampling: the baseline one-path generation loop.

The loop walks a noise schedule from sigma_max down to 0, at each step
optionally churning the latent up in noise before one Euler step toward
the backend's clean-sequence prediction. Churn lives here in the loop, not
inside the denoise step, so the fused sampler can churn a single shared
latent and feed the identical state to both of its paths.

RNG substream labels are fixed module-wide so that runs which share a root
stream consume identical draws in identical order — several equivalence
tests depend on this.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import RngStream, as_sequence, gaussian_noise, sequence_hash
from .denoiser import Condition, DenoiserBackend
from .schedule import ChurnParams, NoiseSchedule, churn_gamma

# Substream labels. A sampling run splits its root RngStream by these, so
# adding draws to one purpose never shifts the draws of another.
STREAM_INIT = 0
STREAM_CHURN = 1
STREAM_REINJECT = 2
STREAM_AUX = 3
STREAM_BACKWARD_INIT = 4


@dataclass
class StepRecord:
    """One step of a sampling run: noise levels, state hashes, fusion diagnostics."""

    t: int
    sigma: float
    sigma_hat: float
    latent_hash: str
    denoised_hash: str
    fusions: int = 0
    objective: float | None = None
    disagreement: float | None = None


@dataclass
class StepTrace:
    """Per-step records of one run; exactly T entries for a T-step schedule."""

    records: list[StepRecord] = field(default_factory=list)

    def append(self, record: StepRecord):
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def total_fusions(self) -> int:
        return sum(r.fusions for r in self.records)

    def to_json_lines(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)

    def save_jsonl(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json_lines())


def churn_perturb(x: np.ndarray, sigma: float, gamma: float, s_noise: float,
                  rng: RngStream) -> tuple[np.ndarray, float]:
    """Raise the latent's noise level from sigma to sigma*(1+gamma).

    Adds noise of std sqrt(sigma_hat^2 - sigma^2) * s_noise. gamma = 0 is
    an exact no-op that does not advance the rng, so churn-free runs and
    out-of-churn-window steps consume no draws.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if gamma == 0.0:
        return x, sigma
    sigma_hat = sigma * (1.0 + gamma)
    std = np.sqrt(sigma_hat * sigma_hat - sigma * sigma) * s_noise
    return x + gaussian_noise(x.shape, std, rng), sigma_hat


def _euler_from_denoised(x_hat: np.ndarray, sigma_hat: float, sigma_next: float,
                         denoised: np.ndarray) -> np.ndarray:
    d = (x_hat - denoised) / sigma_hat
    return x_hat + (sigma_next - sigma_hat) * d


def edm_euler_step(backend: DenoiserBackend, x_hat: np.ndarray, sigma_hat: float,
                   sigma_next: float, cond: Condition) -> np.ndarray:
    """One Euler step from sigma_hat toward sigma_next along the denoiser direction."""
    if sigma_hat <= 0:
        raise ValueError(f"sigma_hat must be > 0, got {sigma_hat}")
    if not 0 <= sigma_next <= sigma_hat:
        raise ValueError(f"need 0 <= sigma_next <= sigma_hat, got {sigma_next} vs {sigma_hat}")
    x_hat = as_sequence(x_hat)
    denoised = backend.predict_x0(x_hat, sigma_hat, cond)
    return _euler_from_denoised(x_hat, sigma_hat, sigma_next, denoised)


def sample(backend: DenoiserBackend, schedule: NoiseSchedule, cond: Condition,
           churn: ChurnParams, rng: RngStream) -> tuple[np.ndarray, StepTrace]:
    """Forward conditional generation down the full schedule.

    Starts from pure noise at sigma_max and takes T steps, the last one
    landing at sigma = 0. Returns the clean-level sequence and a trace with
    exactly T records.
    """
    n_frames, dim = backend.seq_shape
    n_steps = schedule.n_steps
    rng_init = rng.split(STREAM_INIT)
    rng_churn = rng.split(STREAM_CHURN)

    x = gaussian_noise((n_frames, dim), schedule.sigma_max, rng_init)
    trace = StepTrace()
    for t in range(n_steps - 1, -1, -1):
        sigma = schedule.sigma_at(t)
        sigma_next = schedule.sigma_at(t - 1) if t > 0 else 0.0
        gamma = churn_gamma(churn, sigma, n_steps)
        x_hat, sigma_hat = churn_perturb(x, sigma, gamma, churn.s_noise, rng_churn)
        denoised = backend.predict_x0(x_hat, sigma_hat, cond)
        x = _euler_from_denoised(x_hat, sigma_hat, sigma_next, denoised)
        trace.append(StepRecord(
            t=t, sigma=float(sigma), sigma_hat=float(sigma_hat),
            latent_hash=sequence_hash(x_hat), denoised_hash=sequence_hash(denoised),
        ))
    return x, trace
