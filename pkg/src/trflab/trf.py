"""Fused bidirectional sampling between a start and an end frame.

One latent is denoised along two conditional paths at once: a forward path
conditioned on the start frame, and a backward path that sees the
frame-reversed latent conditioned on the end frame. After every step the
two predictions are fused frame-by-frame with weights that hand the start
of the sequence to the forward path and the end to the backward path; the
fused result is the closed-form minimizer of a weighted least-squares
objective over both paths. Above a cutoff step, noise re-injection repeats
the denoise-and-fuse cycle M times per step to reconcile disagreeing
paths while stochasticity is still high.

Also here: the two single-path baselines this strategy is measured
against — per-frame condition interpolation, and end-frame inpainting.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream, as_frame, as_sequence, gaussian_noise, reverse, sequence_hash
from .denoiser import Condition, DenoiserBackend, PerFrameConditionBackend, ROLE_START
from .sampler import (
    STREAM_AUX,
    STREAM_BACKWARD_INIT,
    STREAM_CHURN,
    STREAM_INIT,
    STREAM_REINJECT,
    StepRecord,
    StepTrace,
    _euler_from_denoised,
    churn_perturb,
    sample,
)
from .schedule import ChurnParams, NoiseSchedule, churn_gamma, injection_std

KIND_LINEAR = "linear"
KIND_EXPONENTIAL = "exponential"
KIND_CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class AlphaSchedule:
    """Per-frame fusion weights: 1 keeps the forward path, 0 the backward path."""

    kind: str
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 2:
            raise ValueError("alpha weights must be a 1-D array of length >= 2")
        if not np.all(np.isfinite(w)) or np.any(w < 0) or np.any(w > 1):
            raise ValueError("alpha weights must lie in [0, 1]")
        object.__setattr__(self, "weights", w)

    @property
    def n_frames(self) -> int:
        return self.weights.size

    @classmethod
    def from_weights(cls, weights, kind: str = KIND_CUSTOM) -> "AlphaSchedule":
        """Diagnostic constructor: accepts any [0,1] weights, e.g. all-ones
        to reduce fusion to the pure forward path. Endpoint pinning is not
        enforced here."""
        return cls(kind, np.asarray(weights, dtype=np.float64))

    @classmethod
    def constant(cls, value: float, n_frames: int) -> "AlphaSchedule":
        return cls.from_weights(np.full(n_frames, float(value)))


def alpha_weights(kind: str, n_frames: int, lam: float | None = None) -> AlphaSchedule:
    """Standard decaying weight schedules over n_frames frames.

    linear: alpha_n = 1 - n/(N-1).
    exponential: alpha_n = (exp(-lam n/(N-1)) - exp(-lam)) / (1 - exp(-lam)),
    which decays faster up front for larger lam and tends to linear as
    lam -> 0. Both kinds hit exactly 1 at frame 0 and 0 at frame N-1.
    """
    if n_frames < 2:
        raise ValueError(f"need at least 2 frames, got {n_frames}")
    u = np.arange(n_frames) / (n_frames - 1)
    if kind == KIND_LINEAR:
        w = 1.0 - u
    elif kind == KIND_EXPONENTIAL:
        if lam is None or lam <= 0:
            raise ValueError("exponential weights need lam > 0")
        w = (np.exp(-lam * u) - np.exp(-lam)) / (1.0 - np.exp(-lam))
    else:
        raise ValueError(f"unknown alpha kind {kind!r}")
    sched = AlphaSchedule(kind, w)
    assert sched.weights[0] == 1.0 and sched.weights[-1] == 0.0
    assert np.all(np.diff(sched.weights) <= 0)
    return sched


@dataclass(frozen=True)
class TrfConfig:
    """Knobs of the fused sampler.

    m_reinject is the number of re-injection cycles per step; t0 the cutoff
    step index below which re-injection stops (None resolves to ceil(T/2),
    keeping it active through the high-noise half). The share flags pin
    down which noise draws the two paths have in common: by default both
    paths start from identical noise and see the same churn perturbation.
    """

    alpha: AlphaSchedule
    m_reinject: int = 2
    t0: int | None = None
    share_initial_noise: bool = True
    share_churn_noise: bool = True
    churn: ChurnParams = field(default_factory=ChurnParams)

    def __post_init__(self):
        if self.m_reinject < 0:
            raise ValueError(f"m_reinject must be >= 0, got {self.m_reinject}")
        if self.t0 is not None and self.t0 < 0:
            raise ValueError(f"t0 must be >= 0, got {self.t0}")

    def resolved_t0(self, n_steps: int) -> int:
        t0 = math.ceil(n_steps / 2) if self.t0 is None else self.t0
        if not 0 <= t0 <= n_steps:
            raise ValueError(f"t0 must be in [0, {n_steps}], got {t0}")
        return t0


def fuse(x_fwd: np.ndarray, x_bwd: np.ndarray, alpha: AlphaSchedule) -> np.ndarray:
    """Frame-wise weighted average of the forward path and the reversed backward path.

    Output frame n is alpha_n * x_fwd[n] + (1 - alpha_n) * x_bwd[N-1-n].
    With pinned endpoint weights this hands frame 0 to the forward path and
    frame N-1 to the backward path exactly.
    """
    x_fwd = as_sequence(x_fwd)
    x_bwd = as_sequence(x_bwd, n_frames=x_fwd.shape[0], dim=x_fwd.shape[1])
    if alpha.n_frames != x_fwd.shape[0]:
        raise ValueError(f"alpha has {alpha.n_frames} weights for {x_fwd.shape[0]} frames")
    w = alpha.weights[:, None]
    return w * x_fwd + (1.0 - w) * x_bwd[::-1]


def fusion_objective(x: np.ndarray, x_fwd: np.ndarray, x_bwd: np.ndarray,
                     alpha: AlphaSchedule) -> float:
    """Weighted least-squares disagreement of x with both paths.

    sum_n [ alpha_n ||x[n] - x_fwd[n]||^2 + (1-alpha_n) ||x[n] - x_bwd[N-1-n]||^2 ].
    Because the two weights sum to 1 per frame, fuse() is the exact argmin.
    """
    x = as_sequence(x)
    x_fwd = as_sequence(x_fwd, n_frames=x.shape[0], dim=x.shape[1])
    x_bwd = as_sequence(x_bwd, n_frames=x.shape[0], dim=x.shape[1])
    w = alpha.weights
    fwd_term = ((x - x_fwd) ** 2).sum(axis=1)
    bwd_term = ((x - x_bwd[::-1]) ** 2).sum(axis=1)
    return float(np.sum(w * fwd_term + (1.0 - w) * bwd_term))


def trf_sample(backend: DenoiserBackend, schedule: NoiseSchedule, c_s: Condition,
               c_e: Condition, cfg: TrfConfig, rng: RngStream) -> tuple[np.ndarray, StepTrace]:
    """Bounded generation from c_s to c_e by fused two-path denoising.

    Per step (t counting down): churn the fused latent once, denoise it
    forward under c_s and reversed under c_e, fuse; while t is above the
    cutoff, re-noise the fused state back up to sigma_t (one shared draw),
    redo both denoise steps from sigma_t, and re-fuse, m_reinject times.
    Returns the final fused sequence and a T-record trace carrying the last
    fusion's objective value and path-disagreement norm per step.
    """
    n_frames, dim = backend.seq_shape
    if cfg.alpha.n_frames != n_frames:
        raise ValueError(f"alpha has {cfg.alpha.n_frames} weights for {n_frames} frames")
    if c_s.frame.shape != (dim,) or c_e.frame.shape != (dim,):
        raise ValueError("conditioning frames do not match the backend's frame dimension")
    n_steps = schedule.n_steps
    t0 = cfg.resolved_t0(n_steps)

    rng_init = rng.split(STREAM_INIT)
    rng_churn = rng.split(STREAM_CHURN)
    rng_rein = rng.split(STREAM_REINJECT)
    rng_bwd_churn = None if cfg.share_churn_noise else rng.split(STREAM_AUX)

    x = gaussian_noise((n_frames, dim), schedule.sigma_max, rng_init)
    x_bwd_first = None
    if not cfg.share_initial_noise:
        rng_bwd_init = rng.split(STREAM_BACKWARD_INIT)
        x_bwd_first = gaussian_noise((n_frames, dim), schedule.sigma_max, rng_bwd_init)

    trace = StepTrace()
    for t in range(n_steps - 1, -1, -1):
        sigma = schedule.sigma_at(t)
        sigma_next = schedule.sigma_at(t - 1) if t > 0 else 0.0
        gamma = churn_gamma(cfg.churn, sigma, n_steps)
        x_hat, sigma_hat = churn_perturb(x, sigma, gamma, cfg.churn.s_noise, rng_churn)
        if cfg.share_churn_noise:
            bwd_in = reverse(x_hat)
        else:
            bwd_in, _ = churn_perturb(reverse(x), sigma, gamma, cfg.churn.s_noise, rng_bwd_churn)
        if t == n_steps - 1 and x_bwd_first is not None:
            # Decoupled initialization: the backward path's first input is
            # its own noise draw, churned from its own stream.
            bwd_in, _ = churn_perturb(x_bwd_first, sigma, gamma, cfg.churn.s_noise, rng_bwd_init)

        fwd = _euler_from_denoised(x_hat, sigma_hat, sigma_next,
                                   backend.predict_x0(x_hat, sigma_hat, c_s))
        bwd = _euler_from_denoised(bwd_in, sigma_hat, sigma_next,
                                   backend.predict_x0(bwd_in, sigma_hat, c_e))
        x = fuse(fwd, bwd, cfg.alpha)

        fusions = 1
        if t > t0:
            # Re-injection: lift the fused state back to sigma_t (the new
            # noise's variance is exactly sigma_t^2 - sigma_{t-1}^2), redo
            # both paths from sigma_t with no churn, and fuse again.
            inj = injection_std(schedule, t)
            for _ in range(cfg.m_reinject):
                eps = gaussian_noise((n_frames, dim), inj, rng_rein)
                x_up = x + eps
                fwd = _euler_from_denoised(x_up, sigma, sigma_next,
                                           backend.predict_x0(x_up, sigma, c_s))
                bwd_up = reverse(x_up)
                bwd = _euler_from_denoised(bwd_up, sigma, sigma_next,
                                           backend.predict_x0(bwd_up, sigma, c_e))
                x = fuse(fwd, bwd, cfg.alpha)
                fusions += 1

        trace.append(StepRecord(
            t=t, sigma=float(sigma), sigma_hat=float(sigma_hat),
            latent_hash=sequence_hash(x_hat), denoised_hash=sequence_hash(x),
            fusions=fusions,
            objective=fusion_objective(x, fwd, bwd, cfg.alpha),
            disagreement=float(np.linalg.norm(fwd - reverse(bwd))),
        ))
    return x, trace


def baseline_condition_interp(backend: DenoiserBackend, schedule: NoiseSchedule,
                              c_s: Condition, c_e: Condition, rng: RngStream,
                              churn: ChurnParams | None = None,
                              noise_swap: bool = False) -> np.ndarray:
    """Single forward path steered by per-frame interpolated conditions.

    Frame n is denoised under condition (1 - n/(N-1)) c_s + n/(N-1) c_e.
    With noise_swap, the end frame is replaced by a unit-variance noise
    frame before interpolating — the it-barely-matters control showing how
    weakly the interpolated condition pins the far end.
    """
    if churn is None:
        churn = ChurnParams()
    n_frames, dim = backend.seq_shape
    end_frame = c_e.frame
    if noise_swap:
        end_frame = rng.split(STREAM_AUX).normal((dim,))
    u = np.linspace(0.0, 1.0, n_frames)
    conds = [Condition((1.0 - un) * c_s.frame + un * end_frame, role=ROLE_START) for un in u]
    per_frame = PerFrameConditionBackend(backend, conds)
    x, _ = sample(per_frame, schedule, c_s, churn, rng)
    return x


def baseline_inpaint(backend: DenoiserBackend, schedule: NoiseSchedule, c_s: Condition,
                     end_frame, rng: RngStream,
                     churn: ChurnParams | None = None) -> np.ndarray:
    """Forward sampling with the last frame overwritten each step.

    After every Euler step the latent's final frame is replaced by the
    target diffused to the latent's current level, end + sigma * eps; the
    final step overwrites at sigma = 0, so the output ends exactly at the
    target. The rest of the sequence is never told about the target, which
    is what produces the characteristic late-sequence jump.
    """
    if churn is None:
        churn = ChurnParams()
    n_frames, dim = backend.seq_shape
    end = as_frame(end_frame, dim=dim)
    n_steps = schedule.n_steps
    rng_init = rng.split(STREAM_INIT)
    rng_churn = rng.split(STREAM_CHURN)
    rng_over = rng.split(STREAM_REINJECT)

    x = gaussian_noise((n_frames, dim), schedule.sigma_max, rng_init)
    for t in range(n_steps - 1, -1, -1):
        sigma = schedule.sigma_at(t)
        sigma_next = schedule.sigma_at(t - 1) if t > 0 else 0.0
        gamma = churn_gamma(churn, sigma, n_steps)
        x_hat, sigma_hat = churn_perturb(x, sigma, gamma, churn.s_noise, rng_churn)
        denoised = backend.predict_x0(x_hat, sigma_hat, c_s)
        x = _euler_from_denoised(x_hat, sigma_hat, sigma_next, denoised)
        x[-1] = end + gaussian_noise((dim,), sigma_next, rng_over)
    return x
