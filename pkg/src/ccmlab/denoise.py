"""Location denoising in a Kalman framework.

Three independent readings of the user position at a block boundary are
fused: the uploaded position (noise sigma_c^2 I), the locator network
applied to the last estimated channel of the previous block (error
statistics estimated offline on a held-out sample set), and the prior
carried from the previous block inflated by a motion term. A user moving
at speed v for t_co seconds lands uniformly in a disc of radius v*t_co;
the Gaussian surrogate with matching mean and covariance adds
(v^2 t_co^2 / 4) I to the prior covariance. The fused posterior is the
Gaussian product

    R_post = (I/sigma_c^2 + R_n^{-1} + (R_prior + R_motion)^{-1})^{-1}
    m_post = R_post (R_n^{-1} (loc_net - m_n) + x_up/sigma_c^2
             + (R_prior + R_motion)^{-1} m_prior)

and is carried to the next block. Covariances get a 1e-9 I ridge before
inversion; near-deterministic locators would otherwise make them singular.
"""

import json
from dataclasses import dataclass

import numpy as np

REG = 1e-9


@dataclass(frozen=True)
class ErrorStats:
    """Locator error moments: bias (2,) and covariance (2, 2)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        _check_cov(self.cov)


@dataclass(frozen=True)
class GaussianBelief:
    """Gaussian position belief carried across blocks."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        _check_cov(self.cov)


@dataclass(frozen=True)
class DenoiseInputs:
    """Per-block measurements feeding one fusion step.

    speed is the motion-model speed, i.e. the speed reported at the start
    of the PREVIOUS block (the displacement being bridged happened at that
    speed).
    """

    uploaded_location: np.ndarray
    uploaded_noise_var: float
    locator_estimate: np.ndarray
    speed: float
    coct_duration: float

    def __post_init__(self):
        object.__setattr__(
            self, "uploaded_location", np.asarray(self.uploaded_location, dtype=float)
        )
        object.__setattr__(
            self, "locator_estimate", np.asarray(self.locator_estimate, dtype=float)
        )
        if self.uploaded_noise_var < 0 or self.speed < 0:
            raise ValueError("noise variance and speed must be >= 0")


def _check_cov(cov):
    if cov.shape != (2, 2):
        raise ValueError("covariance must be 2x2")
    if np.linalg.norm(cov - cov.T) > 1e-9 * max(1.0, np.linalg.norm(cov)):
        raise ValueError("covariance must be symmetric")
    if np.linalg.eigvalsh(cov).min() < -1e-9 * max(1.0, float(np.abs(cov).max())):
        raise ValueError("covariance must be positive semidefinite")


def estimate_error_stats(locator, samples, noise_var, draws_per_sample=20, seed=0):
    """Locator error mean and covariance on a held-out sample set.

    `locator` maps a batch of channels (rows) to plane coordinates.
    Each of the W clean channels is corrupted with `draws_per_sample`
    fresh circularly symmetric noise draws of variance `noise_var`; the
    W*Q error vectors give the bias and the unbiased covariance (divisor
    W*Q - 1). Returns (ErrorStats, per-coordinate RMSE of the errors).
    """
    samples = list(samples)
    w = len(samples)
    q = int(draws_per_sample)
    if w < 1 or q < 1:
        raise ValueError("need at least one sample and one draw")
    if w * q < 2:
        raise ValueError("W*Q must be >= 2 for an unbiased covariance")
    rng = np.random.default_rng(seed)
    channels = np.array([s[0] for s in samples], dtype=complex)
    coords = np.array([s[1] for s in samples], dtype=float)
    n_b = channels.shape[1]
    scale = np.sqrt(noise_var / 2.0)
    errors = np.empty((w * q, 2))
    for j in range(q):
        noisy = channels
        if noise_var > 0:
            noisy = channels + scale * (
                rng.standard_normal((w, n_b)) + 1j * rng.standard_normal((w, n_b))
            )
        errors[j * w : (j + 1) * w] = np.atleast_2d(locator(noisy)) - coords
    mean = errors.mean(axis=0)
    centered = errors - mean
    cov = centered.T @ centered / (w * q - 1)
    from .estimator import rmse_l

    return ErrorStats(mean=mean, cov=cov), rmse_l(errors)


def motion_prior(belief, speed, coct_duration):
    """Inflate a belief by the disc-uniform motion surrogate.

    The covariance of a uniform draw from a disc of radius r is (r^2/4) I,
    so the prior gains (speed^2 * coct_duration^2 / 4) I; the mean is
    unchanged.
    """
    bump = (speed * coct_duration) ** 2 / 4.0
    return GaussianBelief(mean=belief.mean, cov=belief.cov + bump * np.eye(2))


def fuse(belief_prior, stats, inputs):
    """Fuse prior, uploaded position, and locator reading into a posterior.

    The prior is first motion-inflated using the speed and block duration
    carried in `inputs`; precision additivity
    R_post^{-1} = I/sigma_c^2 + R_n^{-1} + (R_prior + R_motion)^{-1}
    holds exactly up to the 1e-9 inversion ridge.
    """
    pred = motion_prior(belief_prior, inputs.speed, inputs.coct_duration)
    eye = np.eye(2)
    lam_up = eye / (inputs.uploaded_noise_var + REG)
    lam_loc = np.linalg.inv(stats.cov + REG * eye)
    lam_prior = np.linalg.inv(pred.cov + REG * eye)
    precision = lam_up + lam_loc + lam_prior
    if not np.isfinite(precision).all():
        raise np.linalg.LinAlgError("singular covariance in fusion")
    cov = np.linalg.inv(precision)
    corrected = inputs.locator_estimate - stats.mean
    mean = cov @ (
        lam_loc @ corrected
        + lam_up @ inputs.uploaded_location
        + lam_prior @ pred.mean
    )
    if not np.isfinite(mean).all():
        raise np.linalg.LinAlgError("non-finite fusion result")
    return GaussianBelief(mean=mean, cov=0.5 * (cov + cov.T))


@dataclass
class BlockRecord:
    """Outcome of one covariance block in the denoised pipeline."""

    used_location: np.ndarray
    belief: GaussianBelief
    cov_used: np.ndarray
    last_channel_estimate: np.ndarray


def run_denoised_pipeline(
    uploads_xy,
    uploads_speed,
    *,
    cov_predictor,
    locator,
    stats,
    sigma_c_sq,
    coct_duration,
    clamp,
    estimate_block,
):
    """Covariance estimation with location denoising across blocks.

    Block 1 uses the raw upload (belief seeded with mean = upload and
    covariance sigma_c^2 I); from block 2 on, the locator reading of the
    previous block's last estimated channel is fused with the upload and
    the carried belief, and the fused mean (clamped into the coverage
    area) feeds the covariance predictor. The belief itself is carried
    unclamped.

    cov_predictor(xy, speed) -> covariance; locator(channel) -> xy;
    clamp(xy) -> xy inside the area; estimate_block(k, cov) runs the k-th
    block's channel estimation under `cov` and returns the last slot's
    channel estimate.
    """
    uploads_xy = np.atleast_2d(np.asarray(uploads_xy, dtype=float))
    uploads_speed = np.asarray(uploads_speed, dtype=float)
    n_blocks = len(uploads_xy)
    records = []
    belief = None
    h_last = None
    for k in range(n_blocks):
        if k == 0:
            used = clamp(uploads_xy[0])
            belief = GaussianBelief(mean=uploads_xy[0], cov=sigma_c_sq * np.eye(2))
        else:
            inputs = DenoiseInputs(
                uploaded_location=uploads_xy[k],
                uploaded_noise_var=sigma_c_sq,
                locator_estimate=np.asarray(locator(h_last), dtype=float).ravel(),
                speed=uploads_speed[k - 1],
                coct_duration=coct_duration,
            )
            belief = fuse(belief, stats, inputs)
            used = clamp(belief.mean)
        cov = cov_predictor(used, uploads_speed[k])
        h_last = estimate_block(k, cov)
        records.append(
            BlockRecord(
                used_location=used,
                belief=belief,
                cov_used=cov,
                last_channel_estimate=np.asarray(h_last, dtype=complex),
            )
        )
    return records


def save_error_stats(stats, path, *, w, q, seed, rmse=None):
    """Persist locator error statistics as a small JSON document."""
    doc = {
        "mean": [float(v) for v in stats.mean],
        "cov": [[float(v) for v in row] for row in stats.cov],
        "w": int(w),
        "q": int(q),
        "seed": int(seed),
    }
    if rmse is not None:
        doc["rmse_l"] = float(rmse)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_error_stats(path):
    """Returns (ErrorStats, metadata dict with w, q, seed, rmse_l)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    stats = ErrorStats(mean=doc["mean"], cov=doc["cov"])
    return stats, {k: doc.get(k) for k in ("w", "q", "seed", "rmse_l")}
