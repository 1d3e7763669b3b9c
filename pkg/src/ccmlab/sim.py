"""Trajectories, baseline covariance strategies, and experiment orchestration.

A run sweeps trajectories, covariance blocks, pilot SNR points, and
covariance-selection methods, simulates pilot reception for every true
slot channel, and accumulates normalized channel-estimation error per
(method, noise level, SNR). The seven methods:

    ls             least-squares estimation with covariance-agnostic pilots
    identity       LMMSE under the trace-normalized identity covariance
    statistical    LMMSE under the outer-product average of the previous
                   block's own channel estimates (identity on block 1)
    loc_raw        LMMSE under the covariance predicted from the noisy
                   uploaded location and speed
    loc_denoised   as loc_raw with the upload denoised across blocks
    loc_noiseless  as loc_raw with exact location and speed
    perfect        LMMSE under the block's true mean outer product

Pilot noise is drawn from a stream keyed by (trajectory, block, SNR) only,
so every method sees identical noise realizations and comparisons are
paired. Upload noise is drawn once per trajectory as standard normals and
scaled by each sigma_c, which keeps sweeps over the noise level smooth.
The pilot energy budget realizes a target SNR through the run's average
true channel energy.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .covariance import RegionSpec, discrete_ccm
from .denoise import run_denoised_pipeline
from .estimator import (
    design_pilots,
    energy_for_snr,
    lmmse_estimate,
    ls_estimate,
    nmse_r,
    uniform_pilots,
)
from .nn import lcnet_predict, lenet_predict
from .scene import channel_map_batch
from .seeding import substream

METHODS = (
    "ls",
    "identity",
    "statistical",
    "loc_raw",
    "loc_denoised",
    "loc_noiseless",
    "perfect",
)
_SIGMA_C_DEPENDENT = ("loc_raw", "loc_denoised")


@dataclass(frozen=True)
class Trajectory:
    """Per-block starts, speeds, and slot positions of one user track."""

    starts: np.ndarray  # (n_coct, 2)
    speeds: np.ndarray  # (n_coct,)
    slot_positions: np.ndarray  # (n_coct, n_cct, 2)
    mode: str


def _truncated_gaussian(rng, sigma):
    while True:
        val = rng.normal(0.0, sigma)
        if -np.pi < val < np.pi:
            return val


def _advance(pos, direction, dist, bounds):
    """Move `dist` along `direction`, reflecting specularly off the edges."""
    (x0, x1), (y0, y1) = bounds
    x, y = pos[0] + direction[0] * dist, pos[1] + direction[1] * dist
    dx, dy = direction
    for _ in range(64):
        if x < x0:
            x, dx = 2 * x0 - x, -dx
        elif x > x1:
            x, dx = 2 * x1 - x, -dx
        elif y < y0:
            y, dy = 2 * y0 - y, -dy
        elif y > y1:
            y, dy = 2 * y1 - y, -dy
        else:
            return np.array([x, y]), np.array([dx, dy])
    raise RuntimeError("reflection did not converge; step larger than the area?")


def gen_trajectory(mode, timing, bounds, speed_range, n_coct, rng,
                   heading_sigma=np.pi / 4):
    """Simulate one track across `n_coct` covariance blocks.

    Speed is redrawn uniformly per block. In constant mode the heading is
    redrawn uniformly per block and held; in dynamic mode it additionally
    turns by a truncated-Gaussian angle at every slot boundary. Tracks
    reflect off the area edges so positions never leave the rectangle.
    """
    if mode not in ("constant", "dynamic"):
        raise ValueError("mode must be 'constant' or 'dynamic'")
    rng = np.random.default_rng(rng)
    (x0, x1), (y0, y1) = bounds
    v_lo, v_hi = speed_range
    if not 0 < v_lo <= v_hi:
        raise ValueError("speed range must satisfy 0 < v_lo <= v_hi")
    pos = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
    n = timing.n_cct
    starts = np.empty((n_coct, 2))
    speeds = np.empty(n_coct)
    slots = np.empty((n_coct, n, 2))
    for k in range(n_coct):
        starts[k] = pos
        speed = rng.uniform(v_lo, v_hi)
        speeds[k] = speed
        heading = rng.uniform(0.0, 2.0 * np.pi)
        direction = np.array([np.cos(heading), np.sin(heading)])
        durations = [timing.t_o] + [timing.t_c] * (n - 1)
        for q, dt in enumerate(durations):
            pos, direction = _advance(pos, direction, speed * dt, bounds)
            slots[k, q] = pos
            if mode == "dynamic":
                delta = _truncated_gaussian(rng, heading_sigma)
                cos_d, sin_d = np.cos(delta), np.sin(delta)
                direction = np.array(
                    [
                        cos_d * direction[0] - sin_d * direction[1],
                        sin_d * direction[0] + cos_d * direction[1],
                    ]
                )
        # remaining time until the next block start
        pos, direction = _advance(pos, direction, speed * (timing.t_co - timing.t_last), bounds)
    return Trajectory(starts=starts, speeds=speeds, slot_positions=slots, mode=mode)


def statistical_ccm(prev_channels, fallback_scale):
    """Outer-product average of the previous block's channel estimates.

    With no previous block (`prev_channels` is None) returns the
    trace-normalized identity `fallback_scale * I` (the caller supplies
    the antenna count via the fallback usage site); here None is invalid
    without `n` so the identity fallback is exposed separately.
    """
    if prev_channels is None:
        raise ValueError("use identity_ccm for the cold start")
    channels = np.atleast_2d(np.asarray(prev_channels, dtype=complex))
    if len(channels) == 0:
        raise ValueError("previous-block channel list must be non-empty")
    acc = channels.T @ channels.conj() / len(channels)
    return 0.5 * (acc + acc.conj().T)


def identity_ccm(n, fallback_scale):
    """Cold-start covariance: trace-normalized identity."""
    return fallback_scale * np.eye(n, dtype=complex)


def perfect_ccm(true_channels):
    """Mean outer product of the block's true slot channels."""
    h = np.asarray(true_channels, dtype=complex)
    acc = h.T @ h.conj() / len(h)
    return 0.5 * (acc + acc.conj().T)


@dataclass
class ExperimentReport:
    """Rows of (method, snr_db, metrics...) plus the run-level settings."""

    rows: list = field(default_factory=list)
    sigma_v: float = 0.0
    mode: str = "constant"
    seed: int = 0

    HEADER = ("method", "snr_db", "nmse_h", "nmse_r", "rmse_l", "sigma_c", "sigma_v", "mode", "seed")

    def add(self, method, snr_db, nmse_h_val, nmse_r_val, rmse_l_val, sigma_c):
        self.rows.append(
            {
                "method": method,
                "snr_db": snr_db,
                "nmse_h": nmse_h_val,
                "nmse_r": nmse_r_val,
                "rmse_l": rmse_l_val,
                "sigma_c": sigma_c,
                "sigma_v": self.sigma_v,
                "mode": self.mode,
                "seed": self.seed,
            }
        )

    def lookup(self, method, snr_db=None, sigma_c=None):
        """Rows matching the given method and optional keys."""
        out = []
        for row in self.rows:
            if row["method"] != method:
                continue
            if snr_db is not None and row["snr_db"] != snr_db:
                continue
            if sigma_c is not None and row["sigma_c"] != sigma_c:
                continue
            out.append(row)
        return out

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.HEADER)
            for row in self.rows:
                writer.writerow([_csv_cell(row[k]) for k in self.HEADER])


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


class _BlockEstimator:
    """Pilot design + reception + estimation for one block at one SNR."""

    def __init__(self, true_block, m_p, energy, noise_std, noise):
        self.h = true_block  # (n_cct, n_b)
        self.m_p = m_p
        self.energy = energy
        self.noise_std = noise_std
        self.noise = noise  # (n_cct, m_p) complex

    def _receive(self, pilots):
        return self.h @ pilots.entries.conj() + self.noise_std * self.noise

    def with_cov(self, cov):
        pilots = design_pilots(cov, self.m_p, self.energy, self.noise_std)
        y = self._receive(pilots)
        gram = (
            pilots.entries.conj().T @ cov @ pilots.entries
            + self.noise_std**2 * np.eye(self.m_p)
        )
        sol = np.linalg.solve(gram, y.T)
        return (cov @ pilots.entries @ sol).T

    def with_ls(self):
        n_b = self.h.shape[1]
        pilots = uniform_pilots(n_b, self.m_p, self.energy, self.noise_std)
        y = self._receive(pilots)
        sol, _, rank, _ = np.linalg.lstsq(pilots.entries.conj().T, y.T, rcond=None)
        if rank < n_b:
            raise np.linalg.LinAlgError("rank-deficient LS pilots")
        return sol.T


def _pilot_noise(seed, t, k, snr_idx, n_cct, m_p):
    rng = substream(seed, "pilot", t, k, snr_idx)
    return (rng.standard_normal((n_cct, m_p)) + 1j * rng.standard_normal((n_cct, m_p))) / np.sqrt(2.0)


def run_experiment(
    cfg,
    scene,
    timing,
    *,
    fallback_scale,
    lcnet=None,
    coefficient=None,
    lenet=None,
    zeta=None,
    stats=None,
    grid=None,
    grid_channels=None,
    methods=METHODS,
    snr_db=(0.0, 5.0, 10.0, 15.0, 20.0),
    sigma_c=(2.0,),
    sigma_v=0.0,
    n_trajectories=20,
    n_coct=10,
    speed_range=(2.0, 10.0),
    mode="constant",
    m_p=60,
    noise_std=1.0,
    seed=0,
    rmse_location=None,
):
    """End-to-end channel-estimation comparison; returns an ExperimentReport.

    Learned methods require the trained networks (and, for loc_denoised,
    locator error statistics); covariance-error columns additionally need
    the label grid. Bit-reproducible for a fixed argument set.
    """
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError("unknown method %r" % (m,))
    needs_net = set(methods) & {"loc_raw", "loc_denoised", "loc_noiseless"}
    if needs_net and (lcnet is None or coefficient is None):
        raise ValueError("methods %s need a trained covariance predictor" % sorted(needs_net))
    if "loc_denoised" in methods and (lenet is None or zeta is None or stats is None):
        raise ValueError("loc_denoised needs the locator network and its error statistics")
    sigma_c = tuple(float(s) for s in sigma_c)
    snr_db = tuple(float(s) for s in snr_db)

    bounds = scene.plane_bounds
    trajectories = [
        gen_trajectory(mode, timing, bounds, speed_range, n_coct, substream(seed, "trajectory", t))
        for t in range(n_trajectories)
    ]
    true_h = [
        np.stack([channel_map_batch(cfg, scene, tr.slot_positions[k]) for k in range(n_coct)])
        for tr in trajectories
    ]
    all_h = np.concatenate([h.reshape(-1, cfg.n_total) for h in true_h])
    energies = {s: energy_for_snr(10.0 ** (s / 10.0), m_p, noise_std**2, all_h) for s in snr_db}

    # upload noise: standard normal draws shared across sigma_c values
    z_loc = np.stack([substream(seed, "upload-loc", t).standard_normal((n_coct, 2)) for t in range(n_trajectories)])
    z_spd = np.stack([substream(seed, "upload-speed", t).standard_normal(n_coct) for t in range(n_trajectories)])
    v_lo, v_hi = speed_range
    noisy_speeds = np.clip(np.stack([tr.speeds for tr in trajectories]) + sigma_v * z_spd, v_lo, v_hi)

    def noisy_starts(sc):
        arr = np.stack([tr.starts for tr in trajectories]) + sc * z_loc
        arr[..., 0] = np.clip(arr[..., 0], bounds[0][0], bounds[0][1])
        arr[..., 1] = np.clip(arr[..., 1], bounds[1][0], bounds[1][1])
        return arr

    oracle_ccms = None
    if grid is not None:
        oracle_ccms = [
            [
                discrete_ccm(cfg, scene, RegionSpec(tr.starts[k], tr.speeds[k], timing), grid, grid_channels)
                for k in range(n_coct)
            ]
            for tr in trajectories
        ]

    def block_estimator(t, k, snr_idx):
        return _BlockEstimator(
            true_h[t][k],
            m_p,
            energies[snr_db[snr_idx]],
            noise_std,
            _pilot_noise(seed, t, k, snr_idx, timing.n_cct, m_p),
        )

    def predict_cov(xy, speed):
        return lcnet_predict(lcnet, coefficient, xy, speed)

    def accumulate(estimates, t):
        num = sum(float(np.sum(np.abs(true_h[t][k] - estimates[k]) ** 2)) for k in range(n_coct))
        den = sum(float(np.sum(np.abs(true_h[t][k]) ** 2)) for k in range(n_coct))
        return num, den

    report = ExperimentReport(sigma_v=sigma_v, mode=mode, seed=seed)

    def covariance_rows(ccms_by_tk):
        flat_est, flat_true = [], []
        for t in range(n_trajectories):
            for k in range(n_coct):
                flat_est.append(ccms_by_tk[t][k])
                flat_true.append(oracle_ccms[t][k])
        return nmse_r(flat_true, flat_est)

    # --- sigma_c-independent methods -------------------------------------
    for method in methods:
        if method in _SIGMA_C_DEPENDENT:
            continue
        ccms = None
        if method == "loc_noiseless":
            ccms = [
                [predict_cov(tr.starts[k], tr.speeds[k]) for k in range(n_coct)]
                for tr in trajectories
            ]
        nr = covariance_rows(ccms) if (ccms is not None and oracle_ccms is not None) else None
        for si, s in enumerate(snr_db):
            num = den = 0.0
            for t in range(n_trajectories):
                if method == "statistical":
                    est = np.empty_like(true_h[t])
                    cov = identity_ccm(cfg.n_total, fallback_scale)
                    for k in range(n_coct):
                        est[k] = block_estimator(t, k, si).with_cov(cov)
                        cov = statistical_ccm(est[k], fallback_scale)
                else:
                    est = np.empty_like(true_h[t])
                    for k in range(n_coct):
                        be = block_estimator(t, k, si)
                        if method == "ls":
                            est[k] = be.with_ls()
                        elif method == "identity":
                            est[k] = be.with_cov(identity_ccm(cfg.n_total, fallback_scale))
                        elif method == "perfect":
                            est[k] = be.with_cov(perfect_ccm(true_h[t][k]))
                        else:
                            est[k] = be.with_cov(ccms[t][k])
                n, d = accumulate(est, t)
                num += n
                den += d
            report.add(method, s, num / den, nr, rmse_location, None)

    # --- sigma_c-dependent methods ----------------------------------------
    for sc in sigma_c:
        starts = noisy_starts(sc)
        if "loc_raw" in methods:
            ccms = [
                [predict_cov(starts[t, k], noisy_speeds[t, k]) for k in range(n_coct)]
                for t in range(n_trajectories)
            ]
            nr = covariance_rows(ccms) if oracle_ccms is not None else None
            for si, s in enumerate(snr_db):
                num = den = 0.0
                for t in range(n_trajectories):
                    est = np.empty_like(true_h[t])
                    for k in range(n_coct):
                        est[k] = block_estimator(t, k, si).with_cov(ccms[t][k])
                    n, d = accumulate(est, t)
                    num += n
                    den += d
                report.add("loc_raw", s, num / den, nr, rmse_location, sc)
        if "loc_denoised" in methods:
            for si, s in enumerate(snr_db):
                num = den = 0.0
                ccms = []
                for t in range(n_trajectories):
                    estimates = {}

                    def estimate_block(k, cov, t=t, si=si, estimates=estimates):
                        est = block_estimator(t, k, si).with_cov(cov)
                        estimates[k] = est
                        return est[-1]

                    records = run_denoised_pipeline(
                        starts[t],
                        noisy_speeds[t],
                        cov_predictor=predict_cov,
                        locator=lambda h: lenet_predict(lenet, zeta, h),
                        stats=stats,
                        sigma_c_sq=sc**2,
                        coct_duration=timing.t_co,
                        clamp=scene.clamp,
                        estimate_block=estimate_block,
                    )
                    est = np.stack([estimates[k] for k in range(n_coct)])
                    n, d = accumulate(est, t)
                    num += n
                    den += d
                    ccms.append([r.cov_used for r in records])
                nr = covariance_rows(ccms) if oracle_ccms is not None else None
                report.add("loc_denoised", s, num / den, nr, rmse_location, sc)
    return report
