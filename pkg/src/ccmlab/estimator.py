"""Pilot design by water-filling, LMMSE / LS channel estimation, metrics.

Given a covariance prior R = Gamma Lambda Gamma^H, the pilot matrix for a
block of m_p pilot uses is

    P = sigma * Gamma [ diag(sqrt(max(mu - 1/lambda_i, 0))), 0 ]

with the water level mu chosen so tr(P P^H) equals the energy budget. The
unitary factor allowed on the right is fixed to the identity, and modes
are laid out in descending eigenvalue order, so outputs are reproducible.
Received pilots are y = P^H h + n with circularly symmetric noise, and
the LMMSE estimate is h_hat = R P (P^H R P + sigma^2 I)^{-1} y.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PilotMatrix:
    """Pilot block: (n_antennas, m_p) entries plus budget and noise level."""

    entries: np.ndarray
    energy_budget: float
    noise_std: float

    def __post_init__(self):
        object.__setattr__(self, "entries", np.asarray(self.entries, dtype=complex))
        if self.entries.ndim != 2 or self.entries.shape[1] < 1:
            raise ValueError("pilot matrix must be (n, m_p) with m_p >= 1")
        energy = float(np.sum(np.abs(self.entries) ** 2))
        if abs(energy - self.energy_budget) > 1e-9 * max(self.energy_budget, 1.0):
            raise ValueError(
                "pilot energy %.12g violates budget %.12g" % (energy, self.energy_budget)
            )

    @property
    def m_p(self):
        return self.entries.shape[1]


def _active_eigs(vals, trace, n):
    tol = 1e-12 * max(trace, 0.0) / n
    return vals > tol


def design_pilots(cov, m_p, energy, noise_std):
    """Water-filling pilot matrix for a covariance prior.

    Power on eigenmode i is sigma^2 * max(mu - 1/lambda_i, 0); mu is found
    by bisection of the monotone total-power curve (the active set is
    re-derived at every evaluation) and then refined in closed form from
    the final active set, so the energy constraint holds to 1e-9 relative.
    Eigenvalues below 1e-12 * tr(R)/n are excluded: repaired rank-deficient
    covariances would otherwise overflow 1/lambda.
    """
    cov = np.asarray(cov, dtype=complex)
    n = cov.shape[0]
    if m_p < 1:
        raise ValueError("m_p must be >= 1")
    if energy <= 0:
        raise ValueError("energy budget must be positive")
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    usable = _active_eigs(vals, float(vals.sum().real), n)
    usable[min(n, m_p):] = False  # cannot sound more modes than pilot uses
    if not usable.any():
        raise ValueError("no covariance direction worth sounding")
    lam = vals[usable]
    inv_lam = 1.0 / lam
    sigma2 = noise_std**2 if noise_std > 0 else 1.0

    def total_power(mu):
        return sigma2 * np.maximum(mu - inv_lam, 0.0).sum()

    lo = float(inv_lam.min())
    hi = lo + energy / sigma2 + float(inv_lam.max() - inv_lam.min())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total_power(mid) < energy:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(hi, 1.0):
            break
    mu = 0.5 * (lo + hi)
    active = mu > inv_lam
    # closed-form water level over the stabilized active set
    mu = (energy / sigma2 + inv_lam[active].sum()) / active.sum()
    power = sigma2 * np.maximum(mu - inv_lam, 0.0) * active

    amps = np.zeros(n)
    amps[np.flatnonzero(usable)] = np.sqrt(power)
    entries = np.zeros((n, m_p), dtype=complex)
    entries[:, :n] = vecs * amps
    return PilotMatrix(entries=entries, energy_budget=energy, noise_std=noise_std)


def uniform_pilots(n, m_p, energy, noise_std):
    """Covariance-agnostic baseline pilots: identity columns cycled to m_p.

    Every column carries energy / m_p; total energy equals the budget and
    the matrix has rank min(n, m_p).
    """
    entries = np.zeros((n, m_p), dtype=complex)
    entries[np.arange(m_p) % n, np.arange(m_p)] = np.sqrt(energy / m_p)
    return PilotMatrix(entries=entries, energy_budget=energy, noise_std=noise_std)


def simulate_pilot_rx(h, pilots, rng):
    """Received pilot samples y = P^H h + n for one channel.

    Noise is i.i.d. circularly symmetric complex Gaussian with variance
    noise_std^2 per sample; `rng` may be a Generator or an integer seed.
    """
    rng = np.random.default_rng(rng)
    h = np.asarray(h, dtype=complex)
    y = pilots.entries.conj().T @ h
    if pilots.noise_std > 0:
        scale = pilots.noise_std / np.sqrt(2.0)
        y = y + scale * (
            rng.standard_normal(pilots.m_p) + 1j * rng.standard_normal(pilots.m_p)
        )
    return y


def lmmse_estimate(y, pilots, cov):
    """LMMSE channel estimate from received pilots under a covariance prior."""
    y = np.asarray(y, dtype=complex)
    p = pilots.entries
    cov = np.asarray(cov, dtype=complex)
    gram = p.conj().T @ cov @ p + pilots.noise_std**2 * np.eye(pilots.m_p)
    if pilots.noise_std == 0.0 and np.linalg.matrix_rank(gram) < pilots.m_p:
        raise np.linalg.LinAlgError(
            "singular pilot system: zero noise with rank-deficient pilots"
        )
    return cov @ p @ np.linalg.solve(gram, y)


def ls_estimate(y, pilots):
    """Least-squares channel estimate, minimizing ||y - P^H h||.

    Requires pilots of full row rank (every antenna sounded).
    """
    y = np.asarray(y, dtype=complex)
    n = pilots.entries.shape[0]
    sol, _, rank, _ = np.linalg.lstsq(pilots.entries.conj().T, y, rcond=None)
    if rank < n:
        raise np.linalg.LinAlgError("rank-deficient pilots: LS needs rank n")
    return sol


def nmse_r(truth, est):
    """Normalized covariance error: sum ||R - R_hat||_F^2 / sum ||R||_F^2."""
    truth, est = list(truth), list(est)
    if len(truth) != len(est):
        raise ValueError("length mismatch")
    num = sum(float(np.linalg.norm(a - b) ** 2) for a, b in zip(truth, est))
    den = sum(float(np.linalg.norm(a) ** 2) for a in truth)
    return num / den


def nmse_h(truth, est):
    """Normalized channel error: sum ||h - h_hat||^2 / sum ||h||^2."""
    truth = np.asarray(truth, dtype=complex)
    est = np.asarray(est, dtype=complex)
    if truth.shape != est.shape:
        raise ValueError("length mismatch")
    num = float(np.sum(np.abs(truth - est) ** 2))
    den = float(np.sum(np.abs(truth) ** 2))
    return num / den


def rmse_l(errors):
    """Per-coordinate location RMSE: sqrt(sum ||e||^2 / (2 * count))."""
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    return float(np.sqrt(np.sum(errors**2) / (2.0 * len(errors))))


def snr(energy, m_p, noise_var, channels):
    """Linear pilot SNR: (P / (m_p sigma^2 count)) * sum ||h||^2."""
    channels = np.atleast_2d(np.asarray(channels, dtype=complex))
    total = float(np.sum(np.abs(channels) ** 2))
    return energy * total / (m_p * noise_var * len(channels))


def energy_for_snr(snr_linear, m_p, noise_var, channels):
    """Energy budget P that achieves a target linear SNR on these channels."""
    channels = np.atleast_2d(np.asarray(channels, dtype=complex))
    total = float(np.sum(np.abs(channels) ** 2))
    if total <= 0:
        raise ValueError("channels carry no energy")
    return snr_linear * m_p * noise_var * len(channels) / total
