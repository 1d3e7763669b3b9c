"""Ground-truth channel covariance over user moving regions.

During one covariance block a user that reported position x and speed v at
the block start can be anywhere in the disc of radius v*T_q around x by
slot q. Assuming a uniform position distribution over each slot disc, the
block covariance is the slot average; collapsing the average into a single
radial density gives the weight

    w(rho) = (1/N) * sum_q f_q(rho),   f_q(rho) = 1/(pi v^2 T_q^2) for rho <= v*T_q

over the largest disc. On a fixed position grid the covariance becomes a
probability-weighted sum of channel outer products, which is what
`discrete_ccm` evaluates in one pass. `ccm_slotwise` computes the same
quantity the long way (one disc per slot, then average) sharing the same
point measure; the two agree algebraically.

Covariance matrices are Hermitian, so they round-trip through a real
vector of length n^2 holding real parts on and below the diagonal and
imaginary parts above it (`pack_cov` / `unpack_cov`).
"""

from dataclasses import dataclass

import numpy as np

from .scene import channel_map_batch


@dataclass(frozen=True)
class RegionSpec:
    """Moving region: reported center (2,), speed (m/s), frame timing."""

    center: np.ndarray
    speed: float
    timing: object

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.speed < 0:
            raise ValueError("speed must be >= 0")

    @property
    def radius(self):
        """Radius of the largest slot disc, v * T_N."""
        return self.speed * self.timing.t_last


def region_weight(rho, spec):
    """Radial density w(rho) of the collapsed moving-region distribution.

    Accepts scalar or array rho; independent of polar angle.
    """
    rho = np.asarray(rho, dtype=float)
    if (rho < 0).any():
        raise ValueError("rho must be >= 0")
    t_q = spec.timing.slot_offsets()
    if spec.speed == 0.0:
        # degenerate region: all mass at the center
        return np.where(rho == 0.0, np.inf, 0.0)
    radii = spec.speed * t_q
    inside = rho[..., None] <= radii
    f_q = inside / (np.pi * radii**2)
    return f_q.mean(axis=-1)


def region_points(spec, grid):
    """Grid points inside the moving region with their probabilities.

    Returns (points, probabilities); probabilities are region weights
    normalized over the selected points and sum to one. Raises when no
    grid point falls inside the region (caller must densify the grid).
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if len(grid) == 0:
        raise ValueError("grid must be non-empty")
    d = np.linalg.norm(grid - spec.center, axis=1)
    if spec.speed == 0.0:
        inside = d == 0.0
        if not inside.any():
            raise ValueError(
                "no grid point inside a zero-speed region; densify the grid"
            )
        w = np.ones(int(inside.sum()))
    else:
        inside = d <= spec.radius
        if not inside.any():
            raise ValueError(
                "no grid point inside region (radius %.3g m); densify the grid"
                % spec.radius
            )
        w = region_weight(d[inside], spec)
    return grid[inside], w / w.sum()


def _weighted_outer_sum(channels, probs):
    acc = (channels.T * probs) @ channels.conj()
    return 0.5 * (acc + acc.conj().T)


def discrete_ccm(cfg, scene, spec, grid, grid_channels=None):
    """Moving-region covariance as a weighted sum of channel outer products.

    `grid_channels` may carry precomputed channels aligned with `grid`
    rows; otherwise channels are mapped on the fly. Hermitian PSD by
    construction; the trace equals the probability-weighted mean of the
    selected squared channel norms.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    pts, probs = region_points(spec, grid)
    if grid_channels is not None:
        d = np.linalg.norm(grid - spec.center, axis=1)
        if spec.speed == 0.0:
            sel = d == 0.0
        else:
            sel = d <= spec.radius
        ch = np.asarray(grid_channels)[sel]
    else:
        ch = channel_map_batch(cfg, scene, pts)
    return _weighted_outer_sum(ch, probs)


def ccm_slotwise(cfg, scene, spec, grid, grid_channels=None):
    """Block covariance via per-slot discs: average of one CCM per slot.

    Slot q weights its disc (radius v*T_q) with the uniform density f_q;
    all slots share the region's point measure (each selected grid point
    carries the same area weight as in `discrete_ccm`), so this equals
    `discrete_ccm` up to roundoff. Kept as an independent evaluation path
    for cross-checking.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if spec.speed == 0.0:
        return discrete_ccm(cfg, scene, spec, grid, grid_channels)
    d = np.linalg.norm(grid - spec.center, axis=1)
    sel = d <= spec.radius
    if not sel.any():
        raise ValueError("no grid point inside region; densify the grid")
    if grid_channels is not None:
        ch = np.asarray(grid_channels)[sel]
    else:
        ch = channel_map_batch(cfg, scene, grid[sel])
    d = d[sel]
    # shared per-point area weight: 1 / sum of the collapsed density
    area = 1.0 / region_weight(d, spec).sum()
    t_q = spec.timing.slot_offsets()
    n = cfg.n_total
    acc = np.zeros((n, n), dtype=complex)
    for t in t_q:
        radius = spec.speed * t
        in_disc = d <= radius
        density = 1.0 / (np.pi * radius**2)
        sub = ch[in_disc]
        acc += density * area * (sub.T @ sub.conj())
    acc /= len(t_q)
    return 0.5 * (acc + acc.conj().T)


def _check_hermitian(mat, tol=1e-9):
    mat = np.asarray(mat)
    scale = max(np.linalg.norm(mat), 1.0)
    if np.linalg.norm(mat - mat.conj().T) > tol * scale:
        raise ValueError("matrix is not Hermitian within tolerance")
    return mat


def pack_cov(mat):
    """Flatten a Hermitian matrix into a real vector of length n^2.

    Row-major flatten of the real matrix holding Re on and below the
    diagonal and Im strictly above it.
    """
    mat = _check_hermitian(mat)
    packed = np.tril(mat.real) + np.triu(mat.imag, 1)
    return packed.ravel()


def unpack_cov(values):
    """Inverse of `pack_cov`; exact round trip for Hermitian input."""
    values = np.asarray(values, dtype=float)
    n = int(round(np.sqrt(values.size)))
    if n * n != values.size:
        raise ValueError("packed length %d is not a perfect square" % values.size)
    o = values.reshape(n, n)
    re = np.tril(o) + np.tril(o, -1).T
    im = np.triu(o, 1) - np.triu(o, 1).T
    return re + 1j * im


def psd_repair(mat):
    """Replace negative eigenvalues by the smallest nonnegative eigenvalue.

    Eigenvectors are preserved; when every eigenvalue is negative the
    result is the zero matrix. Output is Hermitian PSD.
    """
    mat = _check_hermitian(mat)
    vals, vecs = np.linalg.eigh(mat)
    nonneg = vals[vals >= 0.0]
    floor = float(nonneg.min()) if nonneg.size else 0.0
    vals = np.where(vals < 0.0, floor, vals)
    out = (vecs * vals) @ vecs.conj().T
    return 0.5 * (out + out.conj().T)


def label_scale(labels):
    """Normalize a label batch to mean trace n and return the undo factor.

    Every matrix is multiplied by n*S / sum(traces); the returned
    coefficient sum(traces) / (n*S) rescales network outputs back to
    physical units at inference time.
    """
    labels = list(labels)
    if not labels:
        raise ValueError("label batch must be non-empty")
    n = labels[0].shape[0]
    total = float(sum(np.trace(m).real for m in labels))
    if total <= 0.0:
        raise ValueError("total label trace must be positive")
    scale = n * len(labels) / total
    coefficient = 1.0 / scale
    return [m * scale for m in labels], coefficient
