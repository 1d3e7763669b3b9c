"""Training-set generation and on-disk formats.

Covariance labels are computed on a fixed uniform lattice of cached
channels shared by all samples. Dataset files are plain CSV with a
versioned comment line carrying the metadata needed at inference time
(label rescale coefficient, channel amplitude scale, augmentation noise),
then a header row, then one sample per row. Floats are written with
shortest round-trip repr, so regeneration with the same seed is
byte-identical. The grid channel cache itself is a .npy array (also
byte-deterministic).
"""

import csv

import numpy as np

from .covariance import RegionSpec, discrete_ccm, label_scale, pack_cov
from .scene import channel_map_batch

DATASET_VERSION = 1


def uniform_grid(bounds, n_side):
    """(n_side^2, 2) lattice of cell centers over the bounds rectangle."""
    (x0, x1), (y0, y1) = bounds
    if n_side < 1:
        raise ValueError("n_side must be >= 1")
    xs = x0 + (x1 - x0) * (np.arange(n_side) + 0.5) / n_side
    ys = y0 + (y1 - y0) * (np.arange(n_side) + 0.5) / n_side
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def sample_positions(bounds, count, rng):
    """Uniform positions over the bounds rectangle, one per row."""
    (x0, x1), (y0, y1) = bounds
    rng = np.random.default_rng(rng)
    return np.stack(
        [rng.uniform(x0, x1, size=count), rng.uniform(y0, y1, size=count)], axis=1
    )


def gen_cov_dataset(cfg, scene, timing, grid, grid_channels, *, locations,
                    speeds_per_location, speed_range, rng):
    """Covariance training pairs: features (x, y, v), packed scaled labels.

    Locations are uniform over the coverage area, speeds uniform over the
    speed range, labels the moving-region covariance on the shared grid,
    packed and batch-normalized. Returns (features, packed_labels,
    coefficient).
    """
    rng = np.random.default_rng(rng)
    pos = sample_positions(scene.plane_bounds, locations, rng)
    v_lo, v_hi = speed_range
    feats = []
    mats = []
    for xy in pos:
        for _ in range(speeds_per_location):
            v = rng.uniform(v_lo, v_hi)
            spec = RegionSpec(xy, v, timing)
            mats.append(discrete_ccm(cfg, scene, spec, grid, grid_channels))
            feats.append([xy[0], xy[1], v])
    scaled, coefficient = label_scale(mats)
    labels = np.stack([pack_cov(m) for m in scaled])
    return np.asarray(feats), labels, coefficient


def gen_locator_dataset(cfg, scene, *, count, noise_energy_ratio, rng):
    """Locator training pairs: noisy normalized channels -> coordinates.

    Every channel is corrupted with circularly symmetric noise whose
    variance satisfies n_b * var / E||h||^2 = noise_energy_ratio, then
    normalized by zeta = E||h||. Returns (features, labels, zeta,
    noise_var); the clean channels are regenerated on demand via the
    returned label coordinates.
    """
    rng = np.random.default_rng(rng)
    pos = sample_positions(scene.plane_bounds, count, rng)
    h = channel_map_batch(cfg, scene, pos)
    norms = np.linalg.norm(h, axis=1)
    zeta = float(norms.mean())
    mean_energy = float((norms**2).mean())
    noise_var = noise_energy_ratio * mean_energy / cfg.n_total
    scale = np.sqrt(noise_var / 2.0)
    noisy = h + scale * (
        rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
    )
    feats = np.concatenate([noisy.real, noisy.imag], axis=1) / zeta
    return feats, pos.copy(), zeta, noise_var


def _write_rows(path, kind, meta, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        pairs = " ".join("%s=%s" % (k, repr(v) if isinstance(v, float) else v) for k, v in meta.items())
        fh.write("# ccmlab-dataset %s v%d %s\n" % (kind, DATASET_VERSION, pairs))
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def _read_rows(path, kind):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        head = fh.readline().split()
        if len(head) < 3 or head[1] != kind or head[2] != "v%d" % DATASET_VERSION:
            raise ValueError("%s is not a ccmlab %s dataset" % (path, kind))
        meta = {}
        for pair in head[3:]:
            key, _, val = pair.partition("=")
            meta[key] = float(val)
        reader = csv.reader(fh)
        next(reader)  # header
        data = np.array([[float(v) for v in row] for row in reader])
    return meta, data


def save_cov_dataset(path, features, labels, coefficient):
    n_out = labels.shape[1]
    header = ["x1", "x2", "v"] + ["o%d" % i for i in range(n_out)]
    rows = np.concatenate([features, labels], axis=1)
    _write_rows(path, "cov", {"coefficient": float(coefficient)}, header, rows)


def load_cov_dataset(path):
    """Returns (features, packed labels, coefficient)."""
    meta, data = _read_rows(path, "cov")
    return data[:, :3], data[:, 3:], meta["coefficient"]


def save_locator_dataset(path, features, labels, zeta, noise_var):
    n_in = features.shape[1]
    header = ["f%d" % i for i in range(n_in)] + ["x1", "x2"]
    rows = np.concatenate([features, labels], axis=1)
    _write_rows(
        path,
        "loc",
        {"zeta": float(zeta), "noise_var": float(noise_var)},
        header,
        rows,
    )


def load_locator_dataset(path):
    """Returns (features, coordinates, zeta, noise_var)."""
    meta, data = _read_rows(path, "loc")
    return data[:, :-2], data[:, -2:], meta["zeta"], meta["noise_var"]
