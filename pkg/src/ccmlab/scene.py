"""Deterministic synthetic propagation scene.

The scene realizes the one-to-one position -> channel map used everywhere
downstream: a base station, a horizontal coverage plane for the user, and
a handful of vertical planar reflectors. Paths are the line of sight (when
no reflector blocks it) plus one first-order specular reflection per
reflector, found with the image method: mirror the BS across the reflector
plane and intersect the mirrored ray with the reflector rectangle.

Amplitudes decay as 1/length^(pathloss_exponent/2) from a complex
reference gain at 1 m; reflections are additionally scaled by the
reflector coefficient. When the scene carries a propagation wavelength,
every path additionally rotates by exp(-j 2 pi length / wavelength); this
makes channels (and covariances) decorrelate on the wavelength scale, the
regime where covariance quality actually depends on location accuracy.
With wavelength None the gains stay phase-free. Everything is pure
geometry: identical inputs give identical outputs, bit for bit.
"""

import json
from dataclasses import dataclass

import numpy as np

from .geometry import PathComponent, steering_matrix, synthesize_channel

SCENE_SCHEMA = 1


@dataclass(frozen=True)
class Reflector:
    """Vertical rectangular reflector.

    anchor is the rectangle center; normal is a unit horizontal vector;
    extent is (width, height) in meters. The rectangle spans
    anchor +/- width/2 along ez x normal and +/- height/2 along ez.
    """

    anchor: np.ndarray
    normal: np.ndarray
    extent: tuple
    coefficient: complex

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float))
        object.__setattr__(self, "extent", (float(self.extent[0]), float(self.extent[1])))
        object.__setattr__(self, "coefficient", complex(self.coefficient))
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise ValueError("reflector normal must be unit length")
        if abs(self.normal[2]) > 1e-9:
            raise ValueError("reflector must be vertical (horizontal normal)")
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ValueError("reflector extent must be positive")
        if abs(self.coefficient) > 1.0 + 1e-12:
            raise ValueError("reflection coefficient magnitude must be <= 1")

    @property
    def tangent(self):
        """Unit horizontal vector along the rectangle width (ez x normal)."""
        return np.array([-self.normal[1], self.normal[0], 0.0])


@dataclass(frozen=True)
class Scene:
    bs_position: np.ndarray
    plane_height: float
    plane_bounds: tuple  # ((x_min, x_max), (y_min, y_max))
    reflectors: tuple
    pathloss_exponent: float = 2.0
    reference_gain: complex = 1.0
    wavelength: float = None  # propagation phase scale; None = phase-free gains

    def __post_init__(self):
        object.__setattr__(self, "bs_position", np.asarray(self.bs_position, dtype=float))
        (x0, x1), (y0, y1) = self.plane_bounds
        bounds = ((float(x0), float(x1)), (float(y0), float(y1)))
        object.__setattr__(self, "plane_bounds", bounds)
        object.__setattr__(self, "reflectors", tuple(self.reflectors))
        object.__setattr__(self, "reference_gain", complex(self.reference_gain))
        if x1 <= x0 or y1 <= y0:
            raise ValueError("plane_bounds must be a non-degenerate rectangle")
        if self.pathloss_exponent < 2.0:
            raise ValueError("pathloss_exponent must be >= 2")
        if self.wavelength is not None:
            object.__setattr__(self, "wavelength", float(self.wavelength))
            if self.wavelength <= 0:
                raise ValueError("wavelength must be positive")
        if abs(self.bs_position[2] - self.plane_height) < 1e-9 and self._bs_over_plane():
            raise ValueError("BS must not lie on the coverage plane")

    def path_gain(self, lengths, coefficient=1.0):
        """Complex gain of a path of given length (scalar or array)."""
        lengths = np.asarray(lengths, dtype=float)
        gain = self.reference_gain * coefficient / lengths ** (self.pathloss_exponent / 2.0)
        if self.wavelength is not None:
            gain = gain * np.exp(-2j * np.pi * lengths / self.wavelength)
        return gain

    def _bs_over_plane(self):
        (x0, x1), (y0, y1) = self.plane_bounds
        return x0 <= self.bs_position[0] <= x1 and y0 <= self.bs_position[1] <= y1

    def contains(self, xy):
        (x0, x1), (y0, y1) = self.plane_bounds
        xy = np.asarray(xy, dtype=float)
        return bool(x0 <= xy[0] <= x1 and y0 <= xy[1] <= y1)

    def clamp(self, xy):
        """Clamp plane coordinates into the coverage rectangle."""
        (x0, x1), (y0, y1) = self.plane_bounds
        xy = np.asarray(xy, dtype=float)
        return np.array([min(max(xy[0], x0), x1), min(max(xy[1], y0), y1)])

    def to_points(self, positions):
        """Lift (n, 2) plane coordinates to 3-D points on the plane."""
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        pts = np.empty((len(positions), 3))
        pts[:, :2] = positions
        pts[:, 2] = self.plane_height
        return pts


def _spherical_departure(dirs):
    """Elevation (from +z) and azimuth of unit direction rows."""
    el = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    az = np.arctan2(dirs[:, 1], dirs[:, 0])
    return el, az


def _segment_hits_rectangle(ref, a, pts):
    """Mask of points whose segment from `a` crosses the reflector rectangle.

    `a` is a 3-vector, `pts` an (n, 3) array. Touching the plane without
    crossing does not count.
    """
    s_a = float(np.dot(ref.normal, a - ref.anchor))
    s_p = (pts - ref.anchor) @ ref.normal
    crossing = (s_a * s_p) < 0.0
    if not crossing.any():
        return crossing
    t = s_a / (s_a - s_p[crossing])
    q = a + t[:, None] * (pts[crossing] - a)
    xi = (q - ref.anchor) @ ref.tangent
    dz = q[:, 2] - ref.anchor[2]
    inside = (np.abs(xi) <= ref.extent[0] / 2) & (np.abs(dz) <= ref.extent[1] / 2)
    out = np.zeros(len(pts), dtype=bool)
    out[np.flatnonzero(crossing)[inside]] = True
    return out


def _reflection_geometry(ref, bs, pts):
    """First-order image-method reflection of the BS toward each point.

    Returns (valid mask, path lengths, wall hit points). Valid means BS and
    user sit on the same side of the reflector plane and the mirrored ray
    meets the rectangle.
    """
    n = len(pts)
    s_b = float(np.dot(ref.normal, bs - ref.anchor))
    s_p = (pts - ref.anchor) @ ref.normal
    same_side = (s_b * s_p) > 0.0
    image = bs - 2.0 * s_b * ref.normal
    diff = pts - image
    lengths = np.linalg.norm(diff, axis=1)
    # the mirrored segment always crosses the plane when sides match
    denom = -s_b - s_p
    valid = same_side & (np.abs(denom) > 0.0) & (lengths > 0.0)
    t = np.zeros(n)
    t[valid] = -s_b / denom[valid]
    q = image + t[:, None] * diff
    xi = (q - ref.anchor) @ ref.tangent
    dz = q[:, 2] - ref.anchor[2]
    valid &= (np.abs(xi) <= ref.extent[0] / 2) & (np.abs(dz) <= ref.extent[1] / 2)
    return valid, lengths, q


def trace_paths(scene, pos_xy):
    """All propagation paths from the BS to one plane position.

    Returns a list of `PathComponent`: the line of sight when no reflector
    rectangle blocks the segment, plus one image-method reflection per
    reflector with valid mirror geometry. Raises ValueError when the
    position is outside the coverage plane or no path at all reaches it.
    """
    pos_xy = np.asarray(pos_xy, dtype=float)
    if not scene.contains(pos_xy):
        raise ValueError("position %s outside coverage plane" % (pos_xy,))
    pt = scene.to_points(pos_xy[None, :])
    bs = scene.bs_position
    paths = []

    blocked = np.zeros(1, dtype=bool)
    for ref in scene.reflectors:
        blocked |= _segment_hits_rectangle(ref, bs, pt)
    if not blocked[0]:
        d = float(np.linalg.norm(pt[0] - bs))
        el, az = _spherical_departure((pt - bs) / d)
        paths.append(PathComponent(complex(scene.path_gain(d)), float(el[0]), float(az[0])))

    for ref in scene.reflectors:
        valid, lengths, q = _reflection_geometry(ref, bs, pt)
        if valid[0]:
            leg = q[0] - bs
            el, az = _spherical_departure(leg[None, :] / np.linalg.norm(leg))
            gain = complex(scene.path_gain(lengths[0], ref.coefficient))
            paths.append(PathComponent(gain, float(el[0]), float(az[0])))

    if not paths:
        raise ValueError(
            "scene defect: no propagation path reaches position %s" % (pos_xy,)
        )
    return paths


def channel_map(cfg, scene, pos_xy):
    """Ground-truth channel at one plane position."""
    return synthesize_channel(cfg, trace_paths(scene, pos_xy))


def channel_map_batch(cfg, scene, positions):
    """Channels for (n, 2) plane positions, one per row.

    Vectorized across positions; agrees with per-position `channel_map`.
    Raises when any position is outside the plane or unreachable.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    (x0, x1), (y0, y1) = scene.plane_bounds
    ok = (
        (positions[:, 0] >= x0)
        & (positions[:, 0] <= x1)
        & (positions[:, 1] >= y0)
        & (positions[:, 1] <= y1)
    )
    if not ok.all():
        raise ValueError("positions outside coverage plane: %s" % positions[~ok])
    pts = scene.to_points(positions)
    bs = scene.bs_position
    n = len(pts)
    h = np.zeros((n, cfg.n_total), dtype=complex)
    n_paths = np.zeros(n, dtype=int)

    blocked = np.zeros(n, dtype=bool)
    for ref in scene.reflectors:
        blocked |= _segment_hits_rectangle(ref, bs, pts)
    vis = ~blocked
    if vis.any():
        diff = pts[vis] - bs
        dists = np.linalg.norm(diff, axis=1)
        el, az = _spherical_departure(diff / dists[:, None])
        h[vis] += scene.path_gain(dists)[:, None] * steering_matrix(cfg, el, az)
        n_paths[vis] += 1

    for ref in scene.reflectors:
        valid, lengths, q = _reflection_geometry(ref, bs, pts)
        if valid.any():
            legs = q[valid] - bs
            legs /= np.linalg.norm(legs, axis=1)[:, None]
            el, az = _spherical_departure(legs)
            gains = scene.path_gain(lengths[valid], ref.coefficient)
            h[valid] += gains[:, None] * steering_matrix(cfg, el, az)
            n_paths[valid] += 1

    if (n_paths == 0).any():
        raise ValueError(
            "scene defect: %d positions have no propagation path"
            % int((n_paths == 0).sum())
        )
    return h


def mean_channel_norm(cfg, scene, sample_positions):
    """Average channel 2-norm over sample positions (amplitude scale zeta)."""
    sample_positions = np.atleast_2d(np.asarray(sample_positions, dtype=float))
    if len(sample_positions) == 0:
        raise ValueError("need at least one sample position")
    h = channel_map_batch(cfg, scene, sample_positions)
    return float(np.mean(np.linalg.norm(h, axis=1)))


def default_scene():
    """Built-in 30 m x 30 m scene with four reflectors.

    Local frame: the coverage rectangle is [0, 30] x [0, 30] at height
    1.5 m with its vertex at the origin; the BS sits outside the rectangle
    at (-25, -30, 10). Two large far walls guarantee reflected coverage
    everywhere; two small interior walls shadow parts of the plane so path
    counts vary across it. The 16 m propagation wavelength makes the
    covariance decorrelate over roughly the meter scale of the location
    noise studied in experiments while staying resolvable by desk-scale
    training sets.
    """
    return Scene(
        bs_position=[-25.0, -30.0, 10.0],
        plane_height=1.5,
        plane_bounds=((0.0, 30.0), (0.0, 30.0)),
        reflectors=(
            Reflector([32.0, 15.0, 5.0], [-1.0, 0.0, 0.0], (40.0, 10.0), 0.8),
            Reflector([15.0, 33.0, 5.0], [0.0, -1.0, 0.0], (40.0, 10.0), 0.7 * np.exp(0.5j)),
            Reflector([8.0, 20.0, 3.0], [-0.6, -0.8, 0.0], (6.0, 6.0), 0.6),
            Reflector([22.0, 8.0, 3.0], [-0.8, -0.6, 0.0], (5.0, 8.0), 0.5 * np.exp(-1.0j)),
        ),
        wavelength=16.0,
    )


def _complex_to_json(z):
    return [float(np.real(z)), float(np.imag(z))]


def save_scene(scene, path):
    """Write the scene description as schema-1 JSON."""
    doc = {
        "schema": SCENE_SCHEMA,
        "bs_position": list(map(float, scene.bs_position)),
        "plane_height": float(scene.plane_height),
        "plane_bounds": [list(scene.plane_bounds[0]), list(scene.plane_bounds[1])],
        "pathloss_exponent": float(scene.pathloss_exponent),
        "reference_gain": _complex_to_json(scene.reference_gain),
        "wavelength": scene.wavelength,
        "reflectors": [
            {
                "anchor": list(map(float, r.anchor)),
                "normal": list(map(float, r.normal)),
                "extent": list(r.extent),
                "coefficient": _complex_to_json(r.coefficient),
            }
            for r in scene.reflectors
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_scene(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema") != SCENE_SCHEMA:
        raise ValueError("unsupported scene schema: %r" % doc.get("schema"))
    refs = tuple(
        Reflector(
            r["anchor"],
            r["normal"],
            tuple(r["extent"]),
            complex(r["coefficient"][0], r["coefficient"][1]),
        )
        for r in doc["reflectors"]
    )
    return Scene(
        bs_position=doc["bs_position"],
        plane_height=doc["plane_height"],
        plane_bounds=(tuple(doc["plane_bounds"][0]), tuple(doc["plane_bounds"][1])),
        reflectors=refs,
        pathloss_exponent=doc["pathloss_exponent"],
        reference_gain=complex(doc["reference_gain"][0], doc["reference_gain"][1]),
        wavelength=doc.get("wavelength"),
    )
