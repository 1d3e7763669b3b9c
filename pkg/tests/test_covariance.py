import numpy as np
import pytest

from ccmlab.covariance import (
    RegionSpec,
    ccm_slotwise,
    discrete_ccm,
    label_scale,
    pack_cov,
    psd_repair,
    region_points,
    region_weight,
    unpack_cov,
)
from ccmlab.dataset import uniform_grid
from ccmlab.geometry import ArrayConfig
from ccmlab.scene import channel_map_batch, default_scene
from ccmlab.timing import DEFAULT_TIMING, FrameTiming

CFG = ArrayConfig(3, 4)
SCENE = default_scene()


def two_slot_spec(center=(0.0, 0.0), speed=1.0):
    # T_1 = 1 s, T_2 = 2 s
    return RegionSpec(np.asarray(center), speed, FrameTiming(t_o=1.0, t_c=1.0, n_cct=2))


def test_region_weight_hand_case():
    spec = two_slot_spec()
    assert abs(region_weight(1.5, spec) - 1.0 / (8.0 * np.pi)) < 1e-15


def test_region_weight_inside_all_discs():
    spec = two_slot_spec()
    expected = 0.5 * (1.0 / np.pi + 1.0 / (4.0 * np.pi))
    assert abs(region_weight(0.5, spec) - expected) < 1e-15


def test_region_weight_outside_region_is_zero():
    assert region_weight(2.5, two_slot_spec()) == 0.0


def test_region_weight_rejects_negative_radius():
    with pytest.raises(ValueError):
        region_weight(-0.1, two_slot_spec())


def test_region_points_single_and_symmetric():
    spec = two_slot_spec()
    pts, probs = region_points(spec, [[0.0, 0.0]])
    assert len(pts) == 1 and abs(probs[0] - 1.0) < 1e-15
    pts, probs = region_points(spec, [[1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    assert len(pts) == 2
    assert np.allclose(probs, 0.5)


def test_region_points_weights_proportional_to_density():
    spec = RegionSpec([0.0, 0.0], 4.0, DEFAULT_TIMING)
    radii = np.array([0.1, 0.5, 1.2]) * spec.radius
    grid = np.stack([radii, np.zeros(3)], axis=1)
    pts, probs = region_points(spec, grid)
    w = region_weight(radii[:2], spec)
    assert len(pts) == 2  # the 1.2-radius point is outside
    assert np.allclose(probs, w / w.sum(), atol=1e-12)
    assert abs(probs.sum() - 1.0) < 1e-12


def test_region_points_empty_selection_errors():
    spec = RegionSpec([15.0, 15.0], 0.001, DEFAULT_TIMING)
    with pytest.raises(ValueError):
        region_points(spec, [[0.0, 0.0]])


def test_discrete_ccm_single_point_is_rank_one():
    grid = np.array([[15.0, 15.0]])
    spec = RegionSpec([15.0, 15.0], 2.0, DEFAULT_TIMING)
    out = discrete_ccm(CFG, SCENE, spec, grid)
    h = channel_map_batch(CFG, SCENE, grid)[0]
    assert np.allclose(out, np.outer(h, h.conj()), atol=1e-14)
    assert abs(np.trace(out).real - np.linalg.norm(h) ** 2) < 1e-12


def test_discrete_ccm_matches_bruteforce_loop():
    grid = uniform_grid(SCENE.plane_bounds, 60)
    channels = channel_map_batch(CFG, SCENE, grid)
    rng = np.random.default_rng(0)
    for _ in range(5):
        spec = RegionSpec(rng.uniform(5, 25, 2), rng.uniform(2, 10), DEFAULT_TIMING)
        out = discrete_ccm(CFG, SCENE, spec, grid, channels)
        pts, probs = region_points(spec, grid)
        acc = np.zeros((12, 12), dtype=complex)
        d = np.linalg.norm(grid - spec.center, axis=1)
        sel = channels[d <= spec.radius]
        for p, h in zip(probs, sel):
            acc += p * np.outer(h, h.conj())
        assert np.linalg.norm(out - acc) < 1e-12 * np.linalg.norm(acc)
        # trace identity: probability-weighted mean squared norm
        assert abs(np.trace(out).real - probs @ np.linalg.norm(sel, axis=1) ** 2) < 1e-12


def test_discrete_ccm_speed_zero_limit():
    grid = np.array([[10.0, 10.0], [10.5, 10.0]])
    spec = RegionSpec([10.0, 10.0], 0.0, DEFAULT_TIMING)
    out = discrete_ccm(CFG, SCENE, spec, grid)
    h = channel_map_batch(CFG, SCENE, grid[:1])[0]
    assert np.allclose(out, np.outer(h, h.conj()), atol=1e-14)
    assert np.linalg.matrix_rank(out) == 1


def test_slotwise_route_matches_single_pass():
    grid = uniform_grid(SCENE.plane_bounds, 80)
    channels = channel_map_batch(CFG, SCENE, grid)
    rng = np.random.default_rng(3)
    for _ in range(5):
        spec = RegionSpec(rng.uniform(4, 26, 2), rng.uniform(2, 10), DEFAULT_TIMING)
        a = discrete_ccm(CFG, SCENE, spec, grid, channels)
        b = ccm_slotwise(CFG, SCENE, spec, grid, channels)
        assert np.linalg.norm(a - b) < 1e-12 * np.linalg.norm(a)


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(4)
    for n in (3, 12):
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        herm = 0.5 * (a + a.conj().T)
        packed = pack_cov(herm)
        assert packed.shape == (n * n,)
        assert np.array_equal(unpack_cov(packed), herm)


def test_pack_identity_layout():
    packed = pack_cov(np.eye(3, dtype=complex))
    o = packed.reshape(3, 3)
    assert np.allclose(np.diag(o), 1.0)
    assert np.allclose(o - np.diag(np.diag(o)), 0.0)


def test_pack_errors():
    with pytest.raises(ValueError):
        pack_cov(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        unpack_cov(np.zeros(5))


def test_packed_width_matches_default_output():
    assert pack_cov(np.eye(12, dtype=complex)).shape == (144,)


def test_psd_repair_spectrum_replacement():
    rng = np.random.default_rng(5)
    q = np.linalg.qr(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))[0]
    mat = (q * np.array([2.0, 1e-3, -0.5])) @ q.conj().T
    out = psd_repair(mat)
    assert np.allclose(np.linalg.eigvalsh(out), [1e-3, 1e-3, 2.0], atol=1e-10)


def test_psd_repair_keeps_psd_input():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    mat = a @ a.conj().T
    assert np.linalg.norm(psd_repair(mat) - mat) < 1e-10 * np.linalg.norm(mat)


def test_psd_repair_all_negative_gives_zero():
    assert np.allclose(psd_repair(-np.eye(3)), 0.0)


def test_psd_repair_preserves_eigenvectors():
    rng = np.random.default_rng(7)
    q = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))[0]
    vals = np.array([-1.0, 0.5, 2.0, 3.0])
    out = psd_repair((q * vals) @ q.conj().T)
    # repaired matrix must commute with the original eigenbasis
    for i, v in enumerate(vals):
        expect = 0.5 if v == -1.0 else v
        got = q[:, i].conj() @ out @ q[:, i]
        assert abs(got - expect) < 1e-10


def test_label_scale():
    mats = [np.eye(12, dtype=complex) * 2.0, np.eye(12, dtype=complex) * 2.0]
    scaled, coefficient = label_scale(mats)
    assert abs(coefficient - 2.0) < 1e-15
    assert np.allclose(scaled[0], np.eye(12))
    single, coefficient = label_scale([np.eye(12, dtype=complex)])
    assert abs(coefficient - 1.0) < 1e-15
    assert np.allclose(single[0], np.eye(12))
    rng = np.random.default_rng(8)
    batch = []
    for _ in range(10):
        a = rng.normal(size=(12, 12)) + 1j * rng.normal(size=(12, 12))
        batch.append(a @ a.conj().T)
    scaled, _ = label_scale(batch)
    mean_trace = np.mean([np.trace(m).real for m in scaled])
    assert abs(mean_trace - 12.0) < 1e-9
    with pytest.raises(ValueError):
        label_scale([])
    with pytest.raises(ValueError):
        label_scale([np.zeros((12, 12), dtype=complex)])
