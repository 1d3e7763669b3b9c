import numpy as np
import pytest

from ccmlab.geometry import ArrayConfig, PathComponent, steering_vector, synthesize_channel

CFG = ArrayConfig(n_ele=3, n_az=4)


def test_zero_phase_direction_gives_uniform_vector():
    # cos(theta) = 0 and sin(phi) = 0 kill every phase term
    v = steering_vector(CFG, np.pi / 2, 0.0)
    assert np.allclose(v, 1.0 / np.sqrt(12.0), atol=1e-15)


def test_default_array_has_twelve_elements():
    assert CFG.n_total == 12
    assert steering_vector(CFG, 1.0, 1.0).shape == (12,)


def test_two_element_elevation_phase():
    v = steering_vector(ArrayConfig(2, 1), np.pi / 3, 0.0)
    expected = np.array([1.0, np.exp(1j * np.pi * 0.5)]) / np.sqrt(2.0)
    assert np.allclose(v, expected, atol=1e-12)


def test_unit_norm_over_random_angles():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        el = rng.uniform(0.0, np.pi)
        az = rng.uniform(-np.pi, np.pi)
        assert abs(np.linalg.norm(steering_vector(CFG, el, az)) - 1.0) < 1e-12


def test_kronecker_entry_layout():
    rng = np.random.default_rng(4)
    k = 2.0 * np.pi * CFG.spacing_ratio
    for _ in range(20):
        el = rng.uniform(0.0, np.pi)
        az = rng.uniform(-np.pi, np.pi)
        v = steering_vector(CFG, el, az)
        a_ele = np.exp(1j * k * np.cos(el) * np.arange(CFG.n_ele))
        a_az = np.exp(1j * k * np.sin(el) * np.sin(az) * np.arange(CFG.n_az))
        for p in range(CFG.n_az):
            for q in range(CFG.n_ele):
                expected = a_az[p] * a_ele[q] / np.sqrt(CFG.n_total)
                assert abs(v[p * CFG.n_ele + q] - expected) < 1e-12


def test_angle_domain_errors():
    with pytest.raises(ValueError):
        steering_vector(CFG, -0.1, 0.0)
    with pytest.raises(ValueError):
        steering_vector(CFG, 0.5, 3.5)
    with pytest.raises(ValueError):
        PathComponent(1.0, 4.0, 0.0)


def test_single_unit_path_is_steering_vector():
    p = PathComponent(1.0, 0.7, -1.1)
    assert np.allclose(synthesize_channel(CFG, [p]), steering_vector(CFG, 0.7, -1.1))


def test_synthesis_additive_and_homogeneous():
    rng = np.random.default_rng(5)
    for _ in range(30):
        paths = [
            PathComponent(
                complex(rng.normal(), rng.normal()),
                rng.uniform(0, np.pi),
                rng.uniform(-np.pi, np.pi),
            )
            for _ in range(rng.integers(1, 6))
        ]
        split = rng.integers(1, len(paths) + 1) if len(paths) > 1 else 1
        p1, p2 = paths[:split], paths[split:]
        h = synthesize_channel(CFG, paths)
        parts = synthesize_channel(CFG, p1)
        if p2:
            parts = parts + synthesize_channel(CFG, p2)
        assert np.allclose(h, parts, atol=1e-12)
        scale = complex(rng.normal(), rng.normal())
        scaled = [PathComponent(scale * p.gain, p.elevation, p.azimuth) for p in paths]
        assert np.allclose(synthesize_channel(CFG, scaled), scale * h, atol=1e-12)


def test_opposite_gains_cancel():
    a = PathComponent(2.0, 1.0, 0.5)
    b = PathComponent(-2.0, 1.0, 0.5)
    assert np.allclose(synthesize_channel(CFG, [a, b]), 0.0, atol=1e-15)


def test_empty_path_list_rejected():
    with pytest.raises(ValueError):
        synthesize_channel(CFG, [])


def test_invalid_array_config():
    with pytest.raises(ValueError):
        ArrayConfig(0, 4)
    with pytest.raises(ValueError):
        ArrayConfig(3, 4, spacing_ratio=-1.0)
