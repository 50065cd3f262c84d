import math

import numpy as np
import pytest

from ptyhybrid.errors import ConfigurationError, ValidationError
from ptyhybrid.objective import ml_gradient
from ptyhybrid.operators import forward_g
from ptyhybrid.simkit import (SimConfig, disks, make_object, make_probe, make_scan,
                              overlap_ratio, siemens_star, simulate, simulate_data)


def test_siemens_centre_and_outside():
    img = siemens_star(64, 64, 16)
    assert img[32, 32] == 0
    assert img[0, 0] == 0 and img[32, 63] == 0
    assert set(np.unique(img)) <= {0.0, 1.0}


@pytest.mark.parametrize("spokes", [4, 16, 32])
def test_siemens_ring_walk(spokes):
    H = W = 256
    img = siemens_star(H, W, spokes)
    radius = 0.3 * min(H, W)
    angles = np.linspace(0, 2 * np.pi, 4096, endpoint=False)
    ring = [img[int(round(H // 2 + radius * math.sin(a))), int(round(W // 2 + radius * math.cos(a)))]
            for a in angles]
    rises = sum(1 for prev, cur in zip(ring[-1:] + ring[:-1], ring) if prev == 0 and cur == 1)
    assert rises == spokes


def test_siemens_rejects_odd_spokes():
    with pytest.raises(ValidationError):
        siemens_star(32, 32, 5)


def test_object_mapping():
    assert make_object(np.zeros((1, 1)))[0, 0] == 1
    one = make_object(np.ones((1, 1)))[0, 0]
    assert abs(one - 0.7j) <= 1e-7
    img = np.random.default_rng(31).uniform(0, 1, (32, 32))
    psi = make_object(img, np.complex128)
    assert np.all((np.abs(psi) >= 0.7 - 1e-12) & (np.abs(psi) <= 1 + 1e-12))
    assert np.all((np.angle(psi) >= -1e-12) & (np.angle(psi) <= np.pi / 2 + 1e-12))
    with pytest.raises(ValidationError):
        make_object(np.full((2, 2), 1.5))


def test_probe():
    N = 32
    p = make_probe(N, chirp=8.0)
    c = p[N // 2, N // 2]
    assert c.real > 0 and abs(c.imag) <= 1e-7 * abs(c)
    assert abs(c) == np.abs(p).max()
    total = sum(abs(complex(v)) ** 2 for v in p.ravel())
    assert abs(total - N * N) / (N * N) <= 1e-6
    assert np.abs(make_probe(N, chirp=0.0).imag).max() <= 1e-7
    with pytest.raises(ValidationError):
        make_probe(15)


def test_scan_grid():
    with pytest.raises(ConfigurationError, match="no overlap"):
        make_scan(64, 64, 16, 16)
    scan = make_scan(64, 64, 16, 12)
    assert len(scan) == 25
    assert sorted(set(scan[:, 0])) == sorted(set(scan[:, 1])) == [0, 12, 24, 36, 48]


def test_scan_jitter():
    base = make_scan(64, 64, 16, 12)
    scan = make_scan(64, 64, 16, 12, jitter=2, seed=37)
    assert np.abs(scan - base).max() <= 2
    assert np.any(scan != base)
    assert scan.min() >= 0 and scan.max() <= 48
    np.testing.assert_array_equal(scan, make_scan(64, 64, 16, 12, jitter=2, seed=37))
    assert np.any(scan != make_scan(64, 64, 16, 12, jitter=2, seed=38))


def test_noiseless_data_is_intensity():
    ds = simulate(SimConfig(height=32, width=32, probe_size=8, spokes=8, step=6, jitter=0))
    far = forward_g(ds.psi_ref, ds.probe, ds.scan).astype(np.complex128)
    np.testing.assert_array_equal(ds.d, (np.abs(far) ** 2).astype(np.float32))
    g = ml_gradient(ds.psi_ref, ds.probe, ds.scan, ds.d)
    assert np.linalg.norm(g) <= 1e-5 * np.linalg.norm(ds.psi_ref)


def test_photons_must_be_positive():
    with pytest.raises(ValidationError):
        simulate_data(np.ones((8, 8), np.complex64), np.ones((4, 4), np.complex64),
                      np.array([[0, 0]]), photons=0)
    with pytest.raises(ConfigurationError):
        SimConfig(photons=0)


def test_poisson_mean():
    rng = np.random.default_rng(0)
    obj = np.exp(1j * rng.uniform(0, 1, (64, 64))).astype(np.complex64)
    probe = make_probe(16, chirp=0.0)
    scan = make_scan(64, 64, 16, 8)[:40]  # 40 x 256 = 10240 pixels
    mean = simulate_data(obj, probe, scan, photons=1e4).astype(np.float64)
    noisy = simulate_data(obj, probe, scan, photons=1e4, poisson=True, seed=5)
    assert np.all(noisy == np.round(noisy))
    ratio = noisy.astype(np.float64).sum() / mean.sum()
    assert 0.99 <= ratio <= 1.01
    again = simulate_data(obj, probe, scan, photons=1e4, poisson=True, seed=5)
    np.testing.assert_array_equal(noisy, again)


def test_poisson_streams_do_not_depend_on_pattern_count():
    obj = np.ones((32, 32), np.complex64)
    probe = make_probe(8)
    scan = make_scan(32, 32, 8, 4)
    full = simulate_data(obj, probe, scan, 50.0, True, seed=9)
    head = simulate_data(obj, probe, scan[:5], 50.0, True, seed=9)
    np.testing.assert_array_equal(full[:5], head)


def test_simulate_reproducible_and_disks():
    config = SimConfig(phantom="disks", height=48, width=48, probe_size=8, step=6, seed=4)
    a, b = simulate(config), simulate(config)
    np.testing.assert_array_equal(a.d, b.d)
    np.testing.assert_array_equal(a.psi_ref, b.psi_ref)
    assert a.meta["sim"]["phantom"] == "disks"
    img = disks(48, 48, seed=4)
    assert img.max() == 1 and img.min() == 0


def test_overlap_ratio():
    assert overlap_ratio(64, 16) == 0.75


def test_config_validation():
    for bad in (dict(step=0), dict(jitter=16), dict(height=32, probe_size=64),
                dict(phantom="coins")):
        with pytest.raises(ConfigurationError):
            SimConfig(**bad)
