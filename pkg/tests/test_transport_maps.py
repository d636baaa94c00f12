import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wiener_ot.densities import gaussian_parameters, parse_density
from wiener_ot.gaussian import GaussianSpace, SampleCloud, sample_standard
from wiener_ot.maps import (AffineTransport, NonInvertibleError, coupled_clouds, duality_residual,
                            empirical_map, energy_identity_check, gaussian_brenier, invert_on_samples,
                            map_deviation, one_convexity_check, potential_of, projection_ladder)
from wiener_ot.ot import solve_exact
from wiener_ot.rng import stream


def brenier_for(spec, dim):
    m, c, L = gaussian_parameters(spec, dim)
    return gaussian_brenier(np.zeros(dim), np.eye(dim), m, c), L


def test_brenier_shift():
    T = gaussian_brenier(np.zeros(2), np.eye(2), [1.0, -2.0], np.eye(2))
    x = stream(0, "b").standard_normal((5, 2))
    assert np.allclose(T(x), x + [1.0, -2.0], atol=1e-15)


def test_brenier_1d_scale():
    T = gaussian_brenier([0.0], [[1.0]], [0.0], [[4.0]])
    assert T.A[0, 0] == pytest.approx(2.0, abs=1e-14)


def test_brenier_anisotropic_pushforward():
    T = gaussian_brenier(np.zeros(2), np.eye(2), np.zeros(2), np.diag([4.0, 9.0]))
    assert np.allclose(T.A, np.diag([2.0, 3.0]), atol=1e-14)
    y = T(sample_standard(GaussianSpace(2), 10_000, 1).points)
    cov = np.cov(y.T)
    assert np.all(np.abs(np.diag(cov) / [4.0, 9.0] - 1) < 0.05)


spd = st.integers(0, 2**31 - 1).map(lambda s: stream(s, "spd").standard_normal((3, 3)))


@given(spd, spd)
@settings(max_examples=40, deadline=None)
def test_brenier_pushes_covariance_exactly(g1, g2):
    s1, s2 = g1 @ g1.T + 0.1 * np.eye(3), g2 @ g2.T + 0.1 * np.eye(3)
    T = gaussian_brenier(np.zeros(3), s1, np.ones(3), s2)
    mean, cov = T.pushforward(np.zeros(3), s1)
    assert np.allclose(mean, np.ones(3), atol=1e-10)
    assert np.allclose(cov, s2, rtol=1e-7, atol=1e-8 * np.abs(s2).max())
    assert np.linalg.eigvalsh(T.A).min() > 0


def test_affine_transport_validation_and_json():
    with pytest.raises(ValueError):
        AffineTransport([[1.0, 2.0], [0.0, 1.0]], 0, 0)
    with pytest.raises(ValueError):
        AffineTransport([[-1.0]], 0, 0)
    T = AffineTransport(np.diag([2.0, 0.5]), [1.0, 2.0], [0.5, 0.0])
    back = AffineTransport.from_json(T.to_json())
    assert all(np.array_equal(getattr(back, k), getattr(T, k)) for k in "Abm")
    with pytest.raises(NonInvertibleError):
        AffineTransport.linear(np.diag([1.0, 0.0])).inverse()


def test_potentials_examples():
    x = stream(1, "p").standard_normal((7, 2))
    p = potential_of(AffineTransport.identity(2))
    assert np.allclose(p.grad_phi(x), 0.0) and np.ptp(p.phi(x)) == 0.0
    h = np.array([0.3, -1.1])
    p = potential_of(AffineTransport.shift(h))
    assert np.allclose(p.phi(x) - p.phi(np.zeros((1, 2))), x @ h)
    p = potential_of(AffineTransport.linear([[2.0]]))
    t = np.linspace(-2, 2, 9)[:, None]
    assert np.allclose(p.phi(t), t[:, 0] ** 2 / 2)
    assert np.allclose(p.psi(t), -t[:, 0] ** 2 / 4)
    assert np.allclose(p.grad_psi(t)[:, 0], -t[:, 0] / 2)


@given(spd, st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_potential_gradients_invert(g, seed):
    T = AffineTransport(g @ g.T + 0.2 * np.eye(3), stream(seed, "b").standard_normal(3), np.zeros(3))
    p = potential_of(T)
    x = stream(seed, "x").standard_normal((20, 3))
    tx = x + p.grad_phi(x)
    assert np.allclose(tx, T(x), atol=1e-10)
    assert np.allclose(tx + p.grad_psi(tx), x, atol=1e-8)
    # F >= 0 everywhere, = 0 on the graph
    y = stream(seed, "y").standard_normal((20, 3))
    assert np.all(p.F(x, y) >= -1e-9)
    assert np.allclose(p.F(x, tx), 0.0, atol=1e-8)


def test_duality_identity_transport():
    x = sample_standard(GaussianSpace(2), 30, 0)
    c = solve_exact(x, x)
    r = duality_residual(potential_of(AffineTransport.identity(2)), c)
    assert r.on_support_max == 0.0 and r.off_support_min > 0.0


@pytest.mark.parametrize("spec,dim", [("shift:1,0.5", 2), ("scale:2", 1), ("scale:2,3", 2)])
def test_duality_affine_presets(spec, dim):
    T, L = brenier_for(spec, dim)
    x, y = coupled_clouds(L, 512, 3)
    c = solve_exact(x, y)
    r = duality_residual(potential_of(T), c)
    assert r.on_support_max <= 1e-9
    assert r.off_support_min >= -1e-9


def test_duality_scale_closed_form():
    # F(x, y) = (y - 2x)^2 / 4 once anchored
    p = potential_of(AffineTransport.linear([[2.0]])).anchored(np.array([[0.0]]), np.array([[0.0]]))
    rng = stream(2, "f")
    x, y = rng.standard_normal((50, 1)), rng.standard_normal((50, 1))
    assert np.allclose(p.F(x, y), (y[:, 0] - 2 * x[:, 0]) ** 2 / 4, atol=1e-12)


def test_energy_identity():
    x = sample_standard(GaussianSpace(2), 100, 0)
    assert energy_identity_check(solve_exact(x, x), potential_of(AffineTransport.identity(2))) == 0.0
    h = np.array([1.0, 0.5])
    T, L = brenier_for("shift:1,0.5", 2)
    x, y = coupled_clouds(L, 256, 1)
    c = solve_exact(x, y)
    assert c.cost == pytest.approx(h @ h, rel=1e-10)
    assert energy_identity_check(c, potential_of(T)) <= 1e-10
    T, L = brenier_for("scale:2", 1)
    x, y = coupled_clouds(L, 4096, 2)
    assert energy_identity_check(solve_exact(x, y), potential_of(T)) <= 0.05


def test_inversion_round_trips():
    cl = sample_standard(GaussianSpace(2), 1000, 0)
    r = invert_on_samples(AffineTransport.identity(2), cl)
    assert r.forward_roundtrip == 0.0 and r.backward_roundtrip == 0.0
    r = invert_on_samples(AffineTransport.shift([1.0, -3.0]), cl)
    assert max(r.forward_roundtrip, r.backward_roundtrip) <= 1e-12
    r = invert_on_samples(AffineTransport.linear(np.diag([2.0, 3.0])), cl)
    assert max(r.forward_roundtrip, r.backward_roundtrip) <= 1e-10
    assert not invert_on_samples(AffineTransport.linear(np.diag([1.0, 0.0])), cl).invertible


def test_one_convexity():
    half = one_convexity_check(lambda x: -0.5 * np.sum(x * x, axis=1), 3)
    assert half.worst_violation <= 1e-10 and half.verdict == "1-convex"
    bad = one_convexity_check(lambda x: -np.sum(x * x, axis=1), 3)
    assert bad.verdict == "violated"
    assert one_convexity_check(lambda x: np.abs(x[:, 0]), 3).verdict == "1-convex"


def test_empirical_map_common_clouds_recovers_brenier():
    # coupled clouds: the exact solver must rediscover the pairing T(x_i)
    for spec, d in (("scale:2,3", 2), ("scale:2,1.5,1,0.5", 4), ("shift:1,0,0,0", 4)):
        T, L = brenier_for(spec, d)
        x, y = coupled_clouds(L, 4096, 0)
        assert map_deviation(solve_exact(x, y), T) <= 0.1


def test_empirical_map_independent_decreases_in_n():
    T, L = brenier_for("scale:2,1.5,1,0.5", 4)
    devs = []
    for n in (256, 512, 1024, 2048):
        x, y = coupled_clouds(L, n, 1, "independent")
        devs.append(map_deviation(solve_exact(x, y), T))
    assert all(b < a for a, b in zip(devs, devs[1:]))


def test_empirical_map_independent_d2():
    T, L = brenier_for("scale:2,3", 2)
    x, y = coupled_clouds(L, 4096, 1, "independent")
    assert map_deviation(solve_exact(x, y), T) <= 0.1


def test_uniqueness_surrogate_two_seeds():
    from wiener_ot.gaussian import sample_density

    T, L = brenier_for("scale:2,3", 2)
    x = sample_standard(GaussianSpace(2), 1024, 0)
    maps, devs = [], []
    for s in (1, 2):
        c = solve_exact(x, sample_density(L, 1024, s, method="exact"))
        maps.append(empirical_map(c))
        devs.append(map_deviation(c, T))
    between = np.mean(np.sum((maps[0] - maps[1]) ** 2, axis=1))
    assert between <= 2 * max(devs)


def test_ladder_unit_is_zero():
    r = projection_ladder(parse_density("unit", 4), (1, 2, 4), 256)
    assert r.values == (0.0, 0.0, 0.0)


def test_ladder_shift_on_first_coordinate():
    r = projection_ladder(parse_density("shift:1.5", 4), (1, 4), 512)
    assert np.allclose(r.values, 2.25, rtol=1e-10)


def test_ladder_rejects_bad_dims_and_non_product():
    L = parse_density("scale:2", 3)
    with pytest.raises(ValueError):
        projection_ladder(L, (2, 1, 3), 16)
    with pytest.raises(ValueError):
        projection_ladder(L, (1, 2), 16)
    mix = parse_density("gauss-mixture:0.5,-1,0.6;0.5,1,0.6", 2)
    if not mix.product_form:
        with pytest.raises(ValueError):
            projection_ladder(mix, (1, 2), 16)
        r = projection_ladder(mix, (1, 2), 64, allow_approximate=True)
        assert r.approximate


def test_ladder_csv():
    r = projection_ladder(parse_density("scale:2,2", 2), (1, 2), 64)
    lines = r.to_csv().splitlines()
    assert lines[0] == "dim,J,stderr" and len(lines) == 3
