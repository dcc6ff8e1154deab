import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from cfmsim.errors import ConfigurationError, ShapeError
from cfmsim.phantoms import PhantomSpec, Scene, generate_cube, generate_scene
from cfmsim.sensing import (
    ENSEMBLES,
    NoiseModel,
    PatternSet,
    apply_adjoint,
    apply_operator,
    fnv1a64,
    generate_patterns,
    measure,
    measure_cube,
    pack_rows,
)


def test_fnv1a_published_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_raster_is_identity():
    p = generate_patterns("raster", 16, 16)
    np.testing.assert_array_equal(p.binary(), np.eye(16))
    x = np.arange(16.0)
    np.testing.assert_array_equal(apply_operator(p, x), x)
    np.testing.assert_array_equal(measure(x, p).y, x)


def test_raster_subset_selects_coordinates():
    p = generate_patterns("raster", 5, 16)
    x = np.random.default_rng(1).normal(size=16)
    np.testing.assert_array_equal(apply_operator(p, x), x[:5])


@pytest.mark.parametrize("n", [4, 16, 64])
def test_full_hadamard_bipolar_orthogonal(n):
    p = generate_patterns("hadamard_rows", n, n, permute=False, differential=True)
    b = p.matrix()
    np.testing.assert_array_equal(b @ b.T, n * np.eye(n))
    np.testing.assert_array_equal(b, scipy.linalg.hadamard(n))


def test_bernoulli_density():
    p = generate_patterns("bernoulli_binary", 256, 1024, seed=0)
    frac = p.binary().mean()
    assert 0.47 <= frac <= 0.53
    assert 0.17 <= generate_patterns("bernoulli_binary", 64, 1024, seed=1, density=0.2).binary().mean() <= 0.23


@pytest.mark.parametrize("ensemble", ENSEMBLES)
@pytest.mark.parametrize("differential", [False, True])
def test_binary_purity(ensemble, differential):
    p = generate_patterns(ensemble, 32, 64, seed=3, differential=differential)
    assert set(np.unique(p.binary())) <= {0.0, 1.0}
    assert p.packed.dtype == np.uint8


def test_bernoulli_prefix_independent_of_m():
    a = generate_patterns("bernoulli_binary", 10, 100, seed=9)
    b = generate_patterns("bernoulli_binary", 40, 100, seed=9)
    np.testing.assert_array_equal(a.binary(), b.binary()[:10])
    c = generate_patterns("bernoulli_binary", 10, 100, seed=10)
    assert not np.array_equal(a.binary(), c.binary())


def test_generation_is_deterministic():
    for e in ENSEMBLES:
        a = generate_patterns(e, 16, 64, seed=5)
        b = generate_patterns(e, 16, 64, seed=5)
        assert a.content_hash == b.content_hash
        np.testing.assert_array_equal(a.packed, b.packed)


def test_hadamard_rows_distinct_and_recovered_from_bits():
    p = generate_patterns("hadamard_rows", 32, 64, seed=2)
    assert len(set(p.rows.tolist())) == 32
    q = PatternSet("hadamard_rows", 32, 64, p.packed)
    np.testing.assert_array_equal(q.rows, p.rows)


def test_all_ones_pattern_measures_sum():
    p = generate_patterns("hadamard_rows", 4, 16, permute=False)
    assert np.all(p.binary()[0] == 1.0)
    x = generate_scene(PhantomSpec("spikes", 5, seed=1, amplitude_range=(1, 4)), 4, 4).values
    assert measure(x, p).y[0] == pytest.approx(x.sum(), rel=1e-15)


def _dense(p):
    return p.matrix()


@pytest.mark.parametrize("ensemble", ENSEMBLES)
@pytest.mark.parametrize("differential", [False, True])
def test_operator_matches_dense_and_adjoint(ensemble, differential):
    rs = np.random.default_rng(11)
    p = generate_patterns(ensemble, 48, 128, seed=4, differential=differential)
    a = _dense(p)
    for _ in range(100):
        x = rs.normal(size=128)
        r = rs.normal(size=48)
        ax = apply_operator(p, x)
        atr = apply_adjoint(p, r)
        np.testing.assert_allclose(ax, a @ x, rtol=1e-10, atol=1e-10 * np.linalg.norm(a @ x))
        lhs, rhs = ax @ r, x @ atr
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), np.linalg.norm(ax) * np.linalg.norm(r))


@pytest.mark.parametrize("n", [8, 64, 512])
@pytest.mark.parametrize("differential", [False, True])
def test_hadamard_fast_path_equals_dense_oracle(n, differential):
    rs = np.random.default_rng(n)
    m = n // 2
    p = generate_patterns("hadamard_rows", m, n, seed=1, differential=differential)
    h = scipy.linalg.hadamard(n).astype(float)[p.rows]
    dense = h if differential else (1.0 + h) / 2.0
    x = rs.normal(size=(n, 3))
    np.testing.assert_allclose(apply_operator(p, x), dense @ x, atol=1e-10 * n)
    r = rs.normal(size=(m, 3))
    np.testing.assert_allclose(apply_adjoint(p, r), dense.T @ r, atol=1e-10 * n)


@given(st.integers(0, 2**32), st.sampled_from(ENSEMBLES))
def test_differential_algebra(seed, ensemble):
    x = generate_scene(PhantomSpec("spikes", 6, seed=seed, amplitude_range=(0.5, 3.0)), 8, 8).values
    p = generate_patterns(ensemble, 16, 64, seed=seed, differential=True)
    rec = measure(x, p)
    bipolar = 2.0 * p.binary() - 1.0
    np.testing.assert_allclose(rec.y, bipolar @ x, rtol=1e-12, atol=1e-12)
    assert rec.combined and rec.m == 16 and rec.physical_m == 32


def test_poisson_monte_carlo_mean():
    x = generate_scene(PhantomSpec("spikes", 3, seed=4), 4, 4).values
    p = generate_patterns("bernoulli_binary", 4, 16, seed=2)
    truth = measure(x, p).y
    draws = np.array([measure(x, p, NoiseModel("poisson", budget=50.0, seed=s)).y for s in range(10_000)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - truth) <= 3 * se + 1e-12)


def test_poisson_fano_factor():
    x = generate_scene(PhantomSpec("spikes", 8, seed=6), 4, 4).values
    p = generate_patterns("raster", 16, 16)
    budget = 400.0
    scale = budget / x.sum()
    draws = np.array([measure(x, p, NoiseModel("poisson", budget=budget, seed=s)).y for s in range(4000)]) * scale
    lit = x > 0
    mean, var = draws.mean(axis=0)[lit], draws.var(axis=0, ddof=1)[lit]
    np.testing.assert_allclose(var / mean, 1.0, atol=0.1)
    # gaussian noise has a flat variance instead
    g = np.array([measure(x, p, NoiseModel("gaussian", sigma=0.5, seed=s)).y for s in range(4000)])
    np.testing.assert_allclose(g.var(axis=0, ddof=1), 0.25, rtol=0.1)


def test_noise_is_seeded_and_order_free():
    x = generate_scene(PhantomSpec("spikes", 4, seed=1), 8, 8).values
    p = generate_patterns("bernoulli_binary", 20, 64, seed=3)
    nm = NoiseModel("poisson_plus_gaussian", sigma=1.0, budget=1e3, seed=42)
    a = measure(x, p, nm).y
    assert np.array_equal(a, measure(x, p, nm).y)
    # a prefix of patterns sees the same noise
    q = generate_patterns("bernoulli_binary", 7, 64, seed=3)
    np.testing.assert_array_equal(measure(x, q, nm).y, a[:7])
    assert not np.array_equal(a, measure(x, p, NoiseModel("poisson_plus_gaussian", sigma=1.0, budget=1e3, seed=43)).y)


def test_poisson_budget_normalization():
    x = np.zeros(16)
    x[3] = 2.0
    p = generate_patterns("raster", 16, 16)
    rec = measure(x, p, NoiseModel("poisson", budget=1e4, seed=0))
    assert rec.photon_scale == pytest.approx(1e4 / 2.0)
    assert np.all(rec.y[x == 0] == 0.0)
    assert abs(rec.y[3] - 2.0) < 6 * np.sqrt(1e4) / rec.photon_scale


def test_noise_sigma_estimates():
    x = generate_scene(PhantomSpec("spikes", 4, seed=1), 8, 8).values
    p = generate_patterns("bernoulli_binary", 16, 64, seed=3, differential=True)
    assert measure(x, p, NoiseModel("gaussian", sigma=0.3)).noise_sigma() == pytest.approx(0.3 * np.sqrt(2))
    rec = measure(x, p, NoiseModel("poisson", budget=100.0))
    assert rec.noise_sigma() == pytest.approx(np.sqrt(100.0) / rec.photon_scale)
    assert measure(x, p).noise_sigma() == 0.0


def test_measure_cube_per_channel():
    cube = generate_cube(PhantomSpec("spikes", 3, seed=2), 8, 8, 3)
    p = generate_patterns("bernoulli_binary", 10, 64, seed=1)
    recs = measure_cube(cube, p)
    assert [r.channel for r in recs] == [0, 1, 2]
    for c, r in enumerate(recs):
        np.testing.assert_allclose(r.y, p.binary() @ cube.channel(c).values)
    with pytest.raises(ShapeError):
        measure_cube(cube, [p, p])


def test_pack_rows_msb_first():
    packed = pack_rows(np.array([[1, 0, 0, 0, 0, 0, 0, 1, 1]]))
    assert packed.tolist() == [[0x81, 0x80]]


def test_errors():
    with pytest.raises(ConfigurationError):
        generate_patterns("hadamard_rows", 17, 16)
    with pytest.raises(ConfigurationError):
        generate_patterns("hadamard_rows", 4, 12)
    with pytest.raises(ConfigurationError):
        generate_patterns("speckle", 4, 16)
    with pytest.raises(ConfigurationError):
        generate_patterns("bernoulli_binary", 0, 16)
    with pytest.raises(ConfigurationError):
        generate_patterns("bernoulli_binary", 4, 16, density=1.0)
    p = generate_patterns("bernoulli_binary", 4, 16)
    with pytest.raises(ShapeError):
        measure(np.ones(15), p)
    with pytest.raises(ConfigurationError):
        measure(-np.ones(16), p)
    with pytest.raises(ShapeError):
        apply_operator(p, np.ones(8))
    with pytest.raises(ShapeError):
        apply_adjoint(p, np.ones(5))
    with pytest.raises(ConfigurationError):
        NoiseModel("poisson")
    with pytest.raises(ConfigurationError):
        NoiseModel("gaussian", sigma=-1.0)
    with pytest.raises(ConfigurationError):
        PatternSet("hadamard_rows", 2, 4, pack_rows(np.array([[1, 1, 0, 0], [1, 1, 0, 0]])))
    with pytest.raises(ConfigurationError):
        PatternSet("hadamard_rows", 1, 4, pack_rows(np.array([[1, 1, 1, 0]])))
