import numpy as np
import pytest
from numpy.polynomial import Polynomial
from scipy.integrate import quad

from repden.expfam import (
    MomentRangeError,
    NewtonDivergenceError,
    density,
    fisher_info,
    log_normalizer,
    moment_map,
    natural_from_moment,
    suffstat_average,
    train_family,
)
from repden.grid import Domain, GridFn, integrate
from repden.logmap import clog_transform
from repden.simgen import sample_from_density

from conftest import make_family, rank1_family, two_component_family


def test_log_normalizer_uniform_base():
    d1 = Domain(0.0, 1.0, 101)
    m1 = make_family(d1, [d1.grid - 0.5])
    assert log_normalizer(m1, np.zeros(1)) == pytest.approx(0.0, abs=1e-12)
    d2 = Domain(0.0, 2.0, 101)
    m2 = make_family(d2, [d2.grid - 1.0])
    assert log_normalizer(m2, np.zeros(1)) == pytest.approx(np.log(2.0), abs=1e-12)


def test_log_normalizer_against_quadrature_oracle():
    model = rank1_family()
    c = model.phi[:, 0][-1] / 0.5  # slope of the orthonormalized linear statistic
    got = log_normalizer(model, np.array([1.0]))
    want = np.log(quad(lambda t: np.exp(c * (t - 0.5)), 0.0, 1.0)[0])
    assert got == pytest.approx(want, abs=1e-8)


def test_density_uniform_at_zero():
    d = Domain(0.0, 1.0, 101)
    m = make_family(d, [d.grid - 0.5])
    p = density(m, np.zeros(1))
    assert np.max(np.abs(p.values - 1.0)) < 1e-12


def test_density_normalized_for_random_theta():
    model = two_component_family(1001)
    rng = np.random.default_rng(2)
    for _ in range(20):
        theta = rng.normal(0, 2, size=2)
        p = density(model, theta)
        assert p.values.min() > 0
        assert integrate(p) == pytest.approx(1.0, abs=1e-8)


def test_family_member_recovered_through_log_transform():
    # regress the centered log of a member on [phi, 1]; rebuilding from the
    # recovered coordinates reproduces the member
    model = two_component_family(1001)
    theta = np.array([1.2, -0.7])
    p = density(model, theta)
    f = clog_transform(p)
    design = np.column_stack([model.phi, np.ones(model.domain.n_grid)])
    coef, *_ = np.linalg.lstsq(design, f.values - model.mu_values, rcond=None)
    assert np.allclose(coef[:2], theta, atol=1e-6)
    back = density(model, coef[:2])
    assert np.max(np.abs(back.values - p.values)) < 1e-6


def test_moment_map_is_gradient_of_log_normalizer():
    model = two_component_family(1001)
    theta = np.array([0.6, -0.4])
    xi = moment_map(model, theta)
    eps = 1e-4
    for k in range(2):
        e = np.zeros(2)
        e[k] = eps
        fd = (log_normalizer(model, theta + e) - log_normalizer(model, theta - e)) / (2 * eps)
        assert xi[k] == pytest.approx(fd, abs=1e-5)


def _fit_exact_polynomials(model, degs):
    t = model.domain.grid
    polys = []
    for j, deg in enumerate(degs):
        idx = np.linspace(0, t.size - 1, deg + 1).astype(int)
        polys.append(Polynomial.fit(t[idx], model.phi[idx, j], deg=deg).convert())
    return polys


def test_moments_at_zero_match_exact_polynomial_integrals():
    # at theta = 0 with a flat base the density is exactly uniform, so the
    # moments are plain integrals of the statistics; the statistics are
    # polynomials, integrated here in closed form
    dom = Domain(0.0, 1.0, 40001)
    t = dom.grid
    model = make_family(dom, [t - 0.5, (t - 0.5) ** 2])
    p1, p2 = _fit_exact_polynomials(model, degs=(1, 2))
    xi = moment_map(model, np.zeros(2))
    for got, poly in zip(xi, (p1, p2)):
        exact = poly.integ()(1.0) - poly.integ()(0.0)
        assert got == pytest.approx(exact, abs=1e-8)


def test_fisher_info_matches_exact_polynomial_integrals():
    dom = Domain(0.0, 1.0, 40001)
    t = dom.grid
    model = make_family(dom, [t - 0.5, (t - 0.5) ** 2])
    polys = _fit_exact_polynomials(model, degs=(1, 2))
    got = fisher_info(model, np.zeros(2))
    exact_first = np.array([p.integ()(1.0) - p.integ()(0.0) for p in polys])
    for a in range(2):
        for b in range(2):
            prod = polys[a] * polys[b]
            second = prod.integ()(1.0) - prod.integ()(0.0)
            want = second - exact_first[a] * exact_first[b]
            assert got[a, b] == pytest.approx(want, abs=1e-8)


def test_rank1_moments_match_quadrature_oracle():
    # oracle: direct numerical integration of the tilted density
    model = rank1_family()
    c = model.phi[:, 0][-1] / 0.5
    theta = 1.0
    num = quad(lambda t: c * (t - 0.5) * np.exp(theta * c * (t - 0.5)), 0.0, 1.0)[0]
    den = quad(lambda t: np.exp(theta * c * (t - 0.5)), 0.0, 1.0)[0]
    got = moment_map(model, np.array([theta]))[0]
    assert got == pytest.approx(num / den, abs=1e-8)


def test_fisher_info_scalar_variance_and_hessian_check():
    model = rank1_family(2001)
    theta = np.array([0.9])
    m = fisher_info(model, theta)
    assert m[0, 0] >= 0
    eps = 1e-4
    fd = (
        moment_map(model, theta + eps)[0] - moment_map(model, theta - eps)[0]
    ) / (2 * eps)
    assert m[0, 0] == pytest.approx(fd, abs=1e-4)


def test_fisher_info_positive_semidefinite():
    model = two_component_family(1001)
    rng = np.random.default_rng(3)
    for _ in range(25):
        theta = rng.normal(0, 2, size=2)
        eigs = np.linalg.eigvalsh(fisher_info(model, theta))
        assert eigs.min() >= -1e-10


def test_log_normalizer_midpoint_convexity():
    model = two_component_family(1001)
    rng = np.random.default_rng(4)
    for _ in range(50):
        t1 = rng.normal(0, 3, size=2)
        t2 = rng.normal(0, 3, size=2)
        mid = log_normalizer(model, (t1 + t2) / 2)
        avg = (log_normalizer(model, t1) + log_normalizer(model, t2)) / 2
        assert mid <= avg + 1e-10


def test_duality_round_trip():
    model = two_component_family(1001)
    rng = np.random.default_rng(5)
    for _ in range(15):
        theta = rng.normal(size=2)
        theta *= min(1.0, 5.0 / np.linalg.norm(theta))
        back = natural_from_moment(model, moment_map(model, theta))
        assert np.allclose(back, theta, atol=1e-6)
        forward = moment_map(model, back)
        assert np.max(np.abs(forward - moment_map(model, theta))) < 1e-8


def test_natural_from_moment_matches_scan_bisection_oracle():
    # oracle: bracket the strictly increasing scalar moment map on a coarse
    # grid, then bisect; independent of the Newton path
    model = rank1_family(4001)
    target = moment_map(model, np.array([1.3]))[0]
    lo, hi = -20.0, 20.0
    grid = np.linspace(lo, hi, 2001)
    vals = np.array([moment_map(model, np.array([g]))[0] for g in grid[::100]])
    idx = int(np.searchsorted(vals, target))
    a, b = grid[::100][idx - 1], grid[::100][idx]
    for _ in range(100):
        mid = 0.5 * (a + b)
        if moment_map(model, np.array([mid]))[0] < target:
            a = mid
        else:
            b = mid
    got = natural_from_moment(model, np.array([target]))[0]
    assert got == pytest.approx(0.5 * (a + b), abs=1e-6)


def test_natural_from_moment_rejects_boundary():
    model = rank1_family(2001)
    top = model.moment_hi[0]
    with pytest.raises(MomentRangeError):
        natural_from_moment(model, np.array([top]))
    with pytest.raises(MomentRangeError):
        natural_from_moment(model, np.array([top + 1.0]))


def test_newton_reports_divergence_near_boundary():
    model = rank1_family(2001)
    barely_inside = model.moment_hi[0] - 1e-13
    with pytest.raises(NewtonDivergenceError):
        natural_from_moment(model, np.array([barely_inside]))


def test_suffstat_average_at_grid_points():
    model = two_component_family(1001)
    t = model.domain.grid
    got = suffstat_average(model, np.array([t[137]]), 2)
    assert np.allclose(got, model.phi[137], atol=1e-12)
    dup = suffstat_average(model, np.array([t[137]] * 4), 2)
    assert np.allclose(dup, got, atol=1e-15)


def test_suffstat_average_validation():
    model = two_component_family(1001)
    with pytest.raises(ValueError):
        suffstat_average(model, np.array([]), 1)
    with pytest.raises(ValueError):
        suffstat_average(model, np.array([2.0]), 1)
    with pytest.raises(ValueError):
        suffstat_average(model, np.array([0.5]), 3)


def test_suffstat_average_concentrates_at_model_moments():
    # CLT check: the statistic average over big samples lands within three
    # standard errors of the model moments in at least 95 of 100 seeded runs
    model = two_component_family(501)
    theta = np.array([0.8, -0.5])
    p = density(model, theta)
    xi = moment_map(model, theta)
    se = np.sqrt(np.diag(fisher_info(model, theta)) / 1e5)
    hits = 0
    for seed in range(100):
        obs = sample_from_density(p, 100_000, seed)
        phibar = suffstat_average(model, obs, 2)
        if np.all(np.abs(phibar - xi) <= 3 * se):
            hits += 1
    assert hits >= 95


def test_density_invariant_to_base_constant_shift():
    # the normalizer absorbs any constant added to the base log-density
    from repden.expfam import FamilyModel
    from repden.fpca import EigenSystem
    from repden.logmap import LogDensityFn

    d = Domain(0.0, 1.0, 201)
    t = d.grid
    m1 = make_family(d, [t - 0.5], mu_vals=np.sin(2 * np.pi * t))
    # shift small enough to stay within the centering tolerance
    sys2 = EigenSystem(
        mu=LogDensityFn(GridFn(d, m1.mu_values + 5e-7)),
        eigvals=m1.sys.eigvals,
        eigfns=m1.sys.eigfns,
        scores=m1.sys.scores,
    )
    m2 = FamilyModel(
        sys=sys2, domain=d, train_densities=m1.train_densities, meta=m1.meta
    )
    theta = np.array([0.7])
    assert np.max(np.abs(density(m1, theta).values - density(m2, theta).values)) < 1e-9


def test_train_family_end_to_end(trained_model):
    model = trained_model
    assert model.n_train == 12
    assert 1 <= model.n_components <= 6
    assert model.meta.bandwidth > 0
    assert len(model.train_densities) == 12
    for dens in model.train_densities:
        assert integrate(dens) == pytest.approx(1.0, abs=1e-8)
    taus = model.train_moments(2)
    assert taus.shape == (12, 2)
    again = model.train_moments(2)
    assert again is taus  # cached


def test_train_family_requires_two_subpops(trained_model):
    from repden.presmooth import SubpopSample

    with pytest.raises(ValueError):
        train_family([SubpopSample("a", np.array([0.1, 0.2]))], trained_model.domain, 1)
