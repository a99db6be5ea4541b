"""Channel construction, push-forward densities, and uniform-prior inversion."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from causalgeom import (
    ConstantIsotropic,
    DiagonalStateDependent,
    DiscretePoints,
    Domain,
    DomainViolationError,
    FullConstant,
    Gaussian,
    GaussianChannel,
    InvalidConfigError,
    UnreachableParameterError,
    DegenerateDistributionError,
    UniformBox,
    invert_uniform_prior,
    push_forward,
)

UNIT = Domain(((0.0, 1.0),))


def scalar_channel(delta: float, fn=None, jac=None) -> GaussianChannel:
    fn = fn or (lambda x: np.asarray(x, dtype=float))
    return GaussianChannel(
        mean_map=fn,
        noise=ConstantIsotropic(delta),
        input_domain=UNIT,
        output_domain=UNIT,
        jacobian=jac,
    )


def test_domain_validation():
    with pytest.raises(InvalidConfigError):
        Domain(())
    with pytest.raises(InvalidConfigError):
        Domain(((1.0, 0.0),))
    with pytest.raises(InvalidConfigError):
        Domain(((0.0, math.inf),))
    assert Domain(((0.0, 2.0), (-1.0, 1.0))).volume == 4.0


def test_discrete_points_must_be_distinct():
    with pytest.raises(InvalidConfigError):
        DiscretePoints(np.array([[0.0], [0.0]]))
    pts = DiscretePoints(np.array([[0.0], [1.0]]))
    assert pts.dim == 1


def test_push_forward_mean_and_covariance():
    ch = scalar_channel(0.1, fn=lambda x: x**2)
    dist = push_forward(ch, 0.5)
    assert dist.mean[0] == 0.25
    cov = dist.cov
    assert np.array_equal(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_push_forward_rejects_outside_box():
    ch = scalar_channel(0.1)
    with pytest.raises(DomainViolationError):
        push_forward(ch, 1.5)


def test_isotropic_log_density_at_origin():
    # d=2, N(0, eps^2 I) evaluated at its own mean: -ln(2 pi eps^2)
    eps = 0.3
    dist = Gaussian(np.zeros(2), eps**2 * np.eye(2))
    assert dist.log_density(np.zeros(2)) == pytest.approx(-math.log(2 * math.pi * eps**2), rel=1e-14)


def test_gaussian_density_matches_scipy():
    rng = np.random.default_rng(7)
    mean = rng.normal(size=3)
    a = rng.normal(size=(3, 3))
    cov = a @ a.T + 0.5 * np.eye(3)
    dist = Gaussian(mean, cov)
    ref = stats.multivariate_normal(mean=mean, cov=cov)
    for _ in range(5):
        p = rng.normal(size=3)
        assert dist.log_density(p) == pytest.approx(ref.logpdf(p), rel=1e-12)


def test_full_covariance_validation():
    with pytest.raises(InvalidConfigError):
        FullConstant(np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(DegenerateDistributionError):
        FullConstant(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_state_dependent_noise_must_stay_positive():
    noise = DiagonalStateDependent(lambda y: y)
    with pytest.raises(DegenerateDistributionError):
        noise.sigma_diag(np.array([0.0]))


def test_finite_difference_jacobian_matches_analytic():
    ch_fd = scalar_channel(0.1, fn=lambda x: np.sin(x))
    ch_an = scalar_channel(0.1, fn=lambda x: np.sin(x), jac=lambda x: np.cos(x)[..., None, None] if np.ndim(x) > 1 else np.atleast_2d(np.cos(x)))
    x = np.array([0.37])
    fd = ch_fd.jac(x)
    an = np.atleast_2d(np.cos(0.37))
    assert fd == pytest.approx(an, rel=1e-8)
    assert ch_an.jac(x) == pytest.approx(an, rel=1e-12)


def test_inversion_normalizes_to_one():
    """The inverted density must integrate to 1 over the intervention box."""
    ch = scalar_channel(0.05)
    inv = invert_uniform_prior(ch, UniformBox(UNIT))
    for theta in (0.03, 0.31, 0.5, 0.97):
        total, err = integrate.quad(lambda x: inv.density(x, theta), 0.0, 1.0, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)
        assert err < 1e-8


def test_inversion_matches_gaussian_in_the_interior():
    """Far from the box edges the inverted identity channel is N(theta, delta^2)."""
    delta = 0.01
    ch = scalar_channel(delta)
    inv = invert_uniform_prior(ch, UniformBox(UNIT))
    theta = 0.42
    for x in (theta - 2 * delta, theta, theta + 2.5 * delta):
        ref = math.exp(-0.5 * ((x - theta) / delta) ** 2) / (delta * math.sqrt(2 * math.pi))
        assert inv.density(x, theta) == pytest.approx(ref, rel=1e-6)


def test_inversion_truncates_at_the_boundary():
    # Half of the Gaussian mass is cut off at theta = 0, so the density at the
    # peak doubles relative to the interior value.
    delta = 0.01
    ch = scalar_channel(delta)
    inv = invert_uniform_prior(ch, UniformBox(UNIT))
    interior = inv.density(0.5, 0.5)
    edge = inv.density(0.0, 0.0)
    assert edge == pytest.approx(2.0 * interior, rel=1e-4)


def test_unreachable_parameter_raises():
    ch = scalar_channel(1e-3)
    inv = invert_uniform_prior(ch, UniformBox(UNIT))
    with pytest.raises(UnreachableParameterError):
        inv.normalizer(50.0)


def test_fisher_of_identity_inversion_is_one_over_delta_squared():
    delta = 0.02
    ch = scalar_channel(delta)
    inv = invert_uniform_prior(ch, UniformBox(UNIT))
    info = inv.fisher(0.5)
    assert info[0, 0] == pytest.approx(1.0 / delta**2, rel=1e-6)
