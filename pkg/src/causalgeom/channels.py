"""Gaussian causal channels and their uniform-prior inversion.

A channel maps an input point to a Gaussian distribution over an output
space: the mean comes from a smooth map, the covariance from a noise
specification evaluated at that mean. Interventions are modelled as either a
uniform box or a finite set of points with equal weights.

Inverting a channel against the uniform intervention prior gives, for each
output value theta, a normalized density over the interventions that could
have produced it. The normalization integral runs over the intervention box
only; output-side densities are never truncated.
"""

from __future__ import annotations

import dataclasses
import math
import typing as tp

import numpy as np
from scipy import integrate

from ._quadrature import gauss_legendre
from .errors import (
    DegenerateDistributionError,
    DomainViolationError,
    InvalidConfigError,
    UnreachableParameterError,
)

ArrayLike = tp.Union[float, tp.Sequence[float], np.ndarray]

# Normalization integrals below this value mean "no allowed intervention
# reaches this parameter point".
_NORMALIZER_FLOOR = 1e-300

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# domains and intervention sets
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Domain:
    """Axis-aligned box with strictly ordered finite bounds."""

    axes: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.axes) < 1:
            raise InvalidConfigError("domain needs at least one axis")
        for lo, hi in self.axes:
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise InvalidConfigError("domain bounds must be finite")
            if not lo < hi:
                raise InvalidConfigError(f"domain axis has lo >= hi: ({lo}, {hi})")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def lower(self) -> np.ndarray:
        return np.array([a[0] for a in self.axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([a[1] for a in self.axes])

    @property
    def spans(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.spans))

    def contains(self, point: ArrayLike, rtol: float = 1e-9) -> bool:
        p = np.atleast_1d(np.asarray(point, dtype=float))
        slack = rtol * self.spans
        return bool(np.all(p >= self.lower - slack) and np.all(p <= self.upper + slack))


@dataclasses.dataclass(frozen=True)
class UniformBox:
    """Uniform density over a box of interventions."""

    domain: Domain

    @property
    def dim(self) -> int:
        return self.domain.dim

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo, hi = self.domain.lower, self.domain.upper
        return lo + (hi - lo) * rng.random((n, self.dim))


@dataclasses.dataclass(frozen=True)
class DiscretePoints:
    """Finite set of interventions, all equally weighted."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InvalidConfigError("discrete intervention set needs a (k, d) array")
        for i in range(pts.shape[0]):
            for j in range(i + 1, pts.shape[0]):
                if np.array_equal(pts[i], pts[j]):
                    raise InvalidConfigError("discrete intervention points must be distinct")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.integers(0, self.points.shape[0], size=n)
        return self.points[idx]


InterventionSet = tp.Union[UniformBox, DiscretePoints]


# ---------------------------------------------------------------------------
# noise specifications
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ConstantIsotropic:
    """sigma * identity, the same at every state."""

    sigma: float

    def __post_init__(self) -> None:
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise InvalidConfigError(f"noise sigma must be finite and > 0, got {self.sigma}")

    def sigma_diag(self, mean: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.sigma, np.shape(mean)).copy()

    def covariance(self, mean: np.ndarray) -> np.ndarray:
        d = np.shape(mean)[-1]
        return self.sigma**2 * np.eye(d)


@dataclasses.dataclass(frozen=True)
class DiagonalStateDependent:
    """Per-axis sigma as a function of the output point (the channel mean)."""

    sigma_fn: tp.Callable[[np.ndarray], np.ndarray]

    def sigma_diag(self, mean: np.ndarray) -> np.ndarray:
        sig = np.asarray(self.sigma_fn(np.asarray(mean, dtype=float)), dtype=float)
        sig = np.broadcast_to(sig, np.shape(mean))
        if not np.all(sig > 0.0):
            raise DegenerateDistributionError("state-dependent sigma must stay positive")
        return sig

    def covariance(self, mean: np.ndarray) -> np.ndarray:
        sig = self.sigma_diag(mean)
        return np.apply_along_axis(np.diag, -1, sig**2) if sig.ndim > 1 else np.diag(sig**2)


@dataclasses.dataclass(frozen=True)
class FullConstant:
    """A fixed full covariance matrix, the same at every state."""

    cov: np.ndarray

    def __post_init__(self) -> None:
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if c.shape[0] != c.shape[1]:
            raise InvalidConfigError("covariance must be square")
        if not np.allclose(c, c.T, atol=1e-12 * max(1.0, float(np.abs(c).max()))):
            raise InvalidConfigError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(c)
        except np.linalg.LinAlgError as exc:
            raise DegenerateDistributionError("covariance is not positive definite") from exc
        object.__setattr__(self, "cov", c)
        object.__setattr__(self, "_chol", chol)

    def covariance(self, mean: np.ndarray) -> np.ndarray:
        return self.cov

    def cholesky(self) -> np.ndarray:
        return self._chol  # type: ignore[attr-defined]


NoiseSpec = tp.Union[ConstantIsotropic, DiagonalStateDependent, FullConstant]


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class GaussianChannel:
    """Input -> Gaussian(mean_map(input), noise at that mean).

    ``mean_map`` must accept arrays shaped (..., d_in) and return
    (..., d_out). ``jacobian``, when given, must return (..., d_out, d_in);
    otherwise a central finite difference with step 1e-5 of the input axis
    span is used.
    """

    mean_map: tp.Callable[[np.ndarray], np.ndarray]
    noise: NoiseSpec
    input_domain: Domain
    output_domain: Domain
    jacobian: tp.Callable[[np.ndarray], np.ndarray] | None = None
    # True when mean_map is the identity; lets downstream integrals use the
    # closed-form box-averaged density instead of a numeric inverse.
    mean_is_identity: bool = False

    @property
    def dim_in(self) -> int:
        return self.input_domain.dim

    @property
    def dim_out(self) -> int:
        return self.output_domain.dim

    def mean(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.mean_map(x), dtype=float)
        return out

    def jac(self, x: ArrayLike) -> np.ndarray:
        """Jacobian of the mean map, analytic if available else central FD."""
        x = np.asarray(x, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x), dtype=float)
        steps = 1e-5 * self.input_domain.spans
        cols = []
        for k in range(self.dim_in):
            e = np.zeros(self.dim_in)
            e[k] = steps[k]
            cols.append((self.mean(x + e) - self.mean(x - e)) / (2.0 * steps[k]))
        return np.stack(cols, axis=-1)

    def sample(self, rng: np.random.Generator, x: np.ndarray) -> np.ndarray:
        """Draw one output per input row; x has shape (..., d_in)."""
        mean = self.mean(x)
        if isinstance(self.noise, FullConstant):
            z = rng.standard_normal(mean.shape)
            return mean + z @ self.noise.cholesky().T
        sig = self.noise.sigma_diag(mean)
        return mean + sig * rng.standard_normal(mean.shape)


@dataclasses.dataclass(frozen=True)
class Gaussian:
    """A concrete multivariate normal produced by a channel."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def _chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise DegenerateDistributionError(
                "covariance is singular; density undefined"
            ) from exc

    def log_density(self, point: ArrayLike) -> float | np.ndarray:
        p = np.asarray(point, dtype=float)
        chol = self._chol()
        diff = np.atleast_1d(p) - self.mean
        sol = np.linalg.solve(chol, diff[..., None] if diff.ndim > 1 else diff)
        if diff.ndim > 1:
            sol = sol[..., 0]
        quad = np.sum(np.square(sol), axis=-1)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out = -0.5 * (quad + logdet + self.dim * _LOG_2PI)
        return float(out) if np.isscalar(point) or np.ndim(point) <= 1 else out

    def density(self, point: ArrayLike) -> float | np.ndarray:
        return np.exp(self.log_density(point))


def push_forward(channel: GaussianChannel, x: ArrayLike) -> Gaussian:
    """Distribution over outputs under do(x). x must lie in the input domain."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (channel.dim_in,):
        raise DomainViolationError(
            f"expected a point of dimension {channel.dim_in}, got shape {x.shape}"
        )
    if not channel.input_domain.contains(x):
        raise DomainViolationError(f"intervention {x} lies outside the input domain")
    mean = channel.mean(x)
    return Gaussian(mean, np.atleast_2d(channel.noise.covariance(mean)))


def log_density(dist: Gaussian, point: ArrayLike) -> float | np.ndarray:
    """Log density of a channel output distribution at a point."""
    return dist.log_density(point)


# ---------------------------------------------------------------------------
# conditional density of the output given the input, vectorized over inputs
# ---------------------------------------------------------------------------


def _log_gauss_given_inputs(channel: GaussianChannel, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """log q(theta | do(x_i)) for a batch of inputs x (n, d_in), fixed theta."""
    mean = channel.mean(x)  # (n, d_out)
    diff = theta[None, :] - mean
    if isinstance(channel.noise, FullConstant):
        chol = channel.noise.cholesky()
        sol = np.linalg.solve(chol, diff.T).T
        quad = np.sum(sol**2, axis=-1)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    else:
        sig = channel.noise.sigma_diag(mean)
        quad = np.sum((diff / sig) ** 2, axis=-1)
        logdet = 2.0 * np.sum(np.log(sig), axis=-1)
    d = theta.size
    return -0.5 * (quad + logdet + d * _LOG_2PI)


def _score_given_inputs(channel: GaussianChannel, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """d/dtheta log q(theta | do(x_i)) = -Sigma(x_i)^-1 (theta - mean(x_i)).

    Exact: the covariance never depends on theta, only on the input.
    """
    mean = channel.mean(x)
    diff = theta[None, :] - mean
    if isinstance(channel.noise, FullConstant):
        chol = channel.noise.cholesky()
        half = np.linalg.solve(chol, diff.T)
        return -np.linalg.solve(chol.T, half).T
    sig = channel.noise.sigma_diag(mean)
    return -diff / sig**2


# ---------------------------------------------------------------------------
# uniform-prior inversion
# ---------------------------------------------------------------------------


class InvertedChannel:
    """Posterior over interventions given a channel output, uniform prior.

    For a fixed output theta the density over interventions x in the box is
    q(theta|do(x)) / Z(theta) with Z the integral of the numerator over the
    box. Outputs are unbounded; only this normalization is box-truncated.
    """

    def __init__(self, channel: GaussianChannel, box: Domain):
        if box.dim != channel.dim_in:
            raise InvalidConfigError("intervention box dimension must match channel input")
        self.channel = channel
        self.box = box
        self._norm_cache: dict[bytes, float] = {}

    # -- peak location and integration windows ------------------------------

    def _peak(self, theta: np.ndarray) -> np.ndarray:
        """Intervention in the box whose output mean is closest to theta (ish)."""
        lo, hi = self.box.lower, self.box.upper
        grids = [np.linspace(lo[k], hi[k], 33) for k in range(self.box.dim)]
        mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, self.box.dim)
        logq = _log_gauss_given_inputs(self.channel, theta, mesh)
        x0 = mesh[int(np.argmax(logq))]
        # local refinement by coordinate-wise golden section
        width = (hi - lo) / 16.0
        for _ in range(3):
            for k in range(self.box.dim):
                a = max(lo[k], x0[k] - width[k])
                b = min(hi[k], x0[k] + width[k])
                ts = np.linspace(a, b, 17)
                cand = np.tile(x0, (17, 1))
                cand[:, k] = ts
                vals = _log_gauss_given_inputs(self.channel, theta, cand)
                x0 = cand[int(np.argmax(vals))]
            width /= 8.0
        return x0

    def _segments(self, theta: np.ndarray, x_star: np.ndarray) -> list[list[tuple[float, float, int]]]:
        """Per-axis integration segments: a dense window at the peak plus the
        rest of the box at lower order."""
        mean = self.channel.mean(x_star)
        if isinstance(self.channel.noise, FullConstant):
            sig_max = math.sqrt(float(np.max(np.linalg.eigvalsh(self.channel.noise.cov))))
        else:
            sig_max = float(np.max(self.channel.noise.sigma_diag(mean)))
        jac = self.channel.jac(x_star)
        svals = np.linalg.svd(jac, compute_uv=False)
        s_min = float(svals.min()) if svals.size else 0.0
        if s_min <= 1e-12:
            half = np.inf
        else:
            half = 12.0 * sig_max / s_min
        segments: list[list[tuple[float, float, int]]] = []
        for k in range(self.box.dim):
            lo, hi = self.box.axes[k]
            a = max(lo, x_star[k] - half)
            b = min(hi, x_star[k] + half)
            segs = []
            if a > lo:
                segs.append((lo, a, 48))
            segs.append((a, b, 160))
            if b < hi:
                segs.append((b, hi, 48))
            segments.append(segs)
        return segments

    def _box_nodes(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Composite Gauss-Legendre nodes over the box, dense near the peak."""
        x_star = self._peak(theta)
        per_axis = []
        for segs in self._segments(theta, x_star):
            xs, ws = zip(*(gauss_legendre(a, b, n) for a, b, n in segs))
            per_axis.append((np.concatenate(xs), np.concatenate(ws)))
        if self.box.dim == 1:
            return per_axis[0][0][:, None], per_axis[0][1]
        node_mesh = np.meshgrid(*(x for x, _ in per_axis), indexing="ij")
        w_mesh = np.meshgrid(*(w for _, w in per_axis), indexing="ij")
        nodes = np.stack([m.reshape(-1) for m in node_mesh], axis=-1)
        weights = np.prod(np.stack([m.reshape(-1) for m in w_mesh], axis=-1), axis=-1)
        return nodes, weights

    # -- public surface ------------------------------------------------------

    def normalizer(self, theta: ArrayLike) -> float:
        """Z(theta) = integral of q(theta|do(x)) over the intervention box."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        key = theta.tobytes()
        if key in self._norm_cache:
            return self._norm_cache[key]
        if self.box.dim == 1:
            x_star = self._peak(theta)
            lo, hi = self.box.axes[0]

            def f(x: float) -> float:
                return float(np.exp(_log_gauss_given_inputs(self.channel, theta, np.array([[x]]))[0]))

            pts = [float(x_star[0])] if lo < x_star[0] < hi else None
            z, _ = integrate.quad(f, lo, hi, points=pts, limit=200)
        else:
            nodes, weights = self._box_nodes(theta)
            q = np.exp(_log_gauss_given_inputs(self.channel, theta, nodes))
            z = float(np.sum(weights * q))
        if not (z > _NORMALIZER_FLOOR):
            raise UnreachableParameterError(
                f"no intervention in the box reaches theta={theta}: normalizer {z:g}"
            )
        self._norm_cache[key] = z
        return z

    def log_density(self, x: ArrayLike, theta: ArrayLike) -> float | np.ndarray:
        """log of the inverted density over interventions, at x given theta."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        x_arr = np.atleast_2d(np.asarray(x, dtype=float))
        for row in x_arr:
            if not self.box.contains(row):
                raise DomainViolationError(f"intervention {row} lies outside the box")
        logq = _log_gauss_given_inputs(self.channel, theta, x_arr)
        out = logq - math.log(self.normalizer(theta))
        return float(out[0]) if np.ndim(x) <= 1 else out

    def density(self, x: ArrayLike, theta: ArrayLike) -> float | np.ndarray:
        return np.exp(self.log_density(x, theta))

    def fisher(self, theta: ArrayLike) -> np.ndarray:
        """Fisher information of the inverted density with respect to theta.

        Equals the covariance, under the inverted density, of the exact
        per-intervention score d/dtheta log q(theta|do(x)); the normalizer
        term is the score's mean and drops out through the covariance.
        """
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        nodes, weights = self._box_nodes(theta)
        logq = _log_gauss_given_inputs(self.channel, theta, nodes)
        shift = float(np.max(logq))
        q = np.exp(logq - shift)
        sc = _score_given_inputs(self.channel, theta, nodes)
        wq = weights * q
        m0 = float(np.sum(wq))
        if not (m0 * math.exp(shift) > _NORMALIZER_FLOOR):
            raise UnreachableParameterError(
                f"no intervention in the box reaches theta={theta}"
            )
        mean_sc = (wq @ sc) / m0
        centered = sc - mean_sc
        cov = (centered.T * wq) @ centered / m0
        return 0.5 * (cov + cov.T)


def invert_uniform_prior(channel: GaussianChannel, x_set: InterventionSet) -> InvertedChannel:
    """Invert a channel against the uniform prior over a box of interventions."""
    if isinstance(x_set, DiscretePoints):
        raise InvalidConfigError(
            "uniform-prior inversion needs a continuous intervention box"
        )
    return InvertedChannel(channel, x_set.domain)
