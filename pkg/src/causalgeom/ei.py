"""Effective information of a two-stage Gaussian causal chain.

The chain is intervention -> parameter -> effect. Effective information is
the average KL divergence between the effect distribution under a specific
intervention and the effect distribution averaged over all interventions
(equivalently, the mutual information between interventions drawn uniformly
and their effects).

Three estimators are provided:

* exact tensor-grid quadrature for scalar-parameter chains,
* a nested Monte Carlo estimator for anything else,
* a geometric estimate built purely from the two metric fields, which is the
  quantity the sweep/crossover machinery works with.

A fourth routine evaluates the closed-form small-noise approximation for
one-dimensional response profiles.
"""

from __future__ import annotations

import dataclasses
import math
import typing as tp

import numpy as np
from scipy.special import logsumexp, ndtr

from ._quadrature import gauss_hermite, gauss_legendre, midpoint_axes, nodes_weights
from .channels import (
    ConstantIsotropic,
    DiagonalStateDependent,
    DiscretePoints,
    Domain,
    FullConstant,
    GaussianChannel,
    InterventionSet,
    UniformBox,
)
from .errors import (
    DegenerateModelError,
    DegenerateProfileError,
    InvalidConfigError,
    NumericalFailureError,
    UseMonteCarloError,
)
from .geometry import MetricField, _mismatch_batch

_LN2 = math.log(2.0)
_LOG_2PI = math.log(2.0 * math.pi)
_LOG_2PIE = _LOG_2PI + 1.0
_P_FLOOR = 1e-280

FLAG_NEGATIVE_GEOMETRIC = "negative-geometric-ei"
FLAG_NOT_CONVERGED = "quadrature-not-converged"
FLAG_UNRELIABLE = "unreliable-estimate"


# ---------------------------------------------------------------------------
# specs and report
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class QuadratureSpec:
    """Grid sizes for the exact estimator and the metric-field integrals."""

    nodes_per_axis: int = 201
    rule: str = "gauss-legendre"
    effect_tail_sigmas: float = 8.0

    def __post_init__(self) -> None:
        if self.nodes_per_axis < 21:
            raise InvalidConfigError("nodes_per_axis must be at least 21")
        if self.rule not in ("gauss-legendre", "trapezoid"):
            raise InvalidConfigError(f"unknown rule {self.rule!r}")
        if self.effect_tail_sigmas < 4.0:
            raise InvalidConfigError("effect_tail_sigmas must be at least 4")


@dataclasses.dataclass(frozen=True)
class MonteCarloSpec:
    """Sample counts and seed for the nested Monte Carlo estimator."""

    outer_samples: int = 20000
    inner_samples: int = 256
    seed: int = 0
    batches: int = 50

    def __post_init__(self) -> None:
        if self.outer_samples < self.batches:
            raise InvalidConfigError("outer_samples must be at least the batch count")
        if self.inner_samples < 2:
            raise InvalidConfigError("inner_samples must be at least 2")
        if self.batches < 8:
            raise InvalidConfigError("need at least 8 batches for a batch-means stderr")


@dataclasses.dataclass(frozen=True)
class EIReport:
    """One effective-information value plus how it was obtained.

    ``nats`` and ``bits`` always describe the same number; for the geometric
    method ``nats`` is exactly ``volume_term - mean_mismatch``.
    """

    nats: float
    bits: float
    method: str
    grid_or_samples: str
    volume_term: float | None = None
    mean_mismatch: float | None = None
    stderr: float | None = None
    seed: int | None = None
    flags: tuple[str, ...] = ()

    @classmethod
    def build(cls, nats: float, method: str, grid_or_samples: str, **kw) -> "EIReport":
        return cls(
            nats=nats,
            bits=nats / _LN2,
            method=method,
            grid_or_samples=grid_or_samples,
            **kw,
        )


# ---------------------------------------------------------------------------
# noise helpers (per-axis sigma at a batch of means)
# ---------------------------------------------------------------------------


def _sigma_at(noise, mean: np.ndarray) -> np.ndarray:
    """Per-axis standard deviations at the given means; full covs refused."""
    if isinstance(noise, ConstantIsotropic):
        return np.broadcast_to(noise.sigma, mean.shape)
    if isinstance(noise, DiagonalStateDependent):
        return noise.sigma_diag(mean)
    raise UseMonteCarloError(
        "exact quadrature supports isotropic or diagonal effect noise only"
    )


def _intervention_scale(ch: GaussianChannel) -> float:
    """A representative sigma of the intervention-side channel."""
    if isinstance(ch.noise, ConstantIsotropic):
        return ch.noise.sigma
    if isinstance(ch.noise, FullConstant):
        return math.sqrt(float(np.max(np.linalg.eigvalsh(ch.noise.cov))))
    lo, hi = ch.input_domain.lower, ch.input_domain.upper
    probe = lo + (hi - lo) * np.linspace(0.0, 1.0, 65)[:, None]
    return float(np.max(ch.noise.sigma_diag(ch.mean(probe))))


# ---------------------------------------------------------------------------
# scalar-parameter chain: core quadrature kernels
# ---------------------------------------------------------------------------


class _ScalarChain:
    """Precomputed plumbing for a chain whose parameter is one-dimensional.

    The effect map f must be defined and strictly monotone on the whole
    extended parameter range (intervention box inflated by the tails of the
    intervention noise); built-in models satisfy this by construction.
    """

    KERNEL_NODES = 48
    KERNEL_ITERS = 8
    SCALE_INFLATION = 1.4
    SEGMENT_NODES = 16
    LADDER = (-12.0, -6.0, -3.0, -1.0, 1.0, 3.0, 6.0, 12.0)
    MAX_ROWS = 120_000

    def __init__(self, ch_xt: GaussianChannel, ch_ty: GaussianChannel, x_set: InterventionSet):
        if ch_xt.dim_out != 1:
            raise UseMonteCarloError("exact quadrature requires a scalar parameter")
        self.ch_xt = ch_xt
        self.ch_ty = ch_ty
        self.x_set = x_set
        self.dy = ch_ty.dim_out
        self.sigma_q = _intervention_scale(ch_xt)
        if isinstance(x_set, UniformBox):
            if ch_xt.dim_in != 1:
                raise UseMonteCarloError(
                    "exact quadrature over a continuous box requires scalar interventions"
                )
            if not getattr(ch_xt, "mean_is_identity", False):
                # TODO: support non-identity intervention means via the same
                # bisection inverse used for the averaged effect density.
                raise UseMonteCarloError(
                    "continuous-box quadrature requires an identity intervention mean"
                )
            lo, hi = x_set.domain.axes[0]
        else:
            mus = self.ch_xt.mean(x_set.points)[:, 0]
            lo, hi = float(np.min(mus)), float(np.max(mus))
        pad = 8.0 * self.sigma_q + 1e-12
        self.mix_lo = lo  # where the parameter mixture has its shoulders
        self.mix_hi = hi
        self.ext_lo = lo - pad
        self.ext_hi = hi + pad
        f_lo = self.f(np.array([self.ext_lo]))[0]
        f_hi = self.f(np.array([self.ext_hi]))[0]
        self.increasing = bool(np.all(f_hi >= f_lo))

    # -- effect map shorthand ------------------------------------------------

    def f(self, theta: np.ndarray) -> np.ndarray:
        """f evaluated at theta (...,), returning (..., dy)."""
        return self.ch_ty.mean(theta[..., None])

    def slope(self, theta: np.ndarray) -> np.ndarray:
        """df/dtheta at theta (...,), returning (..., dy)."""
        return np.asarray(self.ch_ty.jac(theta[..., None]), dtype=float)[..., 0]

    def eps(self, f_val: np.ndarray) -> np.ndarray:
        return np.asarray(_sigma_at(self.ch_ty.noise, f_val), dtype=float)

    def q_params(self, x: np.ndarray) -> tuple[float, float]:
        mu, sig = self.q_params_batch(np.atleast_1d(x)[None, :])
        return float(mu[0]), float(sig[0])

    def q_params_batch(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-intervention parameter mean and sd for rows xs (m, d_in)."""
        mus = self.ch_xt.mean(np.asarray(xs, dtype=float))[:, 0]
        noise = self.ch_xt.noise
        if isinstance(noise, ConstantIsotropic):
            sig = np.full(mus.shape, noise.sigma)
        elif isinstance(noise, FullConstant):
            sig = np.full(mus.shape, math.sqrt(float(noise.cov[0, 0])))
        else:
            sig = np.asarray(noise.sigma_diag(mus[:, None]), dtype=float)[:, 0]
        return mus, sig

    # -- conditional effect density ------------------------------------------

    def conditional_density(self, y: np.ndarray, mu_q, sig_q) -> np.ndarray:
        """P(y | do(x)) for a batch of effect points y (n, dy).

        mu_q and sig_q may be scalars or per-row arrays, so one call can mix
        effect points belonging to different interventions. The parameter is
        integrated out with Gauss-Hermite nodes centered on the product of
        the intervention Gaussian and the locally linearized effect
        likelihood, iterated to a fixed point. Node placement only; the
        integrand itself is evaluated exactly, so mild non-Gaussianity is
        absorbed by the rule.
        """
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = y.shape[0]
        mu_q = np.broadcast_to(np.asarray(mu_q, dtype=float), (n,))
        sig_q = np.broadcast_to(np.asarray(sig_q, dtype=float), (n,))
        theta = mu_q.copy()
        prec_q = 1.0 / sig_q**2
        for _ in range(self.KERNEL_ITERS):
            f_val = self.f(theta)
            j = self.slope(theta)
            eps = self.eps(f_val)
            w = j / eps**2
            prec = prec_q + np.sum(w * j, axis=-1)
            rhs = mu_q * prec_q + np.sum(w * (y - f_val + j * theta[:, None]), axis=-1)
            theta = rhs / prec
        scale = self.SCALE_INFLATION / np.sqrt(prec)
        t, gh_w = gauss_hermite(self.KERNEL_NODES)
        nodes = theta[:, None] + math.sqrt(2.0) * scale[:, None] * t[None, :]
        log_psi = self._log_joint(nodes, y, mu_q, sig_q)
        log_term = log_psi + t[None, :] ** 2
        shift = np.max(log_term, axis=1, keepdims=True)
        total = np.sum(gh_w[None, :] * np.exp(log_term - shift), axis=1)
        return math.sqrt(2.0) * scale * total * np.exp(shift[:, 0])

    def _log_joint(
        self, nodes: np.ndarray, y: np.ndarray, mu_q: np.ndarray, sig_q: np.ndarray
    ) -> np.ndarray:
        """log[q(theta|x) p(y|theta)] at nodes (n, k) for paired rows y (n, dy)."""
        log_q = (
            -0.5 * ((nodes - mu_q[:, None]) / sig_q[:, None]) ** 2
            - np.log(sig_q)[:, None]
            - 0.5 * _LOG_2PI
        )
        f_val = self.f(nodes)  # (n, k, dy)
        eps = self.eps(f_val)
        resid = (y[:, None, :] - f_val) / eps
        log_p = -0.5 * np.sum(resid**2, axis=-1) - np.sum(np.log(eps), axis=-1)
        log_p -= 0.5 * self.dy * _LOG_2PI
        return log_q + log_p

    # -- averaged effect density ----------------------------------------------

    def mixture_density(self, theta: np.ndarray) -> np.ndarray:
        """Average of the intervention->parameter density over the x set."""
        theta = np.asarray(theta, dtype=float)
        if isinstance(self.x_set, DiscretePoints):
            mus = self.ch_xt.mean(self.x_set.points)[:, 0]
            sig = self.sigma_q
            z = (theta[..., None] - mus) / sig
            dens = np.exp(-0.5 * z**2) / (sig * math.sqrt(2.0 * math.pi))
            return np.mean(dens, axis=-1)
        lo, hi = self.x_set.domain.axes[0]
        sig = self.sigma_q
        return (ndtr((hi - theta) / sig) - ndtr((lo - theta) / sig)) / (hi - lo)

    def invert_effect(self, targets: np.ndarray) -> np.ndarray:
        """Parameter at which the scalar effect map equals each target."""
        lo = np.full(targets.shape, self.ext_lo)
        hi = np.full(targets.shape, self.ext_hi)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            val = self.f(mid)[..., 0]
            go_up = (val < targets) if self.increasing else (val > targets)
            lo = np.where(go_up, mid, lo)
            hi = np.where(go_up, hi, mid)
        return 0.5 * (lo + hi)

    def parameter_of_effect(self, y: np.ndarray) -> np.ndarray:
        """Parameter value whose noiseless effect is nearest to each y row."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = y.shape[0]
        if self.dy == 1:
            return self.invert_effect(y[:, 0])
        # golden-section argmin of |y - f(theta)|^2 for curve-valued effects
        invphi = (math.sqrt(5.0) - 1.0) / 2.0
        lo = np.full(n, self.ext_lo)
        hi = np.full(n, self.ext_hi)
        for _ in range(72):
            c = hi - invphi * (hi - lo)
            d = lo + invphi * (hi - lo)
            fc = np.sum((y - self.f(c)) ** 2, axis=-1)
            fd = np.sum((y - self.f(d)) ** 2, axis=-1)
            take_left = fc < fd
            hi = np.where(take_left, d, hi)
            lo = np.where(take_left, lo, c)
        return 0.5 * (lo + hi)

    def _half_dist2(self, y: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Half squared whitened distance between y rows and f(theta)."""
        f_val = self.f(theta)
        eps = self.eps(f_val)
        return 0.5 * np.sum(((y - f_val) / eps) ** 2, axis=-1)

    def _breakpoints(self, y: np.ndarray) -> np.ndarray:
        """Sorted integration breakpoints (n, k) for the averaged density.

        The likelihood support is bracketed in effect space, not by local
        slope: a ladder of whitened distances is inverted back to parameter
        values, so plateaus of the effect map (where the slope collapses but
        the likelihood stays flat and alive) are still covered. Mixture
        shoulders contribute breakpoints of their own.
        """
        n = y.shape[0]
        ladder = np.asarray(self.LADDER)
        if self.dy == 1:
            eps_y = self.eps(y)[:, 0]
            targets = y[:, 0:1] + eps_y[:, None] * ladder[None, :]
            bp = self.invert_effect(targets.reshape(-1)).reshape(n, -1)
        else:
            theta_star = self.parameter_of_effect(y)
            d_star = self._half_dist2(y, theta_star)
            levels = 0.5 * ladder[ladder > 0] ** 2
            cols = [theta_star]
            for side in (self.ext_lo, self.ext_hi):
                k = levels.shape[0]
                lo = np.repeat(theta_star[:, None], k, axis=1).reshape(-1)
                hi = np.full(n * k, side)
                tgt = (d_star[:, None] + levels[None, :]).reshape(-1)
                y_rep = np.repeat(y, k, axis=0)
                for _ in range(48):
                    mid = 0.5 * (lo + hi)
                    crossed = self._half_dist2(y_rep, mid) >= tgt
                    hi = np.where(crossed, mid, hi)
                    lo = np.where(crossed, lo, mid)
                cols.append((0.5 * (lo + hi)).reshape(n, k))
            bp = np.concatenate([c if c.ndim == 2 else c[:, None] for c in cols], axis=1)
        shoulders = np.broadcast_to([self.mix_lo, self.mix_hi], (n, 2))
        bp = np.concatenate([bp, shoulders], axis=1)
        return np.sort(np.clip(bp, self.ext_lo, self.ext_hi), axis=1)

    def averaged_density(self, y: np.ndarray) -> np.ndarray:
        """Effect density averaged over interventions, at y rows (n, dy).

        Integrates mixture(theta) * p(y|theta) by composite quadrature over
        segments between the likelihood/mixture breakpoints.
        """
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = y.shape[0]
        bp = self._breakpoints(y)
        widths = np.diff(bp, axis=1)  # (n, s)
        t, w = gauss_legendre(0.0, 1.0, self.SEGMENT_NODES)
        nodes = bp[:, :-1, None] + widths[:, :, None] * t[None, None, :]
        weights = (widths[:, :, None] * w[None, None, :]).reshape(n, -1)
        flat = nodes.reshape(n, -1)  # (n, s*k)
        f_val = self.f(flat)
        eps = self.eps(f_val)
        resid = (y[:, None, :] - f_val) / eps
        log_p = (
            -0.5 * np.sum(resid**2, axis=-1)
            - np.sum(np.log(eps), axis=-1)
            - 0.5 * self.dy * _LOG_2PI
        )
        mix = self.mixture_density(flat)
        return np.sum(weights * mix * np.exp(log_p), axis=1)

    # -- per-intervention KL --------------------------------------------------

    def predicted_moments(self, mu_q: float, sig_q: float) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the effect under do(x), linearized at mu_q."""
        f0, cov = self.predicted_moments_batch(np.array([mu_q]), np.array([sig_q]))
        return f0[0], cov[0]

    def predicted_moments_batch(
        self, mu_q: np.ndarray, sig_q: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        f0 = self.f(mu_q)  # (m, dy)
        j0 = self.slope(mu_q)
        eps0 = self.eps(f0)
        cov = sig_q[:, None, None] ** 2 * j0[:, :, None] * j0[:, None, :]
        idx = np.arange(self.dy)
        cov[:, idx, idx] += eps0**2
        return f0, cov

    def _densities_chunked(
        self, y_flat: np.ndarray, mu_flat: np.ndarray, sig_flat: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Conditional and averaged densities row by row, bounded in memory."""
        n = y_flat.shape[0]
        p = np.empty(n)
        e = np.empty(n)
        step = max(1, self.MAX_ROWS)
        for start in range(0, n, step):
            sl = slice(start, start + step)
            p[sl] = self.conditional_density(y_flat[sl], mu_flat[sl], sig_flat[sl])
            e[sl] = self.averaged_density(y_flat[sl])
        return p, e

    def kl_all(
        self,
        mu_q: np.ndarray,
        sig_q: np.ndarray,
        spec: QuadratureSpec,
        nodes: int,
        refined: bool = False,
    ) -> np.ndarray:
        """Per-intervention KL between conditional and averaged effect laws.

        All intervention rows share one flattened effect grid so the kernel
        runs a handful of large vector operations instead of a Python loop.
        """
        mu_q = np.asarray(mu_q, dtype=float)
        sig_q = np.broadcast_to(np.asarray(sig_q, dtype=float), mu_q.shape)
        f0, cov = self.predicted_moments_batch(mu_q, sig_q)
        m = mu_q.shape[0]
        tail = spec.effect_tail_sigmas
        if self.dy == 1:
            u, w = nodes_weights(spec.rule, -tail, tail, nodes)
            sd = np.sqrt(cov[:, 0, 0])
            y = f0[:, :1] + sd[:, None] * u[None, :]  # (m, k)
            k = u.shape[0]
            p, e = self._densities_chunked(
                y.reshape(-1, 1), np.repeat(mu_q, k), np.repeat(sig_q, k)
            )
            integrand = _kl_integrand(p, e).reshape(m, k)
            return sd * (integrand @ w)
        # curve-valued effects: whitened Gauss-Hermite grid over y per row
        if refined:
            k1 = 30 if self.dy == 2 else 17
        else:
            k1 = 24 if self.dy == 2 else 14
        t, w = gauss_hermite(k1)
        grids = np.meshgrid(*([t] * self.dy), indexing="ij")
        tt = np.stack([g.reshape(-1) for g in grids], axis=-1)  # (K, dy)
        ww = np.prod(
            np.stack(np.meshgrid(*([w] * self.dy), indexing="ij"), axis=-1).reshape(-1, self.dy),
            axis=-1,
        )
        chol = np.linalg.cholesky(cov)  # (m, dy, dy)
        y = f0[:, None, :] + math.sqrt(2.0) * np.einsum("mcd,kd->mkc", chol, tt)
        k = tt.shape[0]
        p, e = self._densities_chunked(
            y.reshape(m * k, self.dy), np.repeat(mu_q, k), np.repeat(sig_q, k)
        )
        integrand = _kl_integrand(p, e).reshape(m, k)
        jac = 2.0 ** (self.dy / 2.0) * np.prod(np.diagonal(chol, axis1=1, axis2=2), axis=1)
        corr = ww * np.exp(np.sum(tt**2, axis=-1))
        return jac * (integrand @ corr)


def _kl_integrand(p: np.ndarray, e: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    live = p > _P_FLOOR
    if np.any(live & ~(e > 0.0)):
        raise NumericalFailureError(
            "averaged effect density vanished where the conditional does not"
        )
    out[live] = p[live] * (np.log(p[live]) - np.log(e[live]))
    return out


# ---------------------------------------------------------------------------
# public estimators
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class DensityEstimate:
    """The intervention-averaged effect density on an evaluation window."""

    density: tp.Callable[[np.ndarray], np.ndarray]
    window: Domain

    def __call__(self, y) -> np.ndarray:
        y2 = np.atleast_2d(np.asarray(y, dtype=float))
        out = self.density(y2)
        return float(out[0]) if np.ndim(y) == 0 or np.shape(y) == (1,) else out

    def integral(self, nodes: int = 1001) -> float:
        if self.window.dim != 1:
            raise InvalidConfigError("normalization check implemented for scalar effects")
        lo, hi = self.window.axes[0]
        x, w = gauss_legendre(lo, hi, nodes)
        return float(np.sum(w * self.density(x[:, None])))


def effect_distribution(
    x_set: InterventionSet,
    ch_xt: GaussianChannel,
    ch_ty: GaussianChannel,
    spec: QuadratureSpec | None = None,
) -> DensityEstimate:
    """Effect density averaged over the intervention set."""
    spec = spec or QuadratureSpec()
    chain = _ScalarChain(ch_xt, ch_ty, x_set)
    if chain.dy != 1:
        raise UseMonteCarloError("averaged-density estimate implemented for scalar effects")
    if isinstance(x_set, DiscretePoints):
        params = [chain.q_params(p) for p in x_set.points]

        def density(y: np.ndarray) -> np.ndarray:
            return np.mean(
                np.stack([chain.conditional_density(y, mu, sig) for mu, sig in params]),
                axis=0,
            )

    else:
        density = chain.averaged_density

    tail = spec.effect_tail_sigmas
    lo_w, hi_w = math.inf, -math.inf
    probes = (
        x_set.points
        if isinstance(x_set, DiscretePoints)
        else np.linspace(x_set.domain.lower, x_set.domain.upper, 33)
    )
    for p in probes:
        mu, sig = chain.q_params(np.atleast_1d(p))
        f0, cov = chain.predicted_moments(mu, sig)
        sd = math.sqrt(cov[0, 0])
        lo_w = min(lo_w, f0[0] - tail * sd)
        hi_w = max(hi_w, f0[0] + tail * sd)
    return DensityEstimate(density=density, window=Domain(((lo_w, hi_w),)))


def _quadrature_pass(
    x_set: InterventionSet,
    chain: _ScalarChain,
    spec: QuadratureSpec,
    nodes: int,
    refined: bool = False,
) -> float:
    if isinstance(x_set, DiscretePoints):
        mu, sig = chain.q_params_batch(x_set.points)
        return float(np.mean(chain.kl_all(mu, sig, spec, nodes, refined=refined)))
    lo, hi = x_set.domain.axes[0]
    x_nodes, x_w = nodes_weights(spec.rule, lo, hi, nodes)
    mu, sig = chain.q_params_batch(x_nodes[:, None])
    kls = chain.kl_all(mu, sig, spec, nodes, refined=refined)
    return float(np.sum(x_w * kls) / (hi - lo))


def ei_exact_quadrature(
    x_set: InterventionSet,
    ch_xt: GaussianChannel,
    ch_ty: GaussianChannel,
    spec: QuadratureSpec | None = None,
    check_convergence: bool = True,
) -> EIReport:
    """Effective information by nested quadrature (scalar-parameter chains).

    The parameter is marginalized per intervention, the effect integral runs
    over a mean +- tail*sigma envelope, and the intervention average is a
    quadrature over the box (or a plain mean over discrete points). A second
    pass at doubled node count flags non-convergence beyond 1e-3 nats.
    """
    spec = spec or QuadratureSpec()
    d_x = ch_xt.dim_in
    d_y = ch_ty.dim_out
    if d_x + d_y > 4:
        raise UseMonteCarloError(
            f"tensor-grid quadrature infeasible at d_x + d_y = {d_x + d_y}; use Monte Carlo"
        )
    chain = _ScalarChain(ch_xt, ch_ty, x_set)
    nats = _quadrature_pass(x_set, chain, spec, spec.nodes_per_axis)
    flags: tuple[str, ...] = ()
    if check_convergence:
        refined = _quadrature_pass(x_set, chain, spec, 2 * spec.nodes_per_axis, refined=True)
        if abs(refined - nats) > 1e-3:
            flags = (FLAG_NOT_CONVERGED,)
    grid = f"{spec.rule}:{spec.nodes_per_axis} nodes/axis, tail {spec.effect_tail_sigmas} sigma"
    return EIReport.build(nats, "exact-quadrature", grid, flags=flags)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


def _log_box_mixture_factory(
    ch_xt: GaussianChannel, box: Domain
) -> tp.Callable[[np.ndarray], np.ndarray]:
    """log of the box-averaged intervention->parameter density.

    Closed form (normal CDF differences) for identity-mean channels; the
    correlated two-dimensional case reduces to a single conditional-CDF
    quadrature.
    """
    if not getattr(ch_xt, "mean_is_identity", False):
        raise UseMonteCarloError(
            "Monte Carlo over a continuous box needs an identity intervention mean "
            "(reparameterize the interventions so the mean map is the identity)"
        )
    lo, hi = box.lower, box.upper
    vol = box.volume
    noise = ch_xt.noise

    if isinstance(noise, ConstantIsotropic) or (
        isinstance(noise, FullConstant)
        and np.allclose(noise.cov, np.diag(np.diag(noise.cov)), atol=0.0)
    ):
        if isinstance(noise, ConstantIsotropic):
            sig = np.full(box.dim, noise.sigma)
        else:
            sig = np.sqrt(np.diag(noise.cov))

        def log_mix(theta: np.ndarray) -> np.ndarray:
            probs = ndtr((hi - theta) / sig) - ndtr((lo - theta) / sig)
            probs = np.maximum(probs, 1e-300)
            return np.sum(np.log(probs), axis=-1) - math.log(vol)

        return log_mix

    if isinstance(noise, FullConstant) and box.dim == 2:
        chol = noise.cholesky()
        l11, l21, l22 = chol[0, 0], chol[1, 0], chol[1, 1]
        z_nodes, z_w = gauss_legendre(0.0, 1.0, 64)

        def log_mix(theta: np.ndarray) -> np.ndarray:
            a = lo - theta  # (n, 2)
            b = hi - theta
            z_lo = np.maximum(a[:, 0] / l11, -9.0)
            z_hi = np.minimum(b[:, 0] / l11, 9.0)
            span = np.maximum(z_hi - z_lo, 0.0)
            z = z_lo[:, None] + span[:, None] * z_nodes[None, :]
            phi = np.exp(-0.5 * z**2) / math.sqrt(2.0 * math.pi)
            u1 = l11 * z
            inner = ndtr((b[:, 1, None] - l21 * z) / l22) - ndtr((a[:, 1, None] - l21 * z) / l22)
            del u1
            prob = span * np.sum(z_w[None, :] * phi * inner, axis=1)
            return np.log(np.maximum(prob, 1e-300)) - math.log(vol)

        return log_mix

    raise UseMonteCarloError(
        "box-averaged density implemented for diagonal noise (any dimension) "
        "or full covariance in two dimensions"
    )


def _log_gauss_diag(y: np.ndarray, mean: np.ndarray, sig: np.ndarray) -> np.ndarray:
    resid = (y - mean) / sig
    return -0.5 * np.sum(resid**2, axis=-1) - np.sum(np.log(sig), axis=-1) - 0.5 * y.shape[-1] * _LOG_2PI


def _log_gauss_full(y: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    diff = y - mean
    sol = np.linalg.solve(chol, diff[..., None])[..., 0]
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (np.sum(sol**2, axis=-1) + logdet + y.shape[-1] * _LOG_2PI)


def _logmeanexp(a: np.ndarray, axis: int) -> np.ndarray:
    shift = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.mean(np.exp(a - shift), axis=axis)) + np.squeeze(shift, axis=axis)
    return out


def _log_bias_correction(log_w: np.ndarray, axis: int, lme: np.ndarray) -> np.ndarray:
    """First-order Jensen debias for a log-of-mean estimate (delta method).

    E[log wbar] sits below log E[w] by roughly Var(wbar) / (2 E[w]^2); the
    sample version of that ratio is added back. Nonnegative by construction.
    """
    m = log_w.shape[axis]
    if m < 2:
        return np.zeros_like(lme)
    rel_second_moment = np.exp(_logmeanexp(2.0 * log_w, axis=axis) - 2.0 * lme)
    return (rel_second_moment - 1.0) / (2.0 * (m - 1))


def _prior_terms(noise, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row precision and covariance of the intervention noise at means mu."""
    n, d = mu.shape
    if isinstance(noise, FullConstant):
        prec = np.broadcast_to(np.linalg.inv(noise.cov), (n, d, d)).copy()
        cov = np.broadcast_to(noise.cov, (n, d, d)).copy()
        return prec, cov
    sig = np.asarray(noise.sigma_diag(mu), dtype=float)
    idx = np.arange(d)
    prec = np.zeros((n, d, d))
    cov = np.zeros((n, d, d))
    prec[:, idx, idx] = 1.0 / sig**2
    cov[:, idx, idx] = sig**2
    return prec, cov


def _likelihood_curvature(
    ch_ty: GaussianChannel, y: np.ndarray, theta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton pieces (J' Sy^-1 J, J' Sy^-1 r) of log p(y|theta) per row."""
    f_val = ch_ty.mean(theta)
    jac = np.asarray(ch_ty.jac(theta), dtype=float)
    resid = y - f_val
    if isinstance(ch_ty.noise, FullConstant):
        ch = ch_ty.noise.cholesky()
        wj = np.linalg.solve(ch[None], jac)
        wr = np.linalg.solve(ch[None], resid[..., None])[..., 0]
    else:
        sig = np.asarray(ch_ty.noise.sigma_diag(f_val), dtype=float)
        wj = jac / sig[..., None]
        wr = resid / sig
    return np.einsum("bkd,bke->bde", wj, wj), np.einsum("bkd,bk->bd", wj, wr)


def _gauss_newton_mode(
    ch_ty: GaussianChannel,
    y: np.ndarray,
    theta0: np.ndarray,
    prec_prior: np.ndarray,
    mu_prior: np.ndarray | None,
    iters: int = 6,
) -> tuple[np.ndarray, np.ndarray]:
    """Mode and curvature of log p(y|theta) plus an optional Gaussian prior.

    With mu_prior None the prior precision acts as step damping only, so the
    fixed point is the plain likelihood mode.
    """
    theta = theta0.copy()
    for _ in range(iters):
        curv, grad = _likelihood_curvature(ch_ty, y, theta)
        lam = prec_prior + curv
        if mu_prior is not None:
            grad = grad + np.einsum("bde,be->bd", prec_prior, mu_prior - theta)
        theta = theta + np.linalg.solve(lam, grad[..., None])[..., 0]
    curv, _ = _likelihood_curvature(ch_ty, y, theta)
    return theta, prec_prior + curv


def _sample_rows(
    rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray, m: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """m Gaussian draws per row for per-row (mean, cov); returns chol and logdet."""
    chol = np.linalg.cholesky(cov)
    z = rng.standard_normal((mean.shape[0], m, mean.shape[1]))
    pts = mean[:, None, :] + np.einsum("bij,bmj->bmi", chol, z)
    logdet = np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    return pts, chol, logdet


def _log_rows(
    pts: np.ndarray, mean: np.ndarray, chol: np.ndarray, logdet: np.ndarray
) -> np.ndarray:
    diff = pts - mean[:, None, :]
    sol = np.linalg.solve(chol[:, None], diff[..., None])[..., 0]
    d = pts.shape[-1]
    return -0.5 * np.sum(sol**2, axis=-1) - logdet[:, None] - 0.5 * d * _LOG_2PI


def ei_exact_mc(
    x_set: InterventionSet,
    ch_xt: GaussianChannel,
    ch_ty: GaussianChannel,
    spec: MonteCarloSpec | None = None,
) -> EIReport:
    """Effective information by nested Monte Carlo.

    Outer samples follow the generative chain. Both inner integrals (the
    conditional effect density and the intervention-averaged one) are
    importance-sampled from defensive mixtures: half the draws come from a
    Laplace proposal (a short Gauss-Newton run locates where the integrand
    concentrates, an inflated Gaussian is placed there), half from the exact
    parameter prior for that integral. The Laplace half handles small effect
    noise, where prior sampling has log-normally heavy weights; the prior
    half handles plateaus of the effect map, where the integrand spreads
    over the whole box and a local proposal misses it. The mixture bounds
    the weights by twice the conditional likelihood, and the leading 1/M
    log bias is removed with a delta-method correction.

    The stream is split per batch from the seed, so results are bit-identical
    for a given spec no matter how batches are scheduled.
    """
    spec = spec or MonteCarloSpec()
    batch_size = -(-spec.outer_samples // spec.batches)  # ceil
    d_t = ch_xt.dim_out
    inflate_cond = 1.4**2
    inflate_avg = 1.6**2

    continuous = isinstance(x_set, UniformBox)
    if continuous:
        log_mix = _log_box_mixture_factory(ch_xt, x_set.domain)
        clip_lo, clip_hi = x_set.domain.lower, x_set.domain.upper
    else:
        mus_pts = ch_xt.mean(x_set.points)  # (K, d_t)
        if isinstance(ch_xt.noise, FullConstant):
            chol_pts = ch_xt.noise.cholesky()

            def log_mix(theta_flat: np.ndarray) -> np.ndarray:
                lpk = _log_gauss_full(theta_flat[:, None, :], mus_pts[None], chol_pts)
                return logsumexp(lpk, axis=1) - math.log(mus_pts.shape[0])

        else:
            sig_pts = np.asarray(ch_xt.noise.sigma_diag(mus_pts), dtype=float)

            def log_mix(theta_flat: np.ndarray) -> np.ndarray:
                lpk = _log_gauss_diag(theta_flat[:, None, :], mus_pts[None], sig_pts[None])
                return logsumexp(lpk, axis=1) - math.log(mus_pts.shape[0])

        clip_lo, clip_hi = np.min(mus_pts, axis=0), np.max(mus_pts, axis=0)

    full_xt = isinstance(ch_xt.noise, FullConstant)
    chol_xt = ch_xt.noise.cholesky() if full_xt else None

    def q_sample(rng: np.random.Generator, mean: np.ndarray) -> np.ndarray:
        if full_xt:
            z = rng.standard_normal(mean.shape)
            return mean + z @ chol_xt.T
        sig = ch_xt.noise.sigma_diag(mean)
        return mean + sig * rng.standard_normal(mean.shape)

    def log_q(theta: np.ndarray, mean: np.ndarray) -> np.ndarray:
        if full_xt:
            return _log_gauss_full(theta, mean, chol_xt)
        return _log_gauss_diag(theta, mean, ch_xt.noise.sigma_diag(mean))

    def log_p(y: np.ndarray, theta: np.ndarray) -> np.ndarray:
        mean = ch_ty.mean(theta)
        if isinstance(ch_ty.noise, FullConstant):
            return _log_gauss_full(y, mean, ch_ty.noise.cholesky())
        return _log_gauss_diag(y, mean, ch_ty.noise.sigma_diag(mean))

    seeds = np.random.SeedSequence(spec.seed).spawn(spec.batches)
    batch_means = np.empty(spec.batches)
    for b, ss in enumerate(seeds):
        rng = np.random.Generator(np.random.PCG64(ss))
        x = x_set.sample(rng, batch_size)
        mu = ch_xt.mean(x)
        theta = q_sample(rng, mu)
        f_mean = ch_ty.mean(theta)
        if isinstance(ch_ty.noise, FullConstant):
            z = rng.standard_normal(f_mean.shape)
            y = f_mean + z @ ch_ty.noise.cholesky().T
        else:
            sig_y = ch_ty.noise.sigma_diag(f_mean)
            y = f_mean + sig_y * rng.standard_normal(f_mean.shape)

        prec_q, cov_q = _prior_terms(ch_xt.noise, mu)
        mu_in = np.repeat(mu[:, None, :], spec.inner_samples, axis=1)

        # conditional density: Laplace proposal at the per-intervention
        # posterior mode, defended by the intervention channel itself
        th_c, lam_c = _gauss_newton_mode(ch_ty, y, theta, prec_q, mu)
        lap, chol_c, ld_c = _sample_rows(rng, th_c, inflate_cond * np.linalg.inv(lam_c), spec.inner_samples)
        alt = q_sample(rng, mu_in)
        pick = rng.random(lap.shape[:2]) < 0.5
        th_in = np.where(pick[..., None], lap, alt)
        log_prior = log_q(th_in, mu_in)
        log_r = np.logaddexp(_log_rows(th_in, th_c, chol_c, ld_c), log_prior) - _LN2
        lw = log_prior + log_p(y[:, None, :], th_in) - log_r
        log_cond = _logmeanexp(lw, axis=1)
        log_cond += _log_bias_correction(lw, 1, log_cond)

        # averaged density: Laplace proposal at the box-clipped likelihood
        # mode (widened by the intervention noise to cover the mixture
        # shoulders), defended by the parameter mixture itself
        th_e, lam_e = _gauss_newton_mode(ch_ty, y, theta, 1e-2 * prec_q, None)
        center = np.clip(th_e, clip_lo, clip_hi)
        cov_e = inflate_avg * np.linalg.inv(lam_e) + cov_q
        lap, chol_e, ld_e = _sample_rows(rng, center, cov_e, spec.inner_samples)
        x_mix = x_set.sample(rng, batch_size * spec.inner_samples)
        mu_mix = ch_xt.mean(x_mix).reshape(batch_size, spec.inner_samples, d_t)
        alt = q_sample(rng, mu_mix)
        pick = rng.random(lap.shape[:2]) < 0.5
        th_in = np.where(pick[..., None], lap, alt)
        log_m = log_mix(th_in.reshape(-1, d_t)).reshape(th_in.shape[:2])
        log_r = np.logaddexp(_log_rows(th_in, center, chol_e, ld_e), log_m) - _LN2
        lw = log_m + log_p(y[:, None, :], th_in) - log_r
        log_avg = _logmeanexp(lw, axis=1)
        log_avg += _log_bias_correction(lw, 1, log_avg)

        vals = log_cond - log_avg
        if not np.all(np.isfinite(vals)):
            raise NumericalFailureError(f"non-finite Monte Carlo contribution in batch {b}")
        batch_means[b] = float(np.mean(vals))

    nats = float(np.mean(batch_means))
    stderr = float(np.std(batch_means, ddof=1) / math.sqrt(spec.batches))
    flags: tuple[str, ...] = ()
    if stderr > 0.2 * abs(nats):
        flags = (FLAG_UNRELIABLE,)
    grid = f"mc:{spec.batches}x{batch_size} outer, {spec.inner_samples} inner"
    return EIReport.build(
        nats, "exact-mc", grid, stderr=stderr, seed=spec.seed, flags=flags
    )


# ---------------------------------------------------------------------------
# geometric estimate
# ---------------------------------------------------------------------------


def _field_grid(domain: Domain, nodes_per_axis: int) -> tuple[np.ndarray, float]:
    axes, cell = midpoint_axes(domain.lower, domain.upper, nodes_per_axis)
    if domain.dim == 1:
        return axes[0][:, None], cell
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1), cell


def intervention_volume(
    h: MetricField, domain: Domain, nodes_per_axis: int = 101
) -> float:
    """Riemannian volume of the parameter box under the intervention metric."""
    pts, cell = _field_grid(domain, nodes_per_axis)
    h_stack = h.batch(pts)
    sign, logdet = np.linalg.slogdet(h_stack)
    if np.any(sign <= 0):
        bad = pts[int(np.argmax(sign <= 0))]
        raise DegenerateModelError(f"intervention metric not positive definite at {bad}")
    return float(cell * np.sum(np.exp(0.5 * logdet)))


def ei_geometric(
    g: MetricField,
    h: MetricField,
    domain: Domain,
    nodes_per_axis: int = 101,
) -> EIReport:
    """Geometric effective information from the two metric fields.

    nats = log(V / (2 pi e)^{d/2}) - <l>, with V the intervention-metric
    volume of the box and <l> the volume-weighted mean mismatch. Midpoint
    grids (staggered counts across axes above one dimension) keep nodes off
    symmetry-aligned singular lines. The value may legitimately be negative;
    it is reported as-is with a flag.
    """
    if g.dim != h.dim or g.dim != domain.dim:
        raise InvalidConfigError("metric fields and domain must share a dimension")
    d = domain.dim
    pts, cell = _field_grid(domain, nodes_per_axis)
    h_stack = h.batch(pts)
    g_stack = g.batch(pts)
    sign, logdet_h = np.linalg.slogdet(h_stack)
    if np.any(sign <= 0):
        bad = pts[int(np.argmax(sign <= 0))]
        raise DegenerateModelError(f"intervention metric not positive definite at {bad}")
    sqrt_h = np.exp(0.5 * logdet_h)
    try:
        l_vals = _mismatch_batch(g_stack, h_stack)
    except DegenerateModelError as exc:
        raise DegenerateModelError(f"{exc} (within the evaluation grid)") from exc
    volume = float(cell * np.sum(sqrt_h))
    mean_l = float(np.sum(sqrt_h * l_vals) * cell / volume)
    volume_term = math.log(volume) - 0.5 * d * _LOG_2PIE
    nats = volume_term - mean_l
    flags: tuple[str, ...] = ()
    if nats < 0.0:
        flags = (FLAG_NEGATIVE_GEOMETRIC,)
    if d == 1:
        counts = str(nodes_per_axis + nodes_per_axis % 2)
    else:
        counts = "x".join(str(nodes_per_axis + k) for k in range(d))
    return EIReport.build(
        nats,
        "geometric",
        f"midpoint:{counts}",
        volume_term=volume_term,
        mean_mismatch=mean_l,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# closed-form profile approximation
# ---------------------------------------------------------------------------


def ei_dimmer_approx(
    profile,
    eps: float | tp.Callable[[np.ndarray], np.ndarray],
    delta: float,
    domain: Domain | None = None,
    nodes: int = 201,
) -> EIReport:
    """Small-noise approximation for a scalar response profile.

    EI ~ log L - (1/L) * integral of 0.5 * log[2 pi e ((eps/f')^2 + delta^2)]
    over the parameter interval. Valid when the profile curves slowly
    relative to both noise scales.
    """
    domain = domain or Domain(((0.0, 1.0),))
    if domain.dim != 1:
        raise InvalidConfigError("profile approximation is one-dimensional")
    lo, hi = domain.axes[0]
    theta, w = gauss_legendre(lo, hi, nodes)
    f_val = np.asarray(profile.f(theta), dtype=float)
    slope = np.asarray(profile.df(theta), dtype=float)
    if np.any(slope == 0.0):
        idx = int(np.argmax(slope == 0.0))
        raise DegenerateProfileError(f"profile slope vanishes at theta={theta[idx]:.6g}")
    eps_val = eps(f_val) if callable(eps) else np.full_like(theta, float(eps))
    eps_val = np.asarray(eps_val, dtype=float)
    length = hi - lo
    integrand = 0.5 * (_LOG_2PIE + np.log((eps_val / slope) ** 2 + delta**2))
    nats = math.log(length) - float(np.sum(w * integrand)) / length
    return EIReport.build(nats, "dimmer-approx", f"gauss-legendre:{nodes}")
