"""Bayes denoising as a welfare-maximizing planner, Gaussian case.

Latent ``x0 ~ N(mu0, sigma0^2 I_d)`` is observed through
``x_t = alpha_t x0 + sigma_t eps``. Everything here is closed form except the
welfare estimates, which are Monte Carlo with common random numbers so that
estimator comparisons are paired.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigError

SE_BAND = 4.0


@dataclass(frozen=True)
class GaussianDiffusionSpec:
    """Isotropic Gaussian prior plus a noise schedule of (t, alpha_t, sigma_t)."""

    mu0: float = 0.0
    sigma0_sq: float = 1.0
    schedule: tuple = ((0.0, 1.0, 0.0), (1.0, 0.0, 1.0))
    dim: int = 1

    def __post_init__(self):
        sched = tuple(tuple(float(x) for x in entry) for entry in self.schedule)
        object.__setattr__(self, "schedule", sched)
        if self.sigma0_sq < 0 or self.dim < 1:
            raise ConfigError("sigma0_sq must be >= 0 and dim >= 1")
        if any(sig < 0 for _, _, sig in sched):
            raise ConfigError("sigma_t must be nonnegative")
        t0, a0, s0 = sched[0]
        t1, a1, s1 = sched[-1]
        if abs(t0) > 1e-6 or abs(a0 - 1) > 1e-6 or abs(s0) > 1e-6:
            raise ConfigError("schedule must start at (0, 1, 0)")
        if abs(t1 - 1) > 1e-6 or abs(a1) > 1e-6 or abs(s1 - 1) > 1e-6:
            raise ConfigError("schedule must end at (1, ~0, ~1)")

    @classmethod
    def cosine(cls, n_points: int = 11, mu0=0.0, sigma0_sq=1.0, dim=1):
        """Variance-preserving schedule ``alpha = cos(pi t / 2)``, ``sigma = sin(pi t / 2)``."""
        ts = np.linspace(0.0, 1.0, n_points)
        sched = [(t, math.cos(math.pi * t / 2), math.sin(math.pi * t / 2)) for t in ts]
        sched[-1] = (1.0, 0.0, 1.0)
        return cls(mu0, sigma0_sq, tuple(sched), dim)

    @classmethod
    def with_point(cls, alpha, sigma, t=0.5, mu0=0.0, sigma0_sq=1.0, dim=1):
        """Spec whose schedule holds ``(t, alpha, sigma)`` between the endpoints."""
        return cls(mu0, sigma0_sq, ((0.0, 1.0, 0.0), (t, alpha, sigma), (1.0, 0.0, 1.0)), dim)

    @property
    def times(self):
        return [t for t, _, _ in self.schedule]

    def coefficients(self, t: float):
        for tt, a, s in self.schedule:
            if abs(tt - t) <= 1e-12:
                return a, s
        raise KeyError(f"t={t} is not in the schedule")

    def marginal_var(self, t: float) -> float:
        a, s = self.coefficients(t)
        return a * a * self.sigma0_sq + s * s


@dataclass(frozen=True)
class Estimator:
    """Affine reconstruction ``x_hat = gain * x_t + offset`` applied per coordinate."""

    gain: float
    offset: float

    def __call__(self, xt):
        return self.gain * np.asarray(xt) + self.offset

    def perturbed(self, d_gain: float = 0.0, d_offset: float = 0.0) -> "Estimator":
        return Estimator(self.gain + d_gain, self.offset + d_offset)


def forward_sample(spec: GaussianDiffusionSpec, t: float, seed=None, n: int = 1000):
    """Draw ``n`` pairs ``(x0, x_t)``, each of shape (n, d)."""
    a, s = spec.coefficients(t)
    rng = np.random.default_rng(seed)
    x0 = spec.mu0 + math.sqrt(spec.sigma0_sq) * rng.standard_normal((n, spec.dim))
    eps = rng.standard_normal((n, spec.dim))
    return x0, a * x0 + s * eps


def bayes_denoiser(spec: GaussianDiffusionSpec, t: float) -> Estimator:
    """Posterior mean ``E[x0 | x_t]`` as an affine rule."""
    a, _ = spec.coefficients(t)
    var = spec.marginal_var(t)
    if var == 0:
        raise ConfigError(f"degenerate spec at t={t}: x_t has zero variance")
    gain = a * spec.sigma0_sq / var
    return Estimator(gain, spec.mu0 * (1.0 - gain * a))


def noise_predictor(spec: GaussianDiffusionSpec, t: float, xt):
    """``E[eps | x_t]``, the minimizer of the noise-prediction loss."""
    a, s = spec.coefficients(t)
    var = spec.marginal_var(t)
    return s * (np.asarray(xt) - a * spec.mu0) / var


@dataclass
class WelfareEstimate:
    value: float
    se: float


def _sq_loss(x0, xhat):
    return ((x0 - xhat) ** 2).sum(axis=1)


def welfare_of(estimator, spec: GaussianDiffusionSpec, t: float, n: int = 10_000, seed=None) -> WelfareEstimate:
    """Monte Carlo ``-E||x0 - x_hat(x_t)||^2`` with its standard error."""
    if n < 2:
        raise ConfigError("welfare_of needs n >= 2")
    x0, xt = forward_sample(spec, t, seed, n)
    loss = _sq_loss(x0, estimator(xt))
    return WelfareEstimate(-float(loss.mean()), float(loss.std(ddof=1) / math.sqrt(n)))


def predicted_gap(spec: GaussianDiffusionSpec, t: float, other: Estimator) -> float:
    """Closed-form ``E||E[x0|x_t] - other(x_t)||^2``."""
    bayes = bayes_denoiser(spec, t)
    a, _ = spec.coefficients(t)
    dg, db = bayes.gain - other.gain, bayes.offset - other.offset
    mean = a * spec.mu0
    second = spec.marginal_var(t) + mean * mean
    return spec.dim * (dg * dg * second + 2 * dg * db * mean + db * db)


@dataclass
class PerturbationResult:
    d_gain: float
    d_offset: float
    welfare: float
    gap: float
    gap_se: float
    predicted_gap: float
    dominated: bool
    decomposition_ok: bool
    cross: float = 0.0
    cross_se: float = 0.0

    @property
    def orthogonal(self) -> bool:
        return abs(self.cross) <= SE_BAND * self.cross_se + 1e-15


@dataclass
class DominanceReport:
    t: float
    welfare_bayes: float
    se_bayes: float
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.dominated and r.decomposition_ok for r in self.results) and self.orthogonal

    @property
    def orthogonal(self) -> bool:
        return all(r.orthogonal for r in self.results)

    @property
    def max_cross_z(self) -> float:
        z = [abs(r.cross) / r.cross_se for r in self.results if r.cross_se > 0]
        return max(z, default=0.0)

    @property
    def failures(self) -> list:
        return [r for r in self.results if not (r.dominated and r.decomposition_ok)]


def planner_dominance_check(spec: GaussianDiffusionSpec, t: float,
                            perturbations: Iterable[Sequence[float]], n: int = 100_000,
                            seed=None) -> DominanceReport:
    """Compare the Bayes rule with perturbed affine rules on shared samples.

    For each ``(d_gain, d_offset)`` the welfare gap must be nonnegative up to
    4 standard errors and agree with the closed-form excess risk
    ``E||E[x0|x_t] - x_hat||^2`` within 4 standard errors. Each result also
    carries the mean cross term between the Bayes residual and the
    difference to the perturbed rule, which should vanish.
    """
    x0, xt = forward_sample(spec, t, seed, n)
    bayes = bayes_denoiser(spec, t)
    b_hat = bayes(xt)
    base_loss = _sq_loss(x0, b_hat)
    root_n = math.sqrt(n)
    report = DominanceReport(t, -float(base_loss.mean()), float(base_loss.std(ddof=1) / root_n))
    for d_gain, d_offset in perturbations:
        other = bayes.perturbed(d_gain, d_offset)
        o_hat = other(xt)
        diff = _sq_loss(x0, o_hat) - base_loss
        gap, gap_se = float(diff.mean()), float(diff.std(ddof=1) / root_n)
        pred = predicted_gap(spec, t, other)
        cross = ((x0 - b_hat) * (b_hat - o_hat)).sum(axis=1)
        report.results.append(PerturbationResult(
            d_gain, d_offset, -float(_sq_loss(x0, o_hat).mean()), gap, gap_se, pred,
            dominated=gap >= -SE_BAND * gap_se,
            decomposition_ok=abs(gap - pred) <= SE_BAND * gap_se + 1e-12,
            cross=float(cross.mean()), cross_se=float(cross.std(ddof=1) / root_n)))
    return report


@dataclass
class IdentityReport:
    t: float
    max_error: float
    skipped: bool = False
    note: str = ""


def noise_prediction_identity_check(spec: GaussianDiffusionSpec, t: float, n: int = 1000, seed=None) -> IdentityReport:
    """Pointwise gap between ``(x_t - sigma_t E[eps|x_t]) / alpha_t`` and the Bayes rule."""
    a, s = spec.coefficients(t)
    if a == 0:
        return IdentityReport(t, float("nan"), skipped=True, note="alpha_t = 0: relation undefined")
    _, xt = forward_sample(spec, t, seed, n)
    via_noise = (xt - s * noise_predictor(spec, t, xt)) / a
    direct = bayes_denoiser(spec, t)(xt)
    return IdentityReport(t, float(np.max(np.abs(via_noise - direct))))


def default_perturbations():
    """20 nonzero (gain, offset) perturbations."""
    grid = []
    for dg in (-0.2, -0.1, 0.1, 0.2):
        for db in (-0.2, -0.1, 0.0, 0.1, 0.2):
            grid.append((dg, db))
    return grid


def diffusion_report(spec: GaussianDiffusionSpec, t: float, n: int = 100_000, seed=None,
                     perturbations=None) -> dict:
    """JSON-ready summary for one schedule point."""
    perturbations = default_perturbations() if perturbations is None else perturbations
    dom = planner_dominance_check(spec, t, perturbations, n, seed)
    ident = noise_prediction_identity_check(spec, t, min(n, 10_000), seed)
    return {
        "t": t,
        "welfare_bayes": dom.welfare_bayes,
        "welfare_bayes_se": dom.se_bayes,
        "gaps": [{"d_gain": r.d_gain, "d_offset": r.d_offset, "gap": r.gap, "se": r.gap_se,
                  "predicted": r.predicted_gap, "ok": bool(r.dominated and r.decomposition_ok)}
                 for r in dom.results],
        "orthogonality_max_z": dom.max_cross_z,
        "identity_max_err": None if ident.skipped else ident.max_error,
        "passed": bool(dom.passed and (ident.skipped or ident.max_error < 1e-9)),
    }
