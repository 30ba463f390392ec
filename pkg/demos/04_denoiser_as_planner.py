"""Gaussian checks: the posterior mean maximizes quadratic welfare.

Run: python demos/04_denoiser_as_planner.py
"""
from pamdp.aggregation import (GaussianDiffusionSpec, bayes_denoiser, noise_prediction_identity_check,
                               default_perturbations, planner_dominance_check, welfare_of)

spec = GaussianDiffusionSpec.with_point(alpha=0.8, sigma=0.6)

# %% With mu0 = 0 and unit prior variance the posterior mean is 0.8 x_t.
bayes = bayes_denoiser(spec, 0.5)
print("Bayes rule: gain", round(bayes.gain, 6), "offset", round(bayes.offset, 6))
w = welfare_of(bayes, spec, 0.5, n=100_000, seed=0)
print(f"welfare {w.value:.4f} +/- {w.se:.4f} (closed form -0.36)")

# %% Every perturbed affine rule loses, and by the predicted amount.
rep = planner_dominance_check(spec, 0.5, default_perturbations(), n=100_000, seed=1)
for r in rep.results[:5]:
    print(f"  dG={r.d_gain:+.1f} db={r.d_offset:+.1f}: gap {r.gap:.4f} +/- {r.gap_se:.4f},"
          f" predicted {r.predicted_gap:.4f}")
print("all 20 pass:", rep.passed, " max |z| of the cross term:", round(rep.max_cross_z, 2))

# %% The noise-prediction view gives the same rule.
print("identity error:", noise_prediction_identity_check(spec, 0.5, n=10_000, seed=2).max_error)

# %% Along a cosine schedule.
sched = GaussianDiffusionSpec.cosine(5)
for t in sched.times:
    r = planner_dominance_check(sched, t, default_perturbations(), n=100_000, seed=3)
    print(f"t={t:.2f}  welfare(Bayes)={r.welfare_bayes:+.4f}  passed={r.passed}")
