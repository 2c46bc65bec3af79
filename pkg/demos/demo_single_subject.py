"""
Fitting one subject four ways
=============================

A small simulated study supplies a spatial template and FC priors.  One
held-out subject is then fitted with dual regression, template ICA and the
two variational-Bayes algorithms, and each FC estimate is compared with the
subject's true in-sample FC.  The VB fits also give credible intervals.

Run with ``python3 demos/demo_single_subject.py``; it takes a few seconds.
"""
import numpy as np

from fctica import (
    VbOptions,
    build_pchol_model,
    build_study,
    dual_regression,
    estimate_templates,
    fit_iw_prior,
    posterior_fc,
    run_vb,
    sample_pchol,
    tica_em,
)
from fctica._utils import correlation

###############################################################################
# Simulate a study and estimate the priors
# ----------------------------------------
# The training subjects' two half-sessions act as test-retest pairs.

study = build_study(grid=(40, 40), n_train=40, n_test=1, T_total=800, T_model=400, seed=4)
S0 = study.group_maps
template, fc_train = estimate_templates([s.test_retest() for s in study.train], S0)
iw = fit_iw_prior(fc_train)
pchol = sample_pchol(build_pchol_model(fc_train, n_perm=50, seed=1), 10_000, seed=2)

###############################################################################
# Fit the test subject
# --------------------
# Template ICA starts from dual regression; both VB algorithms start from
# template ICA.

subject = study.test[0]
Y = subject.model_data()
truth = subject.fc_model()
iu = np.triu_indices(5, 1)

dr = dual_regression(Y, S0)
tica = tica_em(Y, template, group_maps=S0)
vb1 = run_vb(Y, template, iw, VbOptions(method="VB1", n_u_samples=2000, seed=0), init=tica)
vb2 = run_vb(Y, template, pchol, VbOptions(method="VB2", seed=0), init=tica)

for name, A in [("DR", dr.A_hat), ("tICA", tica.A_hat), ("VB1", vb1.state.A_hat), ("VB2", vb2.state.A_hat)]:
    err = np.abs(correlation(A) - truth)[iu].mean()
    print(f"{name:5s} mean |FC error| = {err:.4f}")

###############################################################################
# Credible intervals
# ------------------
# VB2 draws time courses from their posterior for each prior sample; the
# intervals are percentiles of the resulting correlation matrices.

post = posterior_fc(vb2, Y, pchol, level=0.95, mode="draw", seed=0)
covered = (post.ci_lo[iu] <= truth[iu]) & (truth[iu] <= post.ci_hi[iu])
print(f"\nVB2 95% intervals cover {covered.mean():.0%} of true FC pairs,"
      f" mean width {post.width[iu].mean():.3f}")
