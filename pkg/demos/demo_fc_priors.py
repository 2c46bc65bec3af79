"""
Population priors on functional connectivity
=============================================

Two priors are built from the same set of training correlation matrices:
an inverse-Wishart prior on the covariance ``G`` of the time courses, and
a permuted-Cholesky (pChol) prior that samples correlation matrices
directly.  The script compares how well each reproduces the spread of the
training set, then shows the ordering bias that a single Cholesky ordering
introduces.

Run with ``python3 demos/demo_fc_priors.py``; it takes a few seconds.
"""
import numpy as np

from fctica import FcTrainingSet, build_pchol_model, fit_iw_prior, sample_pchol
from fctica._utils import cov_to_cor
from fctica.simulate import BASE_FC, generate_subject_fc

###############################################################################
# A training set
# --------------
# 500 subject FC matrices scattered around a fixed 5 x 5 base FC.

rng = np.random.default_rng(0)
train = FcTrainingSet.from_samples(
    np.stack([generate_subject_fc(BASE_FC, 15, rng) for _ in range(500)])
)
iu = np.triu_indices(5, 1)
print("training mean FC (upper triangle):", np.round(train.mean[iu], 3))
print("training SD     (upper triangle):", np.round(train.samples.std(0, ddof=1)[iu], 3))

###############################################################################
# Inverse-Wishart prior
# ---------------------
# The scale matrix is tied to the training mean and the degrees of freedom
# are made as large as possible while every off-diagonal prior variance still
# covers the empirical variance.  Draws are covariances; their correlation
# form is what the data model sees.

iw = fit_iw_prior(train)
draws = np.stack([cov_to_cor(G) for G in iw.sample(20_000, seed=1)])
print(f"\nIW degrees of freedom nu0 = {iw.nu0:.2f}")
print("IW correlation SD:", np.round(draws.std(0)[iu], 3))

###############################################################################
# Permuted-Cholesky prior
# -----------------------
# Every draw is a valid correlation matrix by construction.  Averaging over
# 100 random orderings keeps the sampled SD close to the training SD.

model = build_pchol_model(train, n_perm=100, seed=2)
pchol = sample_pchol(model, 20_000, seed=3)
print("\npChol SD, 100 orderings:", np.round(pchol.samples.std(0)[iu], 3))
print("max |mean - training mean|:", round(float(np.abs(pchol.samples.mean(0) - train.mean).max()), 4))

###############################################################################
# Ordering bias of a single factorization
# ---------------------------------------
# With one ordering the elements that enter the factorization first get
# slightly more spread than those that enter last.  Averaging the SD ratio
# in each ordering's own frame makes the pattern visible.

ref = pchol.samples.std(0)
np.fill_diagonal(ref, 1.0)
ratio = np.zeros((5, 5))
for m in range(20):
    one = build_pchol_model(train, n_perm=1, seed=100 + m)
    p = one.components[0].perm
    s = sample_pchol(one, 5_000, seed=200 + m)
    ratio += (s.samples.std(0) / ref)[np.ix_(p, p)] / 20
lead = np.minimum(*iu)
print("\nSD ratio by leading factor index:",
      np.round([ratio[iu][lead == k].mean() for k in range(4)], 4))
