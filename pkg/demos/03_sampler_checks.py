"""Checking Gibbs samplers with a joint-distribution (Geweke) test.

Two simulators of the joint distribution of parameters and data are compared:
independent draws from the prior, and a chain that alternates a posterior
sweep with regenerating the data.  Both have the prior as parameter marginal,
so for a correct sampler every z-score is roughly standard normal.  Skipping
one update breaks the second simulator and the test notices.

Run:  python demos/03_sampler_checks.py        (about two minutes)
"""

import numpy as np

from ltn.evaluation import cov_geweke_model, geweke_test, normal_toy_model
from ltn.samplers import rng_stream

for label, model, iters, mutation in (
    ("normal toy model", normal_toy_model(), 20000, "phi"),
    ("LTN covariance model, K=4, n=5", cov_geweke_model(), 8000, "mu"),
):
    ok = geweke_test(model, iters, rng_stream(1))
    bad = geweke_test(model, iters // 2, rng_stream(2), skip=(mutation,))
    worst = int(np.argmax(np.abs(ok.z)))
    print(f"{label}: {len(ok.z)} statistics")
    print(f"  correct sampler   max |z| = {ok.max_abs_z:5.2f}  ({ok.names[worst]})")
    print(f"  without {mutation:<8}  max |z| = {bad.max_abs_z:5.1f}")
