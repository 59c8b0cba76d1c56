"""Bayesian crack growth: Paris-law paths, posterior predictions and remaining life.

Story: five specimens start at 9 mm. A hierarchical model with correlated
log-rate and exponent is sampled by adaptive random-walk Metropolis. The
posterior gives each specimen's path, the cycles until a new specimen
reaches 30 mm, and a remaining-life curve for one specimen at 150 cycles.
"""
import numpy as np

from degrade.bayes import (FatigueModelSpec, McmcSettings, cycles_to_threshold, diagnostics,
                           rul_distribution, run_mcmc)
from degrade.data import rmdt_from_arrays
from degrade.paths import paris_value

rng = np.random.default_rng(0)
t = np.arange(0, 201, 20.0)
ids, tt, yy = [], [], []
for i in range(5):
    l1, t2 = -9.0 + 0.2 * rng.standard_normal(), 3.0 + 0.05 * rng.standard_normal()
    ids += [f"S{i}"] * t.size
    tt += list(t)
    yy += list(paris_value(t, np.exp(l1), t2, 9.0) + 0.2 * rng.standard_normal(t.size))
data = rmdt_from_arrays(ids, tt, yy)

spec = FatigueModelSpec()
S = run_mcmc(spec, data, McmcSettings(chains=4, iters=15000, seed=1))
diag = diagnostics(S)
worst = max(diag, key=lambda k: diag[k]["rhat"])
print(f"worst R-hat {diag[worst]['rhat']:.3f} ({worst}); min ESS {min(d['ess'] for d in diag.values()):.0f}")

c = cycles_to_threshold(S, spec, 30.0, seed=2)
lo, med, hi = np.nanquantile(c, [0.025, 0.5, 0.975])
print(f"cycles for a new specimen to reach 30 mm: median {med:.0f}, 95% interval [{lo:.0f}, {hi:.0f}]")

rul = rul_distribution(S, spec, "S0", 150.0, np.arange(0, 601, 50.0), 30.0, seed=3)
print("\nremaining life of S0 given survival to 150 cycles:")
for s, p in zip(rul.times, rul.cdf):
    print(f"  +{s:4.0f} cycles  P(failed) {p:.3f}")
