"""From paths to soft failures to a nonparametric life curve.

Story: without any path model, each unit's failure time is where its
readings first cross the threshold. Units that never cross are censored.
The Kaplan-Meier curve and an equal-precision simultaneous band follow.
"""
import numpy as np

from degrade.gpm import GpmModelSpec, simulate_rmdt
from degrade.nonparam import extract_soft_failures, kaplan_meier, nair_scb

spec = GpmModelSpec("linear_lograte", ("log_slope",))
truth = {"intercept": 0.0, "mu_log_slope": -0.7, "sd_log_slope": 0.35, "sigma_eps": 0.05}
data = simulate_rmdt(spec, truth, [np.arange(1, 13.0)] * 60, seed=6)
events = extract_soft_failures(data, 5.0)
n_fail = sum(f for _, f in events)
print(f"{n_fail} of {len(events)} units crossed 5.0 within 12 time units")

km = kaplan_meier(events)
band = nair_scb(events, level=0.95)
print(f"critical value {band.critical_value:.3f} on variance range {tuple(round(v, 3) for v in band.var_range)}")
print("\n  time    S(t)   95% simultaneous band")
for t, s, lo, hi in list(zip(band.times, band.km, band.lower, band.upper))[::5]:
    print(f"  {t:5.2f}  {s:.3f}  [{lo:.3f}, {hi:.3f}]")
print(f"\nfinal KM failure probability {km.cdf[-1]:.3f}")
