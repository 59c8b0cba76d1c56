"""Accelerated destructive tests and the thermal index.

Story: adhesive strength is measured destructively after aging at 50, 60
and 70 C. Two models describe the strength decay: a parametric
Arrhenius-exponential one and a semiparametric monotone spline. Each
yields the temperature at which half the strength is lost after 100000 h.
"""
import math

from degrade.addt import AddtParametricModel, AddtTemplate, fit_addt, simulate_addt, thermal_index
from degrade.data import arrhenius_transform
from degrade.optim import OptimizerOptions

x70 = arrhenius_transform(70.0, "negative")
truth = AddtParametricModel(4.47, -0.0284 / math.exp(0.65 * x70), 0.65, 0.10, 0.3)
d0 = 4.47 - math.log(2)
data = simulate_addt(truth, (50.0, 60.0, 70.0), (336.0, 672.0, 1008.0, 2016.0, 2688.0), 8,
                     seed=0, baseline=8)
print(f"{len(data.records)} destructive measurements")
print(f"true TI: {thermal_index(truth, d0, 1e5).ti_celsius:.2f} C")

par = fit_addt("parametric", data, OptimizerOptions(restarts=2))
e = par.estimates
print(f"\nparametric fit: beta0 {e['beta0']:.3f}, beta2 {e['beta2']:.3f}, sigma {e['sigma']:.3f}, rho {e['rho']:.3f}")
print(f"  TI {thermal_index(par, d0, 1e5).ti_celsius:.2f} C")

semi = fit_addt(AddtTemplate("semiparametric"), data)
r = thermal_index(semi, d0, 1e5, curve_temps=[20, 30, 40, 50, 60, 70, 80])
print(f"semiparametric TI {r.ti_celsius:.2f} C")
print("\nmean time to half strength by temperature (semiparametric):")
for tc, h in zip(*r.mtf_curve):
    print(f"  {tc:6.1f} C  {h:12.0f} h")
