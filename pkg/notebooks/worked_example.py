# Direct and indirect effects from published coefficient estimates.
#
# The estimates file carries point estimates and standard errors for a
# binary-exposure parallel-process model without interaction.  Only the SEs
# are available, so the covariance is the diagonal approximation and the
# indirect-effect intervals are wider than a full covariance would give.

import numpy as np

from lgcmed import effect_curve, estimate_effects, mackinnon_effects, wald_interval
from lgcmed.core import Contrast
from lgcmed.io import bundled_estimates_path, load_estimates

est = load_estimates(bundled_estimates_path())
print(est.flags)  # ('diagonal-approximation',)

# exposure moves from x* = -1 to x = 0
contrast = Contrast.binary(0.0, -1.0)

for e in estimate_effects(est.params, est.vcov, [0, 1, 2, 3], contrast):
    print(f"t={e.t:.0f} {e.kind.value:4s} {e.point:9.6f}  ({e.ci_low:8.5f}, {e.ci_high:8.5f})  p={e.p_value:.3f}")

# The direct effect only loads on phi_1 at t=0, so its SE is just SE(phi_1)
print(est.vcov[est.params.layout.index("phi_1"), est.params.layout.index("phi_1")] ** 0.5)

# Effects on a fine grid (the CSV form of this is the plot-ready artifact)
grid = np.linspace(0, 3, 13)
curve = effect_curve(est.params, grid, contrast, kinds=["NDE", "NIE", "Total"])
for t in grid[::4]:
    row = [e.point for e in curve if e.t == t]
    print(t, np.round(row, 4))

# The direct effect crosses zero where phi_1 + gamma_1 t = 0
p = est.params
print("NDE zero crossing at t =", -p.phi[1] / p.gamma[1])

# Time-constant comparator: direct gamma_1, indirect beta_1 * gamma_3
m = mackinnon_effects(est.params, est.vcov)
print("direct", m.direct, wald_interval(*m.direct)[:2])
print("indirect", m.indirect, wald_interval(*m.indirect)[:2])
