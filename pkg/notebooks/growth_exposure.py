# Growth-curve exposure: the exposure has its own intercept and slope, and a
# contrast moves those two latent values rather than a single treatment flag.

from lgcmed import (
    EffectKind,
    ModelKind,
    ModelSpec,
    SimOptions,
    estimate_effects,
    example_params,
    fit,
    generate,
)
from lgcmed.effects import default_growth_contrast, effect

spec = ModelSpec(ModelKind.GROWTH, time_scores=(0, 1, 2, 3, 4))
truth = example_params(spec)
data = generate(spec, truth, SimOptions(n=1500, seed=1))
res = fit(spec, data)
print("converged", res.converged, "loglik", round(res.loglik, 2))

# raise the exposure intercept by 1 and its slope by 0.5
contrast = default_growth_contrast(1.0, 0.5)
for e in estimate_effects(res.theta_hat, res.structural_vcov, [0, 2, 4], contrast,
                          kinds=["NDE", "NIE", "Total"]):
    true = effect(e.kind, truth, e.t, contrast)
    print(f"t={e.t:.0f} {e.kind.value:5s} {e.point:7.3f} [{e.ci_low:7.3f}, {e.ci_high:7.3f}]  truth {true:7.3f}")

# total is exactly NDE + NIE
t = 4.0
print(effect(EffectKind.TOTAL, truth, t, contrast)
      - effect(EffectKind.NDE, truth, t, contrast) - effect(EffectKind.NIE, truth, t, contrast))
