# What an unmeasured mediator-outcome confounder does to the indirect effect.
#
# The same truth is simulated twice: once with a hidden U loading on both the
# mediator and outcome growth factors, once without.  The fitted model never
# sees U, so the first fit is biased and the second is not.

from lgcmed import (
    Confounder,
    Contrast,
    EffectKind,
    ModelSpec,
    SimOptions,
    delta_se,
    effect_gradient,
    example_params,
    fit,
    generate,
    nie,
)

spec = ModelSpec()
# a quieter mediator process makes U a visible share of its variance
truth = example_params(spec).with_values(
    {"psi_M_11": 0.5, "psi_M_21": 0.05, "psi_M_22": 0.1, "sigma2_M": 0.25, "sigma2_Y": 0.25}
)
c = Contrast.binary(1.0, 0.0)
target = nie(truth, 1.0, c)
print("true NIE at t=1:", round(target, 4))

for load in (0.0, 0.5, 1.0):
    conf = Confounder((load, load), (load, load))
    res = fit(spec, generate(spec, truth, SimOptions(n=5000, seed=77, confounder=conf)))
    est = nie(res.theta_hat, 1.0, c)
    se = delta_se(effect_gradient(EffectKind.NIE, res.theta_hat, 1.0, c), res.structural_vcov)
    print(f"U loading {load:.1f}: NIE {est:.4f} (SE {se:.4f}), off by {abs(est - target) / se:.1f} SE")
