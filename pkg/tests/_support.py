"""Shared fixtures-as-functions for the test modules."""
import numpy as np

from lgcmed import Contrast, ModelKind, ModelSpec, make_params

TABLE2 = {
    "delta_0": 2.361, "delta_1": 0.59, "beta_0": 0.066, "beta_1": 0.049,
    "phi_0": -0.825, "phi_1": -1.238, "phi_2": 3.677, "phi_3": -8.897,
    "gamma_0": 1.643, "gamma_1": 0.396, "gamma_2": -0.904, "gamma_3": 8.185,
}
TABLE2_SE = {
    "delta_0": 0.029, "delta_1": 0.031, "beta_0": 0.012, "beta_1": 0.012,
    "phi_0": 0.996, "phi_1": 0.377, "phi_2": 0.499, "phi_3": 4.343,
    "gamma_0": 0.463, "gamma_1": 0.18, "gamma_2": 0.233, "gamma_3": 2.096,
}
TABLE3_NDE = (-1.238, -0.842, -0.446, -0.05)
TABLE3_NIE = (1.733477, 1.601182, 1.468887, 1.336592)
MS_CONTRAST = Contrast.binary(0.0, -1.0)

CELLS = [(k, i) for k in (ModelKind.BINARY, ModelKind.GROWTH) for i in (False, True)]
CELL_IDS = [f"{k.name.lower()}-{'inter' if i else 'nointer'}" for k, i in CELLS]


def table2_spec():
    return ModelSpec()


def table2_params():
    return make_params(table2_spec(), TABLE2)


def table2_vcov():
    spec = table2_spec()
    names = make_params(spec).layout.structural_names
    return np.diag([TABLE2_SE[n] ** 2 for n in names])


def random_contrast(spec, rng):
    c = rng.normal(size=spec.covariate_dim)
    if spec.is_growth:
        a = rng.normal(size=4)
        return Contrast.growth(*a, c=c)
    x, xs = rng.choice([0.0, 1.0, -1.0, 2.0], size=2, replace=False)
    return Contrast.binary(x, xs, c=c)
