"""Domain types shared by every module: model specification, parameter sets,
the canonical flat parameter layout, panel datasets and exposure contrasts.

Paper-index conventions are kept for the coefficient arrays so that formula
code reads naturally: ``params.phi[4]`` is the coefficient of ``x * I_M`` in
the outcome-intercept equation of the binary-exposure model.  Interaction
slots always exist in the arrays; when the spec has ``interaction=False`` they
are held at zero and are left out of the flat layout.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np


class LGCMError(Exception):
    """Base class for package errors."""


class ValidationError(LGCMError, ValueError):
    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NotIdentifiedError(LGCMError, ValueError):
    pass


class UnsupportedModelError(LGCMError, ValueError):
    pass


class NumericalFailure(LGCMError, ArithmeticError):
    pass


class ModelKind(str, enum.Enum):
    BINARY = "BinaryExposure"
    GROWTH = "GrowthExposure"


class ResidualMode(str, enum.Enum):
    HOMOSCEDASTIC = "Homoscedastic"
    PER_OCCASION = "PerOccasion"


@dataclass(frozen=True)
class ModelSpec:
    """Which parallel-process model is used and how it is measured.

    Parameters
    ----------
    model_kind : ModelKind
        ``BINARY`` (exposure observed once) or ``GROWTH`` (exposure has its
        own growth curve).
    interaction : bool
        Whether exposure-by-mediator-latent products enter the outcome
        equations.
    time_scores : sequence of float
        Strictly increasing loadings of the slope factors.  Defaults to
        ``0, 1, ..., T-1`` via :meth:`with_occasions`.
    covariate_dim : int
        Number of baseline covariates ``p``.
    residual_variance_mode : ResidualMode
        One residual variance per process, or one per process and occasion.
    """

    model_kind: ModelKind = ModelKind.BINARY
    interaction: bool = False
    time_scores: tuple[float, ...] = (0.0, 1.0, 2.0, 3.0)
    covariate_dim: int = 0
    residual_variance_mode: ResidualMode = ResidualMode.HOMOSCEDASTIC

    def __post_init__(self):
        object.__setattr__(self, "model_kind", ModelKind(self.model_kind))
        object.__setattr__(
            self, "residual_variance_mode", ResidualMode(self.residual_variance_mode)
        )
        scores = tuple(float(s) for s in self.time_scores)
        object.__setattr__(self, "time_scores", scores)
        problems = []
        if len(scores) < 1:
            problems.append("time_scores must contain at least one occasion")
        if any(b <= a for a, b in zip(scores, scores[1:])):
            problems.append("time_scores must be strictly increasing")
        if int(self.covariate_dim) != self.covariate_dim or self.covariate_dim < 0:
            problems.append("covariate_dim must be a nonnegative integer")
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "covariate_dim", int(self.covariate_dim))

    @classmethod
    def with_occasions(cls, n_occasions: int, **kwargs) -> "ModelSpec":
        return cls(time_scores=tuple(float(t) for t in range(n_occasions)), **kwargs)

    @property
    def is_growth(self) -> bool:
        return self.model_kind is ModelKind.GROWTH

    @property
    def n_occasions(self) -> int:
        return len(self.time_scores)

    @property
    def processes(self) -> tuple[str, ...]:
        return ("X", "M", "Y") if self.is_growth else ("M", "Y")

    @property
    def n_latent(self) -> int:
        return 2 * len(self.processes)

    @property
    def n_observed(self) -> int:
        return self.n_occasions * len(self.processes)

    @property
    def n_residual_per_process(self) -> int:
        if self.residual_variance_mode is ResidualMode.PER_OCCASION:
            return self.n_occasions
        return 1


# Paper indices of the exposure-by-mediator coefficients in phi/gamma.
_INTERACTION_SLOTS = {ModelKind.BINARY: (4, 5), ModelKind.GROWTH: (5, 6, 7, 8)}
# Number of scalar (non-covariate) coefficients per block, including interaction slots.
_BLOCK_SIZES = {
    ModelKind.BINARY: {"delta": 2, "beta": 2, "phi": 6, "gamma": 6},
    ModelKind.GROWTH: {"delta": 3, "beta": 3, "phi": 9, "gamma": 9},
}
_STRUCTURAL_BLOCKS = ("delta", "beta", "phi", "gamma")


def interaction_slots(kind: ModelKind) -> tuple[int, ...]:
    return _INTERACTION_SLOTS[ModelKind(kind)]


def _covariate_index(kind: ModelKind, block: str) -> int:
    # index the paper uses for the covariate vector of each block
    return _BLOCK_SIZES[kind][block]


@dataclass(frozen=True)
class ThetaLayout:
    """Ordered parameter names for the flat vector; structural block first."""

    names: tuple[str, ...]
    n_structural: int

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._lookup[name]
        except KeyError:
            raise KeyError(f"unknown parameter name {name!r}") from None

    @property
    def _lookup(self) -> dict[str, int]:
        lookup = self.__dict__.get("_lookup_cache")
        if lookup is None:
            lookup = {n: i for i, n in enumerate(self.names)}
            object.__setattr__(self, "_lookup_cache", lookup)
        return lookup

    @property
    def structural_names(self) -> tuple[str, ...]:
        return self.names[: self.n_structural]

    @property
    def variance_names(self) -> tuple[str, ...]:
        return self.names[self.n_structural :]

    def pairs(self) -> list[tuple[str, int]]:
        return [(n, i) for i, n in enumerate(self.names)]


def _block_names(spec: ModelSpec, block: str) -> list[str]:
    kind = spec.model_kind
    skip = () if spec.interaction or block in ("delta", "beta") else _INTERACTION_SLOTS[kind]
    names = [f"{block}_{k}" for k in range(_BLOCK_SIZES[kind][block]) if k not in skip]
    ci = _covariate_index(kind, block)
    names += [f"{block}_{ci}[{j + 1}]" for j in range(spec.covariate_dim)]
    return names


def structural_names(spec: ModelSpec) -> list[str]:
    names = ["rho_0", "lambda_0"] if spec.is_growth else []
    for block in _STRUCTURAL_BLOCKS:
        names += _block_names(spec, block)
    return names


def variance_names(spec: ModelSpec) -> list[str]:
    names = []
    for proc in spec.processes:
        if spec.residual_variance_mode is ResidualMode.PER_OCCASION:
            names += [f"sigma2_{proc}[{k + 1}]" for k in range(spec.n_occasions)]
        else:
            names.append(f"sigma2_{proc}")
    for proc in spec.processes:
        names += [f"psi_{proc}_11", f"psi_{proc}_21", f"psi_{proc}_22"]
    return names


def theta_layout(spec: ModelSpec) -> ThetaLayout:
    s = structural_names(spec)
    return ThetaLayout(tuple(s + variance_names(spec)), len(s))


def structural_length(spec: ModelSpec) -> int:
    return len(structural_names(spec))


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """All coefficients and variance components of one model.

    Coefficient arrays follow paper indexing: ``delta[k]`` is the k-th scalar
    coefficient of the mediator-intercept equation and ``delta_c`` the
    covariate vector.  ``rho0``/``lambda0`` and the ``*_x`` variance terms
    exist only for the growth-exposure model.  ``sigma2_*`` hold one entry
    (homoscedastic) or one per occasion.
    """

    spec: ModelSpec
    delta: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    gamma: np.ndarray
    delta_c: np.ndarray
    beta_c: np.ndarray
    phi_c: np.ndarray
    gamma_c: np.ndarray
    sigma2_m: np.ndarray
    sigma2_y: np.ndarray
    psi_m: np.ndarray
    psi_y: np.ndarray
    rho0: float | None = None
    lambda0: float | None = None
    sigma2_x: np.ndarray | None = None
    psi_x: np.ndarray | None = None

    def __post_init__(self):
        for name in ("delta", "beta", "phi", "gamma", "delta_c", "beta_c", "phi_c",
                     "gamma_c", "sigma2_m", "sigma2_y", "psi_m", "psi_y"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        for name in ("sigma2_x", "psi_x"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, _frozen(getattr(self, name)))
        for name in ("rho0", "lambda0"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def layout(self) -> ThetaLayout:
        return theta_layout(self.spec)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.layout.names, pack(self.spec, self).tolist()))

    def structural_dict(self) -> dict[str, float]:
        lay = self.layout
        flat = pack(self.spec, self)
        return dict(zip(lay.structural_names, flat[: lay.n_structural].tolist()))

    def replace(self, **changes) -> "ParameterSet":
        return replace(self, **changes)

    def with_values(self, values: Mapping[str, float]) -> "ParameterSet":
        """Copy with the named flat-layout entries overwritten."""
        lay = self.layout
        flat = pack(self.spec, self)
        for name, v in values.items():
            flat[lay.index(name)] = v
        return unpack(self.spec, flat)

    def without_interaction(self) -> "ParameterSet":
        """Same coefficients under the interaction-free spec.

        Raises if any interaction coefficient is nonzero.
        """
        slots = list(_INTERACTION_SLOTS[self.spec.model_kind])
        if np.any(self.phi[slots] != 0) or np.any(self.gamma[slots] != 0):
            raise ValidationError(["interaction coefficients are nonzero"])
        return replace(self, spec=replace(self.spec, interaction=False))

    def with_interaction(self) -> "ParameterSet":
        return replace(self, spec=replace(self.spec, interaction=True))


def make_params(spec: ModelSpec, values: Mapping[str, float] | None = None,
                variance_default: float = 1.0) -> ParameterSet:
    """Build a ParameterSet from named layout entries.

    Unnamed structural coefficients default to 0, residual variances and Psi
    diagonals to ``variance_default`` and Psi off-diagonals to 0.
    """
    lay = theta_layout(spec)
    flat = np.zeros(len(lay))
    for i, name in enumerate(lay.names):
        if name.startswith("sigma2_") or name.endswith("_11") or name.endswith("_22"):
            flat[i] = variance_default
    for name, v in (values or {}).items():
        flat[lay.index(name)] = float(v)
    return unpack(spec, flat)


def pack(spec: ModelSpec, params: ParameterSet) -> np.ndarray:
    """Flatten ``params`` in :func:`theta_layout` order."""
    kind = spec.model_kind
    out = []
    if spec.is_growth:
        out += [params.rho0, params.lambda0]
    for block in _STRUCTURAL_BLOCKS:
        arr = getattr(params, block)
        skip = () if spec.interaction or block in ("delta", "beta") else _INTERACTION_SLOTS[kind]
        out += [arr[k] for k in range(_BLOCK_SIZES[kind][block]) if k not in skip]
        out += list(getattr(params, block + "_c"))
    sig = {"X": params.sigma2_x, "M": params.sigma2_m, "Y": params.sigma2_y}
    psi = {"X": params.psi_x, "M": params.psi_m, "Y": params.psi_y}
    for proc in spec.processes:
        out += list(np.broadcast_to(sig[proc], (spec.n_residual_per_process,)))
    for proc in spec.processes:
        p = psi[proc]
        out += [p[0, 0], p[1, 0], p[1, 1]]
    return np.array(out, dtype=float)


def unpack(spec: ModelSpec, flat) -> ParameterSet:
    """Inverse of :func:`pack`."""
    flat = np.asarray(flat, dtype=float)
    n_expected = len(theta_layout(spec))
    if flat.shape != (n_expected,):
        raise ValidationError(
            [f"flat parameter vector has length {flat.size}, layout needs {n_expected}"]
        )
    kind = spec.model_kind
    p = spec.covariate_dim
    pos = 0

    def take(k):
        nonlocal pos
        chunk = flat[pos:pos + k]
        pos += k
        return chunk

    kw = {}
    if spec.is_growth:
        kw["rho0"], kw["lambda0"] = take(2)
    for block in _STRUCTURAL_BLOCKS:
        size = _BLOCK_SIZES[kind][block]
        arr = np.zeros(size)
        skip = () if spec.interaction or block in ("delta", "beta") else _INTERACTION_SLOTS[kind]
        keep = [k for k in range(size) if k not in skip]
        arr[keep] = take(len(keep))
        kw[block] = arr
        kw[block + "_c"] = take(p).copy()
    r = spec.n_residual_per_process
    for proc in spec.processes:
        kw[f"sigma2_{proc.lower()}"] = take(r).copy()
    for proc in spec.processes:
        a, b, c = take(3)
        kw[f"psi_{proc.lower()}"] = np.array([[a, b], [b, c]])
    return ParameterSet(spec=spec, **kw)


def _is_pd(m: np.ndarray) -> bool:
    if not np.all(np.isfinite(m)):
        return False
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return False
    return True


def validate(spec: ModelSpec, params: ParameterSet, *, allow_degenerate: bool = False) -> list[str]:
    """Return every violated invariant; an empty list means valid.

    ``allow_degenerate`` accepts zero variances and PSD (rather than PD)
    Psi blocks, which forward simulation can use but likelihood fitting cannot.
    """
    errs = []
    kind = spec.model_kind
    if params.spec.model_kind is not kind:
        errs.append(f"parameters are for {params.spec.model_kind.value}, spec is {kind.value}")
        return errs
    for block in _STRUCTURAL_BLOCKS:
        arr = getattr(params, block)
        if arr.shape != (_BLOCK_SIZES[kind][block],):
            errs.append(f"{block} has length {arr.size}, expected {_BLOCK_SIZES[kind][block]}")
        cov = getattr(params, block + "_c")
        if cov.shape != (spec.covariate_dim,):
            errs.append(
                f"{block} covariate block has length {cov.size}, expected covariate_dim={spec.covariate_dim}"
            )
    if not spec.interaction and not errs:
        slots = list(_INTERACTION_SLOTS[kind])
        if np.any(params.phi[slots] != 0) or np.any(params.gamma[slots] != 0):
            errs.append("interaction coefficients must be absent (zero) when interaction is off")
    if spec.is_growth:
        if params.rho0 is None or params.lambda0 is None:
            errs.append("rho_0 and lambda_0 are required for the growth-exposure model")
        if params.sigma2_x is None or params.psi_x is None:
            errs.append("exposure variance components are required for the growth-exposure model")
    sig = {"X": params.sigma2_x, "M": params.sigma2_m, "Y": params.sigma2_y}
    psi = {"X": params.psi_x, "M": params.psi_m, "Y": params.psi_y}
    r = spec.n_residual_per_process
    for proc in spec.processes:
        s = sig[proc]
        if s is None:
            continue
        if s.shape not in ((1,), (r,)):
            errs.append(f"sigma2_{proc} has length {s.size}, expected {r}")
        elif not np.all(np.isfinite(s)):
            errs.append(f"sigma2_{proc} not finite")
        elif np.any(s < 0) or (not allow_degenerate and np.any(s <= 0)):
            errs.append(f"sigma2_{proc} must be positive")
        m = psi[proc]
        if m is None:
            continue
        label = f"Ψ_{proc}"
        if m.shape != (2, 2):
            errs.append(f"{label} must be 2x2")
        elif not np.allclose(m, m.T, rtol=0, atol=1e-12):
            errs.append(f"{label} not symmetric")
        elif allow_degenerate:
            if not np.all(np.isfinite(m)) or np.linalg.eigvalsh(m).min() < -1e-12 * max(1.0, np.abs(m).max()):
                errs.append(f"{label} not positive semidefinite")
        elif not _is_pd(m):
            errs.append(f"{label} not positive definite")
    for name in ("delta", "beta", "phi", "gamma"):
        if not np.all(np.isfinite(getattr(params, name))):
            errs.append(f"{name} not finite")
    return errs


def check(spec: ModelSpec, params: ParameterSet, **kw) -> None:
    errs = validate(spec, params, **kw)
    if errs:
        raise ValidationError(errs)


@dataclass(frozen=True)
class Contrast:
    """Exposure contrast ``x`` versus reference ``x_star`` at covariates ``c``.

    For the binary-exposure model ``x`` and ``x_star`` have one entry; for
    the growth-exposure model they hold the (intercept, slope) levels of the
    exposure process.
    """

    x: tuple[float, ...]
    x_star: tuple[float, ...]
    c: tuple[float, ...] = ()

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(self.x))
        xs = tuple(float(v) for v in np.atleast_1d(self.x_star))
        if len(x) != len(xs) or len(x) not in (1, 2):
            raise ValidationError(["contrast levels must both have 1 (binary) or 2 (growth) entries"])
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "x_star", xs)
        object.__setattr__(self, "c", tuple(float(v) for v in np.ravel(self.c)))

    @classmethod
    def binary(cls, x: float, x_star: float, c: Iterable[float] = ()) -> "Contrast":
        return cls((x,), (x_star,), tuple(c))

    @classmethod
    def growth(cls, x1: float, x1_star: float, x2: float, x2_star: float,
               c: Iterable[float] = ()) -> "Contrast":
        return cls((x1, x2), (x1_star, x2_star), tuple(c))

    @classmethod
    def parse(cls, text: str, c: Iterable[float] = ()) -> "Contrast":
        """``"x,x*"`` or ``"x1,x1*,x2,x2*"``."""
        vals = [float(v) for v in str(text).split(",") if v.strip()]
        if len(vals) == 2:
            return cls.binary(*vals, c=c)
        if len(vals) == 4:
            return cls.growth(*vals, c=c)
        raise ValidationError([f"contrast needs 2 or 4 numbers, got {len(vals)}"])

    def covariates(self, p: int) -> np.ndarray:
        """Covariate value as an array of length ``p`` (zero vector when unset)."""
        if not self.c:
            return np.zeros(p)
        if len(self.c) != p:
            raise ValidationError([f"contrast covariate value has length {len(self.c)}, expected {p}"])
        return np.array(self.c)

    def swapped(self) -> "Contrast":
        return Contrast(self.x_star, self.x, self.c)


def _rows(a, n: int) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == n:
        return arr
    if n == 0:
        return arr.reshape(0, 0)
    return arr.reshape(n, -1)


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Per-subject repeated measures on a shared occasion grid.

    Missing values are NaN; ``*_mask`` properties give the observed pattern.
    ``exposure`` has shape ``(n,)`` for the binary-exposure model and
    ``(n, T)`` for the growth-exposure model.
    """

    ids: tuple[str, ...]
    exposure: np.ndarray
    mediator: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.ids)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        med = _rows(self.mediator, n)
        out = _rows(self.outcome, n)
        T = med.shape[1]
        x = np.array(self.exposure, dtype=float)
        if x.ndim != 2:
            x = x.reshape(n)
        cov = self.covariates
        cov = np.zeros((n, 0)) if cov is None else _rows(cov, n)
        problems = []
        if out.shape != med.shape:
            problems.append("mediator and outcome series have different lengths")
        if x.ndim == 2 and x.shape[1] != T:
            problems.append("exposure series length differs from mediator series length")
        if len(set(self.ids)) != n:
            problems.append("subject ids are not unique")
        if np.any(np.isnan(cov)):
            problems.append("covariates may not be missing")
        if problems:
            raise ValidationError(problems)
        for name, arr in (("exposure", x), ("mediator", med), ("outcome", out), ("covariates", cov)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.ids)

    @property
    def n_occasions(self) -> int:
        return self.mediator.shape[1]

    @property
    def covariate_dim(self) -> int:
        return self.covariates.shape[1]

    @property
    def has_exposure_series(self) -> bool:
        return self.exposure.ndim == 2

    @property
    def mediator_mask(self) -> np.ndarray:
        return ~np.isnan(self.mediator)

    @property
    def outcome_mask(self) -> np.ndarray:
        return ~np.isnan(self.outcome)

    @property
    def exposure_mask(self) -> np.ndarray:
        return ~np.isnan(self.exposure)

    def observed_matrix(self) -> np.ndarray:
        """Stacked observed series per subject: ``[X_1..X_T,] M_1..M_T, Y_1..Y_T``."""
        parts = [self.exposure] if self.has_exposure_series else []
        return np.hstack(parts + [self.mediator, self.outcome])

    def take(self, index) -> "PanelDataset":
        index = np.asarray(index, dtype=int)
        return PanelDataset(
            ids=tuple(self.ids[i] for i in index),
            exposure=self.exposure[index],
            mediator=self.mediator[index],
            outcome=self.outcome[index],
            covariates=self.covariates[index],
        )

    def check_against(self, spec: ModelSpec) -> None:
        problems = []
        if self.n_occasions != spec.n_occasions and len(self):
            problems.append(
                f"series have {self.n_occasions} occasions, spec has {spec.n_occasions} time scores"
            )
        if self.covariate_dim != spec.covariate_dim and len(self):
            problems.append(
                f"dataset has {self.covariate_dim} covariates, spec expects {spec.covariate_dim}"
            )
        if len(self) and spec.is_growth != self.has_exposure_series:
            problems.append("exposure must be a series for the growth model and a scalar otherwise")
        if problems:
            raise ValidationError(problems)

    @classmethod
    def empty(cls, spec: ModelSpec) -> "PanelDataset":
        T, p = spec.n_occasions, spec.covariate_dim
        x = np.zeros((0, T)) if spec.is_growth else np.zeros(0)
        return cls((), x, np.zeros((0, T)), np.zeros((0, T)), np.zeros((0, p)))

    @classmethod
    def concat(cls, parts: Sequence["PanelDataset"]) -> "PanelDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("nothing to concatenate")
        return cls(
            ids=tuple(i for p in parts for i in p.ids),
            exposure=np.concatenate([p.exposure for p in parts]),
            mediator=np.vstack([p.mediator for p in parts]),
            outcome=np.vstack([p.outcome for p in parts]),
            covariates=np.vstack([p.covariates for p in parts]),
        )
