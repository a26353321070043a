"""File formats: long-format panel CSV, JSON configs, estimates files and reports.

Long CSV
    Header ``subject_id,variable,occasion,value``.  ``variable`` is ``x``, ``m``
    or ``y``; baseline covariates use ``c1``, ``c2``, ... at occasion 0.
    ``occasion`` is a 0-based index into the time scores.  Absent cells are
    missing.  A binary exposure is recorded at occasion 0 only.

Estimates file (JSON)
    ``{"model": {...}, "coefficients": {name: value}, "vcov": {"order": [...],
    "matrix": [[...]]}}`` or, without ``vcov``, an ``"se": {name: value}`` map
    that is turned into a diagonal covariance and flagged
    ``diagonal-approximation``.

Config (JSON)
    ``{"model": {...}, "params": {...}, "variance_default": 1.0,
    "simulation": {...}, "fit": {...}, "seed": int}``; see README for the keys.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .core import (
    LGCMError,
    ModelKind,
    ModelSpec,
    PanelDataset,
    ParameterSet,
    ResidualMode,
    ValidationError,
    make_params,
    theta_layout,
)
from .effects import EffectEstimate

DIAGONAL_FLAG = "diagonal-approximation"
EFFECTS_HEADER = ("t", "kind", "point", "se", "ci_low", "ci_high", "p_value")
LONG_HEADER = ("subject_id", "variable", "occasion", "value")

_COVARIATE = re.compile(r"^c([1-9][0-9]*)$")


class InputError(LGCMError, ValueError):
    """Unreadable or malformed input file."""


# -- number formatting -------------------------------------------------------

def fmt(v) -> str:
    """A real with 17 significant digits; non-finite values as ``nan``/``inf``."""
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written at 17 significant digits.

    Non-finite floats become ``null``.  Numpy scalars and arrays are accepted.
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, np.generic):
        obj = obj.item()
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.generic)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_text(path, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror}") from None


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise InputError(f"{path}: top-level JSON value must be an object")
    return obj


# -- long CSV ----------------------------------------------------------------

def write_long_csv(data: PanelDataset, path) -> None:
    """Write ``data`` in long format; missing cells are omitted."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LONG_HEADER)
    for i, sid in enumerate(data.ids):
        start = buf.tell()
        if data.has_exposure_series:
            for k, v in enumerate(data.exposure[i]):
                if not np.isnan(v):
                    w.writerow((sid, "x", k, fmt(v)))
        elif not np.isnan(data.exposure[i]):
            w.writerow((sid, "x", 0, fmt(data.exposure[i])))
        for var, arr in (("m", data.mediator), ("y", data.outcome)):
            for k, v in enumerate(arr[i]):
                if not np.isnan(v):
                    w.writerow((sid, var, k, fmt(v)))
        for j, v in enumerate(data.covariates[i]):
            w.writerow((sid, f"c{j + 1}", 0, fmt(v)))
        if buf.tell() == start:
            # keep fully missing subjects visible
            w.writerow((sid, "m", 0, ""))
    _write_text(path, buf.getvalue())


def parse_long_csv(path, spec: ModelSpec | None = None) -> PanelDataset:
    """Read a long-format CSV into a dataset.

    Without ``spec`` the number of occasions is the largest occasion index
    plus one and the exposure is a series iff any ``x`` row has occasion > 0.
    With ``spec`` the grid and exposure shape come from it and out-of-range
    occasions are errors.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LONG_HEADER:
            raise InputError(f"{path}: line 1: header must be {','.join(LONG_HEADER)}")
        cells: dict[tuple[str, str, int], float] = {}
        order: dict[str, None] = {}
        for row in reader:
            line = reader.line_num
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != 4:
                raise InputError(f"{path}: line {line}: expected 4 fields, got {len(row)}")
            sid, var, occ, val = (f.strip() for f in row)
            if not sid:
                raise InputError(f"{path}: line {line}: empty subject_id")
            if var not in ("x", "m", "y") and not _COVARIATE.match(var):
                raise InputError(f"{path}: line {line}: unknown variable {var!r}")
            try:
                k = int(occ)
            except ValueError:
                raise InputError(f"{path}: line {line}: occasion {occ!r} is not an integer") from None
            if k < 0:
                raise InputError(f"{path}: line {line}: negative occasion")
            try:
                v = float(val) if val not in ("", "NA", "nan", "NaN") else math.nan
            except ValueError:
                raise InputError(f"{path}: line {line}: value {val!r} is not a number") from None
            if var.startswith("c") and k != 0:
                raise InputError(f"{path}: line {line}: covariates are recorded at occasion 0")
            key = (sid, var, k)
            if key in cells:
                raise InputError(f"{path}: line {line}: duplicate row for subject {sid!r}, "
                                 f"variable {var!r}, occasion {k}")
            if spec is not None and k >= spec.n_occasions:
                raise InputError(f"{path}: line {line}: occasion {k} outside the "
                                 f"{spec.n_occasions}-occasion grid")
            if spec is not None and not spec.is_growth and var == "x" and k != 0:
                raise InputError(f"{path}: line {line}: binary exposure must be at occasion 0")
            cells[key] = v
            order.setdefault(sid, None)
    return _assemble(cells, list(order), spec, path)


def _assemble(cells, ids, spec, path) -> PanelDataset:
    if spec is None:
        occs = [k for (_, var, k) in cells if var in ("m", "y", "x")]
        T = max(occs) + 1 if occs else ModelSpec().n_occasions
        growth = any(var == "x" and k > 0 for (_, var, k) in cells)
        p = max((int(_COVARIATE.match(var).group(1)) for (_, var, _) in cells
                 if _COVARIATE.match(var)), default=0)
    else:
        T, growth, p = spec.n_occasions, spec.is_growth, spec.covariate_dim
    n = len(ids)
    if n == 0:
        return PanelDataset.empty(spec or ModelSpec(time_scores=tuple(range(T)), covariate_dim=p))
    pos = {s: i for i, s in enumerate(ids)}
    x = np.full((n, T) if growth else n, np.nan)
    med, out = np.full((n, T), np.nan), np.full((n, T), np.nan)
    cov = np.full((n, p), np.nan)
    for (sid, var, k), v in cells.items():
        i = pos[sid]
        if var == "x":
            if growth:
                x[i, k] = v
            else:
                x[i] = v
        elif var == "m":
            med[i, k] = v
        elif var == "y":
            out[i, k] = v
        else:
            j = int(var[1:]) - 1
            if j >= p:
                raise InputError(f"{path}: covariate {var} beyond the {p} expected")
            cov[i, j] = v
    if np.any(np.isnan(cov)):
        bad = ids[int(np.where(np.isnan(cov).any(axis=1))[0][0])]
        raise InputError(f"{path}: subject {bad!r} is missing a covariate value")
    return PanelDataset(tuple(ids), x, med, out, cov)


# -- model / config ----------------------------------------------------------

def spec_from_dict(d: Mapping[str, Any]) -> ModelSpec:
    known = {"kind", "interaction", "time_scores", "n_occasions", "covariate_dim",
             "residual_variance_mode"}
    extra = set(d) - known
    if extra:
        raise ValidationError([f"unknown model keys: {sorted(extra)}"])
    try:
        kind = ModelKind(d.get("kind", ModelKind.BINARY.value))
        mode = ResidualMode(d.get("residual_variance_mode", ResidualMode.HOMOSCEDASTIC.value))
    except ValueError as exc:
        raise ValidationError([str(exc)]) from None
    if "time_scores" in d:
        scores = tuple(float(s) for s in d["time_scores"])
    else:
        scores = tuple(float(t) for t in range(int(d.get("n_occasions", 4))))
    return ModelSpec(kind, bool(d.get("interaction", False)), scores,
                     int(d.get("covariate_dim", 0)), mode)


def spec_to_dict(spec: ModelSpec) -> dict:
    return {"kind": spec.model_kind.value, "interaction": spec.interaction,
            "time_scores": list(spec.time_scores), "covariate_dim": spec.covariate_dim,
            "residual_variance_mode": spec.residual_variance_mode.value}


def _check_names(spec: ModelSpec, names: Iterable[str], what: str) -> None:
    lay = theta_layout(spec)
    unknown = [n for n in names if n not in lay.names]
    if unknown:
        raise ValidationError([f"{what}: unknown parameter names {unknown} for this model"])


@dataclass(frozen=True)
class Config:
    spec: ModelSpec
    params: ParameterSet | None = None
    simulation: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    seed: int | None = None
    raw: dict = field(default_factory=dict, repr=False)

    def sim_options(self, n: int | None = None, seed: int | None = None):
        from .simulator import Confounder, SimOptions

        s = dict(self.simulation)
        conf = s.pop("confounder", None)
        if conf is not None:
            conf = Confounder(tuple(conf.get("mediator", (0.0, 0.0))),
                              tuple(conf.get("outcome", (0.0, 0.0))))
        if n is not None:
            s["n"] = n
        if seed is not None:
            s["seed"] = seed
        elif "seed" not in s and self.seed is not None:
            s["seed"] = self.seed
        if "n" not in s:
            raise ValidationError(["simulation.n is required"])
        try:
            return SimOptions(confounder=conf, **s)
        except TypeError as exc:
            raise ValidationError([f"simulation: {exc}"]) from None

    def fit_options(self):
        from .estimator import FitOptions

        f = dict(self.fit)
        start = f.pop("start", None)
        if isinstance(start, Mapping):
            _check_names(self.spec, start, "fit.start")
            f["start"] = make_params(self.spec, start)
        elif start not in (None, "Default"):
            raise ValidationError(["fit.start must be \"Default\" or a map of parameter values"])
        try:
            return FitOptions(**f)
        except TypeError as exc:
            raise ValidationError([f"fit: {exc}"]) from None


def load_config(path) -> Config:
    d = _read_json(path)
    extra = set(d) - {"model", "params", "variance_default", "simulation", "fit", "seed"}
    if extra:
        raise ValidationError([f"{path}: unknown config keys {sorted(extra)}"])
    spec = spec_from_dict(d.get("model", {}))
    params = None
    if "params" in d:
        _check_names(spec, d["params"], "params")
        params = make_params(spec, d["params"], float(d.get("variance_default", 1.0)))
    seed = d.get("seed")
    return Config(spec, params, dict(d.get("simulation", {})), dict(d.get("fit", {})),
                  None if seed is None else int(seed), d)


# -- estimates ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Estimates:
    """Coefficients and structural covariance read from an estimates file."""

    spec: ModelSpec
    params: ParameterSet
    vcov: np.ndarray
    flags: tuple[str, ...] = ()
    seed: int | None = None

    @property
    def diagonal_approximation(self) -> bool:
        return DIAGONAL_FLAG in self.flags


def _structural_vcov(spec, order, matrix, path) -> np.ndarray:
    lay = theta_layout(spec)
    order = [str(n) for n in order]
    if len(set(order)) != len(order):
        raise ValidationError([f"{path}: vcov order has duplicate names"])
    _check_names(spec, order, "vcov.order")
    m = np.asarray(matrix, dtype=float)
    if m.ndim == 1 and m.size == len(order) ** 2:
        m = m.reshape(len(order), len(order))
    if m.shape != (len(order), len(order)):
        raise ValidationError([f"{path}: vcov matrix shape {m.shape} does not match "
                               f"order length {len(order)}"])
    if not np.allclose(m, m.T, rtol=1e-12, atol=1e-15):
        raise ValidationError([f"{path}: vcov matrix is not symmetric"])
    missing = [n for n in lay.structural_names if n not in order]
    if missing:
        raise ValidationError([f"{path}: vcov lacks structural entries {missing}"])
    idx = [order.index(n) for n in lay.structural_names]
    return m[np.ix_(idx, idx)]


def load_estimates(path) -> Estimates:
    d = _read_json(path)
    spec = spec_from_dict(d.get("model", {}))
    coefs = d.get("coefficients")
    if not isinstance(coefs, Mapping):
        raise ValidationError([f"{path}: \"coefficients\" map is required"])
    _check_names(spec, coefs, "coefficients")
    lay = theta_layout(spec)
    missing = [n for n in lay.structural_names if n not in coefs]
    if missing:
        raise ValidationError([f"{path}: coefficients lack {missing}"])
    params = make_params(spec, {k: float(v) for k, v in coefs.items()})
    flags: list[str] = []
    if "vcov" in d:
        v = d["vcov"]
        vcov = _structural_vcov(spec, v.get("order", []), v.get("matrix", []), path)
    elif "se" in d:
        se = d["se"]
        _check_names(spec, se, "se")
        lack = [n for n in lay.structural_names if n not in se]
        if lack:
            raise ValidationError([f"{path}: se map lacks {lack}"])
        s = np.array([float(se[n]) for n in lay.structural_names])
        if np.any(s < 0):
            raise ValidationError([f"{path}: standard errors must be nonnegative"])
        vcov = np.diag(s * s)
        flags.append(DIAGONAL_FLAG)
    else:
        raise ValidationError([f"{path}: need either \"vcov\" or \"se\""])
    flags.extend(f for f in d.get("flags", ()) if f not in flags)
    seed = d.get("seed")
    return Estimates(spec, params, vcov, tuple(flags), None if seed is None else int(seed))


def bundled_estimates_path() -> str:
    """Path of the packaged worked-example estimates (binary exposure, no interaction)."""
    return str(resources.files("lgcmed") / "data" / "worked_example_estimates.json")


# -- reports -----------------------------------------------------------------

def fit_report(result, seed: int | None = None, flags: Sequence[str] = ()) -> dict:
    from . import __version__

    spec = result.theta_hat.spec
    names = list(result.layout.names)
    rep = {
        "tool": "lgcmed", "version": __version__, "seed": seed,
        "model": spec_to_dict(spec),
        "coefficients": dict(zip(names, result.theta_flat.tolist())),
        "se": dict(zip(names, result.se.tolist())),
        "loglik": result.loglik, "converged": result.converged,
        "iterations": result.iterations, "grad_norm": result.grad_norm,
        "n_subjects": result.n_subjects, "dropped_subjects": result.dropped_subjects,
        "message": result.message, "flags": list(flags),
    }
    if result.vcov is not None:
        rep["vcov"] = {"order": names, "matrix": result.vcov.tolist()}
    return rep


def effects_csv(estimates: Sequence[EffectEstimate]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EFFECTS_HEADER)
    for e in estimates:
        w.writerow((fmt(e.t), e.kind.value, fmt(e.point), fmt(e.se), fmt(e.ci_low),
                    fmt(e.ci_high), fmt(e.p_value)))
    return buf.getvalue()


def effects_report(estimates: Sequence[EffectEstimate], seed: int | None = None,
                   flags: Sequence[str] = (), level: float | None = None) -> dict:
    from . import __version__

    return {
        "tool": "lgcmed", "version": __version__, "seed": seed, "flags": list(flags),
        "level": level,
        "effects": [{"t": e.t, "kind": e.kind.value, "point": e.point, "se": e.se,
                     "ci_low": e.ci_low, "ci_high": e.ci_high, "p_value": e.p_value}
                    for e in estimates],
    }


def emit_report(result, path, seed: int | None = None, flags: Sequence[str] = (),
                level: float | None = None) -> None:
    """Write a fit result (JSON) or a list of effect estimates (CSV, or JSON by extension)."""
    from .estimator import FitResult

    if isinstance(result, FitResult):
        _write_text(path, dumps(fit_report(result, seed, flags)) + "\n")
        return
    est = list(result)
    if os.fspath(path).lower().endswith(".json"):
        _write_text(path, dumps(effects_report(est, seed, flags, level)) + "\n")
    else:
        _write_text(path, effects_csv(est))


def read_effects_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (r[k] if k == "kind" else float(r[k]) if r[k] else None) for k in EFFECTS_HEADER})
    return out
