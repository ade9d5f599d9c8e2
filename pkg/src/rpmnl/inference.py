"""Marginal effects, likelihood-ratio tests and contingency-table tests."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .data import CONSTANT, ChoiceDataset, ModelSpec, SeverityLevel, build_design
from .estimator import EstimationResult, rho_squared
from .quasirandom import DrawMatrix, make_draws
from .simll import ProbabilityEngine

__all__ = [
    "ChiSquareResult",
    "LrTestResult",
    "MarginalEffectsTable",
    "chi_square_homogeneity",
    "chi_square_sf",
    "lr_test",
    "marginal_effect",
    "margins_table",
    "net_marginal_effect",
    "rho_squared",
]


class UnsupportedVariableError(ValueError):
    pass


def chi_square_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square distribution via the regularized incomplete gamma."""
    if df < 0:
        raise ValueError("df must be nonnegative")
    if df == 0:
        return 1.0 if x <= 0 else 0.0
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


# -- marginal effects --------------------------------------------------------


@dataclass
class EffectRow:
    label: str
    variable: str
    alternatives: tuple[str, ...]
    net: bool
    effects: tuple[float, float, float]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "variable": self.variable,
            "alternatives": list(self.alternatives),
            "net": self.net,
            "no_injury": self.effects[0],
            "minor": self.effects[1],
            "moderate_severe": self.effects[2],
        }


@dataclass
class MarginalEffectsTable:
    rows: list[EffectRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def row(self, variable: str) -> EffectRow:
        for r in self.rows:
            if r.variable == variable:
                return r
        raise KeyError(variable)

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows], "notes": self.notes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MarginalEffectsTable":
        rows = [
            EffectRow(
                r["label"],
                r["variable"],
                tuple(r["alternatives"]),
                bool(r["net"]),
                (r["no_injury"], r["minor"], r["moderate_severe"]),
            )
            for r in d["rows"]
        ]
        return cls(rows, list(d.get("notes", [])))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variable", "alternatives", "net", "no_injury", "minor", "moderate_severe"])
        for r in self.rows:
            w.writerow([r.variable, "+".join(r.alternatives), int(r.net), *(repr(e) for e in r.effects)])
        return buf.getvalue()


def _appearances(spec: ModelSpec, variable: str) -> dict[int, list]:
    """Override keys of every place ``variable`` enters, grouped by utility function."""
    where: dict[int, list] = {}
    for t in spec.terms:
        if t.variable == variable:
            where.setdefault(int(t.alternative), []).append(("x", t.coef_id))
    for rp in spec.random_parameters:
        alt = int(spec.term(rp.coef_id).alternative)
        for v, _ in rp.mean_shift:
            if v == variable:
                where.setdefault(alt, []).append(("z", rp.coef_id, v))
        for v, _ in rp.variance_shift:
            if v == variable:
                where.setdefault(alt, []).append(("w", rp.coef_id, v))
    return where


def _check_indicator(dataset: ChoiceDataset, variable: str):
    if variable == CONSTANT:
        raise UnsupportedVariableError("constants have no marginal effect")
    if variable not in dataset.columns:
        raise KeyError(f"variable {variable!r} not in dataset")
    col = dataset.columns[variable]
    if not np.all((col == 0) | (col == 1)):
        raise UnsupportedVariableError(
            f"variable {variable!r} is not a 0/1 indicator; only discrete-change effects are supported"
        )


def discrete_change(
    dataset: ChoiceDataset,
    spec: ModelSpec,
    theta,
    draws: DrawMatrix | None,
    keys: Iterable,
) -> np.ndarray:
    """Average over observations of P(indicator=1) - P(indicator=0).

    The indicator is switched only at the override ``keys``; every other
    appearance keeps its observed value. Both evaluations share the draws.
    """
    keys = list(keys)
    on = ProbabilityEngine(build_design(dataset, spec, {k: 1.0 for k in keys}), draws)
    off = ProbabilityEngine(build_design(dataset, spec, {k: 0.0 for k in keys}), draws)
    diff = on.probabilities(theta) - off.probabilities(theta)
    return np.array([math.fsum(diff[:, k]) / diff.shape[0] for k in range(diff.shape[1])])


def _result_context(result: EstimationResult, dataset: ChoiceDataset, draws: DrawMatrix | None):
    spec = result.model_spec()
    if draws is None and spec.random_parameters:
        cfg = result.halton_config()
        draws = make_draws(cfg, len(dataset), len(spec.random_parameters))
    return spec, result.theta, draws


def marginal_effect(
    result: EstimationResult,
    dataset: ChoiceDataset,
    variable: str,
    alternative=None,
    draws: DrawMatrix | None = None,
) -> np.ndarray:
    """Average discrete-change effect of an indicator entering one utility function.

    Returns the change in (P(N), P(M), P(MM)).
    """
    spec, theta, draws = _result_context(result, dataset, draws)
    _check_indicator(dataset, variable)
    where = _appearances(spec, variable)
    if not where:
        raise KeyError(f"variable {variable!r} does not enter the model")
    if alternative is None:
        if len(where) > 1:
            raise ValueError(
                f"variable {variable!r} enters {len(where)} utility functions; "
                "pass alternative= or use net_marginal_effect"
            )
        (alt,) = where
    else:
        alt = int(SeverityLevel.parse(alternative))
        if alt not in where:
            raise KeyError(f"variable {variable!r} does not enter the {SeverityLevel(alt).short} function")
    return discrete_change(dataset, spec, theta, draws, where[alt])


def net_marginal_effect(
    result: EstimationResult,
    dataset: ChoiceDataset,
    variable_group: str | Sequence[str],
    draws: DrawMatrix | None = None,
) -> np.ndarray:
    """Effect of switching an indicator in every function it enters at once.

    ``variable_group`` is a variable name or a list of coefficient ids that
    must all belong to one variable.
    """
    spec, theta, draws = _result_context(result, dataset, draws)
    if isinstance(variable_group, str):
        variable = variable_group
    else:
        ids = list(variable_group)
        missing = [c for c in ids if c not in {t.coef_id for t in spec.terms}]
        if missing:
            raise KeyError(f"coefficients not in the model: {missing}")
        variables = {spec.term(c).variable for c in ids}
        if len(variables) != 1:
            raise ValueError(f"coefficient group spans several variables: {sorted(variables)}")
        (variable,) = variables
    _check_indicator(dataset, variable)
    where = _appearances(spec, variable)
    if not where:
        raise KeyError(f"variable {variable!r} does not enter the model")
    keys = [k for alt in sorted(where) for k in where[alt]]
    return discrete_change(dataset, spec, theta, draws, keys)


def margins_table(
    result: EstimationResult,
    dataset: ChoiceDataset,
    draws: DrawMatrix | None = None,
) -> MarginalEffectsTable:
    """One row per indicator in the utilities; net rows for variables in several functions."""
    spec, theta, draws = _result_context(result, dataset, draws)
    table = MarginalEffectsTable()
    seen = []
    for t in spec.terms:
        if t.variable != CONSTANT and t.variable not in seen:
            seen.append(t.variable)
    for variable in seen:
        col = dataset.columns.get(variable)
        if col is None or not np.all((col == 0) | (col == 1)):
            table.notes.append(f"{variable}: not a 0/1 indicator, no discrete-change effect")
            continue
        where = _appearances(spec, variable)
        alts = sorted(where)
        keys = [k for alt in sorted(where) for k in where[alt]]
        effects = discrete_change(dataset, spec, theta, draws, keys)
        net = len(alts) > 1
        names = tuple(SeverityLevel(a).short for a in alts)
        label = f"{variable} [{'+'.join(names)}]" + (" (net)" if net else "")
        table.rows.append(EffectRow(label, variable, names, net, tuple(float(e) for e in effects)))
    return table


# -- likelihood-ratio tests --------------------------------------------------


@dataclass
class LrTestResult:
    statistic: float
    degrees_of_freedom: int
    p_value: float
    ll_restricted: float
    ll_unrestricted: float
    warnings: list[str] = field(default_factory=list)

    def reject(self, level: float) -> bool:
        return self.p_value < 1.0 - level

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "degrees_of_freedom": self.degrees_of_freedom,
            "p_value": self.p_value,
            "ll_restricted": self.ll_restricted,
            "ll_unrestricted": self.ll_unrestricted,
            "warnings": self.warnings,
        }


def _ll_and_k(model) -> tuple[float, int]:
    if isinstance(model, EstimationResult):
        return model.llb, model.n_parameters
    if isinstance(model, (list, tuple)) and model and all(isinstance(m, EstimationResult) for m in model):
        return math.fsum(m.llb for m in model), sum(m.n_parameters for m in model)
    if isinstance(model, (list, tuple)) and len(model) == 2:
        return float(model[0]), int(model[1])
    raise TypeError("expected an EstimationResult, a list of results, or an (ll, n_parameters) pair")


def lr_test(restricted, unrestricted, df: int | None = None) -> LrTestResult:
    """Likelihood-ratio test of nested models.

    Each side is an ``EstimationResult``, a list of results whose
    log-likelihoods add up (separate models against a pooled one), or an
    ``(ll, n_parameters)`` pair. The side with fewer parameters is treated as
    the restricted model, so argument order does not matter.
    """
    ll_r, k_r = _ll_and_k(restricted)
    ll_u, k_u = _ll_and_k(unrestricted)
    if k_r > k_u:
        ll_r, k_r, ll_u, k_u = ll_u, k_u, ll_r, k_r
    dof = k_u - k_r if df is None else int(df)
    notes = []
    stat = 2.0 * (ll_u - ll_r)
    if stat < 0:
        msg = (
            f"unrestricted log-likelihood {ll_u:.4f} is below restricted {ll_r:.4f}; "
            "models may not be nested or did not converge"
        )
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
        stat = 0.0
    return LrTestResult(stat, dof, chi_square_sf(stat, dof), ll_r, ll_u, notes)


# -- contingency tables ------------------------------------------------------


@dataclass
class ChiSquareResult:
    statistic: float
    df: int
    p_value: float
    observed: np.ndarray
    expected: np.ndarray

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "observed": self.observed.tolist(),
            "expected": self.expected.tolist(),
        }


def chi_square_homogeneity(table) -> ChiSquareResult:
    """Pearson chi-square test of homogeneity on an r x c table of counts."""
    obs = np.asarray(table, dtype=float)
    if obs.ndim != 2 or min(obs.shape) < 2:
        raise ValueError("need a two-dimensional table with at least 2 rows and 2 columns")
    if np.any(obs < 0) or not np.all(np.isfinite(obs)):
        raise ValueError("counts must be finite and nonnegative")
    rows, cols = obs.sum(axis=1), obs.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise ValueError("every row and column total must be positive")
    expected = np.outer(rows, cols) / obs.sum()
    stat = math.fsum(((obs - expected) ** 2 / expected).ravel())
    df = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    return ChiSquareResult(stat, df, chi_square_sf(stat, df), obs, expected)

