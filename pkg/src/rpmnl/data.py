"""Severity choice data, model specifications and design matrices.

Utilities are case-specific: a named covariate may carry its own coefficient
in the minor and moderate/severe functions, and the no-injury alternative is
the base with utility fixed at zero.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

CONSTANT = "constant"


class SpecValidationError(ValueError):
    """Model specification does not fit the dataset or is malformed."""


class SeverityLevel(IntEnum):
    NO_INJURY = 0
    MINOR = 1
    MODERATE_SEVERE = 2

    @property
    def short(self) -> str:
        return ("N", "M", "MM")[self.value]

    @classmethod
    def parse(cls, value) -> "SeverityLevel":
        if isinstance(value, SeverityLevel):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        text = str(value).strip()
        key = text.upper().replace("-", "_").replace(" ", "_").replace("/", "_")
        if key in cls.__members__:
            return cls[key]
        shorts = {"N": cls.NO_INJURY, "M": cls.MINOR, "MM": cls.MODERATE_SEVERE}
        if key in shorts:
            return shorts[key]
        if text.isdigit():
            return cls(int(text))
        raise ValueError(f"unknown severity level {value!r}")


ALTERNATIVES = tuple(SeverityLevel)
N_ALT = len(ALTERNATIVES)


@dataclass(frozen=True)
class ChoiceObservation:
    id: str
    outcome: SeverityLevel
    covariates: Mapping[str, float]


class ChoiceDataset:
    """Columnar store of crashes: ids, outcomes and named covariate columns."""

    def __init__(
        self,
        ids: Sequence[str],
        outcomes: Sequence,
        columns: Mapping[str, Sequence[float]],
        indicators: Iterable[str] | None = None,
        notes: Mapping[str, str] | None = None,
    ):
        self.ids = tuple(str(i) for i in ids)
        self.outcomes = np.array([int(SeverityLevel.parse(o)) for o in outcomes], dtype=np.int64)
        n = len(self.ids)
        if self.outcomes.shape[0] != n:
            raise ValueError("ids and outcomes differ in length")
        if len(set(self.ids)) != n:
            seen, dupes = set(), []
            for i in self.ids:
                if i in seen:
                    dupes.append(i)
                seen.add(i)
            raise ValueError(f"duplicate observation ids: {dupes[:5]}")
        self.columns: dict[str, np.ndarray] = {}
        for name, values in columns.items():
            if name == CONSTANT:
                raise ValueError(f"{CONSTANT!r} is reserved for alternative-specific constants")
            arr = np.array(values, dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"column {name!r} has shape {arr.shape}, expected ({n},)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"column {name!r} has non-finite values")
            arr.setflags(write=False)
            self.columns[name] = arr
        self.outcomes.setflags(write=False)
        if indicators is None:
            indicators = [k for k, v in self.columns.items() if np.all((v == 0) | (v == 1))]
        self.indicators = frozenset(indicators)
        for name in self.indicators:
            if name not in self.columns:
                raise ValueError(f"declared indicator {name!r} is not a column")
            v = self.columns[name]
            if not np.all((v == 0) | (v == 1)):
                raise ValueError(f"indicator {name!r} has values outside {{0, 1}}")
        self.notes = dict(notes or {})

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def variables(self) -> list[str]:
        return list(self.columns)

    @property
    def observations(self) -> list[ChoiceObservation]:
        names = self.variables
        return [
            ChoiceObservation(
                id=self.ids[n],
                outcome=SeverityLevel(int(self.outcomes[n])),
                covariates={k: float(self.columns[k][n]) for k in names},
            )
            for n in range(len(self))
        ]

    @classmethod
    def from_observations(cls, observations: Sequence[ChoiceObservation], indicators=None) -> "ChoiceDataset":
        if not observations:
            raise ValueError("no observations")
        names = list(observations[0].covariates)
        for ob in observations:
            if set(ob.covariates) != set(names):
                raise ValueError(f"observation {ob.id!r} has a different variable set")
        return cls(
            ids=[ob.id for ob in observations],
            outcomes=[ob.outcome for ob in observations],
            columns={k: [ob.covariates[k] for ob in observations] for k in names},
            indicators=indicators,
        )

    def with_column(self, name: str, values) -> "ChoiceDataset":
        cols = dict(self.columns)
        cols[name] = values
        return ChoiceDataset(self.ids, self.outcomes, cols, notes=self.notes)

    def outcome_shares(self) -> np.ndarray:
        counts = np.bincount(self.outcomes, minlength=N_ALT)
        return counts / max(len(self), 1)

    def to_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text(), encoding="utf-8")

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = self.variables
        w.writerow(["id", "outcome", *names])
        for n in range(len(self)):
            row = [self.ids[n], SeverityLevel(int(self.outcomes[n])).name]
            row += [_fmt_number(self.columns[k][n]) for k in names]
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, path) -> "ChoiceDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:2] != ["id", "outcome"]:
                raise ValueError(f"{path}: coded dataset must start with columns id,outcome")
            rows = list(reader)
        names = header[2:]
        ids = [r[0] for r in rows]
        outcomes = [r[1] for r in rows]
        cols = {k: [float(r[j + 2]) for r in rows] for j, k in enumerate(names)}
        return cls(ids, outcomes, cols)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_csv_text().encode()).hexdigest()


def _fmt_number(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


@dataclass(frozen=True)
class UtilityTerm:
    coef_id: str
    variable: str
    alternative: SeverityLevel


@dataclass(frozen=True)
class RandomParameterSpec:
    """A normally distributed coefficient with observation-specific mean and scale.

    ``mean_shift`` and ``variance_shift`` hold ``(variable, coef_id)`` pairs;
    the realized coefficient is
    ``mean + sum(theta * z) + |sd| * exp(sum(psi * w)) * v``.
    """

    coef_id: str
    sd_id: str
    mean_shift: tuple[tuple[str, str], ...] = ()
    variance_shift: tuple[tuple[str, str], ...] = ()
    distribution: str = "normal"

    def __post_init__(self):
        if self.distribution != "normal":
            raise SpecValidationError(f"only normal mixing is supported, got {self.distribution!r}")
        object.__setattr__(self, "mean_shift", tuple(tuple(p) for p in self.mean_shift))
        object.__setattr__(self, "variance_shift", tuple(tuple(p) for p in self.variance_shift))


@dataclass(frozen=True)
class ModelSpec:
    terms: tuple[UtilityTerm, ...]
    random_parameters: tuple[RandomParameterSpec, ...] = ()
    base_alternative: SeverityLevel = SeverityLevel.NO_INJURY
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "random_parameters", tuple(self.random_parameters))
        if self.base_alternative != SeverityLevel.NO_INJURY:
            raise SpecValidationError("base alternative must be NO_INJURY")
        on_base = [t.coef_id for t in self.terms if t.alternative == self.base_alternative]
        if on_base:
            raise SpecValidationError(f"terms on the base alternative are not identified: {on_base}")
        ids = self.coefficient_ids
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise SpecValidationError(f"duplicate coefficient ids: {dupes}")
        term_ids = {t.coef_id for t in self.terms}
        for rp in self.random_parameters:
            if rp.coef_id not in term_ids:
                raise SpecValidationError(f"random parameter {rp.coef_id!r} has no utility term")

    @property
    def random_ids(self) -> tuple[str, ...]:
        return tuple(rp.coef_id for rp in self.random_parameters)

    @property
    def fixed_terms(self) -> tuple[UtilityTerm, ...]:
        rnd = set(self.random_ids)
        return tuple(t for t in self.terms if t.coef_id not in rnd)

    def term(self, coef_id: str) -> UtilityTerm:
        for t in self.terms:
            if t.coef_id == coef_id:
                return t
        raise KeyError(coef_id)

    @property
    def coefficient_ids(self) -> list[str]:
        return ParameterIndex.names_for(self)

    @property
    def n_parameters(self) -> int:
        return len(self.coefficient_ids)

    def referenced_variables(self) -> list[str]:
        names = []
        for t in self.terms:
            if t.variable != CONSTANT:
                names.append(t.variable)
        for rp in self.random_parameters:
            names += [v for v, _ in rp.mean_shift]
            names += [v for v, _ in rp.variance_shift]
        return list(dict.fromkeys(names))

    def fixed_only(self) -> "ModelSpec":
        """Same utility terms with every random coefficient held fixed."""
        return ModelSpec(self.terms, (), self.base_alternative, self.name + " (fixed)")

    def to_dict(self) -> dict:
        rps = {rp.coef_id: rp for rp in self.random_parameters}
        coefs = []
        for t in self.terms:
            entry = {"id": t.coef_id, "variable": t.variable, "alternative": t.alternative.short}
            if t.coef_id in rps:
                rp = rps[t.coef_id]
                entry["random"] = rp.distribution
                entry["sd_id"] = rp.sd_id
                entry["mean_shift"] = [list(p) for p in rp.mean_shift]
                entry["variance_shift"] = [list(p) for p in rp.variance_shift]
            coefs.append(entry)
        return {"name": self.name, "base": self.base_alternative.name, "coefficients": coefs}

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- key/value configuration files ------------------------------------

    @classmethod
    def from_config_text(cls, text: str) -> "ModelSpec":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), delimiters=("=",))
        cp.optionxform = str
        cp.read_string(text)
        name = cp.get("model", "name", fallback="") if cp.has_section("model") else ""
        base = cp.get("model", "base", fallback="NO_INJURY") if cp.has_section("model") else "NO_INJURY"
        terms, rps = [], []
        for section in cp.sections():
            if section == "model":
                continue
            s = cp[section]
            if "variable" not in s or "alternative" not in s:
                raise SpecValidationError(f"[{section}] needs 'variable' and 'alternative'")
            terms.append(UtilityTerm(section, s["variable"].strip(), SeverityLevel.parse(s["alternative"])))
            random = s.get("random", "no").strip().lower()
            if random in ("no", "false", "0", "fixed", ""):
                for key in ("mean_shift", "variance_shift"):
                    if s.get(key, "").strip():
                        raise SpecValidationError(f"[{section}] has {key} but is not random")
                continue
            dist = "normal" if random in ("yes", "true", "1", "normal") else random
            rps.append(
                RandomParameterSpec(
                    coef_id=section,
                    sd_id=f"sd:{section}",
                    mean_shift=tuple((v, f"mean:{section}:{v}") for v in _split_list(s.get("mean_shift", ""))),
                    variance_shift=tuple((v, f"var:{section}:{v}") for v in _split_list(s.get("variance_shift", ""))),
                    distribution=dist,
                )
            )
        return cls(tuple(terms), tuple(rps), SeverityLevel.parse(base), name)

    @classmethod
    def from_config(cls, path) -> "ModelSpec":
        return cls.from_config_text(Path(path).read_text(encoding="utf-8"))

    def to_config_text(self) -> str:
        rps = {rp.coef_id: rp for rp in self.random_parameters}
        lines = ["[model]", f"name = {self.name}", f"base = {self.base_alternative.name}", ""]
        for t in self.terms:
            lines += [f"[{t.coef_id}]", f"variable = {t.variable}", f"alternative = {t.alternative.short}"]
            if t.coef_id in rps:
                rp = rps[t.coef_id]
                lines.append(f"random = {rp.distribution}")
                if rp.mean_shift:
                    lines.append("mean_shift = " + ", ".join(v for v, _ in rp.mean_shift))
                if rp.variance_shift:
                    lines.append("variance_shift = " + ", ".join(v for v, _ in rp.variance_shift))
            lines.append("")
        return "\n".join(lines)


def _split_list(text: str) -> list[str]:
    return [p.strip() for p in text.replace("\n", ",").split(",") if p.strip()]


class ParameterIndex:
    """Stable layout of the flat parameter vector.

    Order: fixed coefficients, random-parameter means, mean-shift (Theta)
    entries, variance-shift (Psi) entries, standard deviations.
    """

    def __init__(self, spec: ModelSpec):
        self.names = self.names_for(spec)
        self._pos = {name: i for i, name in enumerate(self.names)}
        n_fixed = len(spec.fixed_terms)
        n_rp = len(spec.random_parameters)
        n_theta = sum(len(rp.mean_shift) for rp in spec.random_parameters)
        n_psi = sum(len(rp.variance_shift) for rp in spec.random_parameters)
        edges = np.cumsum([0, n_fixed, n_rp, n_theta, n_psi, n_rp])
        self.fixed = slice(edges[0], edges[1])
        self.means = slice(edges[1], edges[2])
        self.theta = slice(edges[2], edges[3])
        self.psi = slice(edges[3], edges[4])
        self.sd = slice(edges[4], edges[5])
        self.sd_ids = frozenset(rp.sd_id for rp in spec.random_parameters)

    @staticmethod
    def names_for(spec: ModelSpec) -> list[str]:
        names = [t.coef_id for t in spec.fixed_terms]
        names += [rp.coef_id for rp in spec.random_parameters]
        names += [cid for rp in spec.random_parameters for _, cid in rp.mean_shift]
        names += [cid for rp in spec.random_parameters for _, cid in rp.variance_shift]
        names += [rp.sd_id for rp in spec.random_parameters]
        return names

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, name: str) -> int:
        return self._pos[name]

    def to_dict(self, theta) -> dict[str, float]:
        return {name: float(theta[i]) for i, name in enumerate(self.names)}

    def from_dict(self, values: Mapping[str, float], default: float | None = None) -> np.ndarray:
        out = np.empty(len(self.names))
        for i, name in enumerate(self.names):
            if name in values:
                out[i] = values[name]
            elif default is not None:
                out[i] = default
            else:
                raise KeyError(f"no value for coefficient {name!r}")
        return out


@dataclass
class RandomDesign:
    """Per-observation inputs of one random coefficient."""

    x: np.ndarray  # (N,) regressor it multiplies
    alternative: int
    z: np.ndarray  # (N, Kz) mean-shift covariates
    w: np.ndarray  # (N, Kw) variance-shift covariates


@dataclass
class DesignMatrices:
    outcomes: np.ndarray
    fixed_x: np.ndarray  # (N, F), one column per fixed coefficient
    fixed_alt: np.ndarray  # (F,) alternative index of each fixed coefficient
    random: list[RandomDesign]
    index: ParameterIndex
    spec: ModelSpec
    variable_of: dict[str, str] = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return self.outcomes.shape[0]


def _column(dataset: ChoiceDataset, name: str, overrides: Mapping | None, key) -> np.ndarray:
    if overrides and key in overrides:
        return np.full(len(dataset), float(overrides[key]))
    if name == CONSTANT:
        return np.ones(len(dataset))
    return dataset.columns[name]


def build_design(
    dataset: ChoiceDataset,
    spec: ModelSpec,
    overrides: Mapping | None = None,
) -> DesignMatrices:
    """Materialize the covariate matrices a spec needs, row ``n`` = observation ``n``.

    ``overrides`` maps ``(role, coef_id)`` keys to a constant value and is how
    marginal effects switch an indicator in selected utility functions only.
    Roles are ``"x"`` for a utility regressor and ``("z"|"w", variable)`` for
    shift covariates of a random parameter.
    """
    missing = [v for v in spec.referenced_variables() if v not in dataset.columns]
    if missing:
        raise SpecValidationError(f"unknown variables: {', '.join(missing)}")
    fixed = spec.fixed_terms
    N = len(dataset)
    fixed_x = np.empty((N, len(fixed)))
    for j, t in enumerate(fixed):
        fixed_x[:, j] = _column(dataset, t.variable, overrides, ("x", t.coef_id))
    fixed_alt = np.array([int(t.alternative) for t in fixed], dtype=np.int64)
    random = []
    for rp in spec.random_parameters:
        t = spec.term(rp.coef_id)
        z = np.empty((N, len(rp.mean_shift)))
        for j, (v, _) in enumerate(rp.mean_shift):
            z[:, j] = _column(dataset, v, overrides, ("z", rp.coef_id, v))
        w = np.empty((N, len(rp.variance_shift)))
        for j, (v, _) in enumerate(rp.variance_shift):
            w[:, j] = _column(dataset, v, overrides, ("w", rp.coef_id, v))
        random.append(
            RandomDesign(
                x=_column(dataset, t.variable, overrides, ("x", rp.coef_id)).copy(),
                alternative=int(t.alternative),
                z=z,
                w=w,
            )
        )
    return DesignMatrices(
        outcomes=np.asarray(dataset.outcomes),
        fixed_x=fixed_x,
        fixed_alt=fixed_alt,
        random=random,
        index=ParameterIndex(spec),
        spec=spec,
        variable_of={t.coef_id: t.variable for t in spec.terms},
    )


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_spec(spec: ModelSpec, dataset: ChoiceDataset) -> ValidationReport:
    report = ValidationReport()
    if len(dataset) == 0:
        report.errors.append("dataset has no observations")
        return report
    names = spec.referenced_variables()
    missing = [v for v in names if v not in dataset.columns]
    if missing:
        report.errors.append(f"unknown variables: {', '.join(missing)}")
    for v in names:
        if v in missing:
            continue
        col = dataset.columns[v]
        if np.all(col == col[0]):
            report.errors.append(f"variable {v!r} has zero variance")
            continue
        for level in ALTERNATIVES:
            sel = col[dataset.outcomes == int(level)]
            if sel.size and np.all(sel == sel[0]):
                report.warnings.append(
                    f"variable {v!r} is constant ({_fmt_number(sel[0])}) within outcome {level.short}; "
                    "possible separation"
                )
    counts = np.bincount(dataset.outcomes, minlength=N_ALT)
    for level in ALTERNATIVES:
        if counts[int(level)] == 0:
            report.warnings.append(f"no observations with outcome {level.short}")
    return report
