"""Crash-record CSV ingestion, indicator coding and descriptive summaries."""

from __future__ import annotations

import configparser
import csv
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import ChoiceDataset, SeverityLevel

AUTOMATION_CLASSES = ("ADAS", "ADS")
SOURCES = ("NHTSA", "CA_DMV", "NEWS")
DEDUP_KEY = ("date", "location", "manufacturer", "automation_class")
OPTIONAL_COLUMNS = ("record_id", "date", "location", "manufacturer")


class SchemaError(ValueError):
    """Input file is missing required columns."""


@dataclass(frozen=True)
class Interval:
    low: float
    high: float
    low_closed: bool
    high_closed: bool

    _PATTERN = re.compile(r"^\s*([\[(])\s*([^,]+?)\s*,\s*([^,]+?)\s*([\])])\s*$")

    @classmethod
    def parse(cls, text: str) -> "Interval":
        m = cls._PATTERN.match(text)
        if not m:
            raise ValueError(f"bad interval {text!r}")
        return cls(float(m.group(2)), float(m.group(3)), m.group(1) == "[", m.group(4) == "]")

    def __contains__(self, x: float) -> bool:
        above = x >= self.low if self.low_closed else x > self.low
        below = x <= self.high if self.high_closed else x < self.high
        return above and below

    def __str__(self) -> str:
        return f"{'[' if self.low_closed else '('}{self.low:g}, {self.high:g}{']' if self.high_closed else ')'}"


@dataclass
class FieldRule:
    """How one raw field becomes a group of mutually exclusive indicators."""

    name: str
    kind: str
    group: str = ""
    theme: str = ""
    unknown: str = "reject"
    categories: dict[str, tuple[str, ...]] = field(default_factory=dict)
    bins: dict[str, Interval] = field(default_factory=dict)

    @property
    def indicators(self) -> list[str]:
        return list(self.bins) if self.kind == "numeric" else list(self.categories)

    def lookup(self, raw: str) -> list[str]:
        """Every label whose value list contains ``raw``."""
        key = _norm(raw)
        if self.kind == "numeric":
            x = float(raw)
            return [name for name, iv in self.bins.items() if x in iv]
        return [name for name, values in self.categories.items() if key in values]


def _norm(text: str) -> str:
    return " ".join(str(text).strip().lower().split())


@dataclass
class CodingScheme:
    rules: list[FieldRule]

    def rule(self, name: str) -> FieldRule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(name)

    def of_kind(self, *kinds: str) -> list[FieldRule]:
        return [r for r in self.rules if r.kind in kinds]

    @property
    def indicator_rules(self) -> list[FieldRule]:
        return self.of_kind("categorical", "numeric")

    @property
    def required_columns(self) -> list[str]:
        return [r.name for r in self.rules]

    def theme_of(self) -> dict[str, str]:
        return {ind: r.theme for r in self.indicator_rules for ind in r.indicators}

    @classmethod
    def from_text(cls, text: str) -> "CodingScheme":
        cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), delimiters=("=",))
        cp.optionxform = str
        cp.read_string(text)
        rules = []
        for section in cp.sections():
            s = cp[section]
            kind = s.get("type", "categorical").strip()
            rule = FieldRule(
                name=section,
                kind=kind,
                group=s.get("group", section),
                theme=s.get("theme", ""),
                unknown=s.get("unknown", "reject").strip(),
            )
            for key, value in s.items():
                if key in ("type", "group", "theme", "unknown"):
                    continue
                if kind == "numeric":
                    rule.bins[key] = Interval.parse(value)
                else:
                    rule.categories[key] = tuple(_norm(v) for v in value.split(",") if v.strip())
            if rule.unknown != "reject" and rule.unknown not in rule.indicators:
                raise ValueError(f"[{section}] unknown policy {rule.unknown!r} is not one of its indicators")
            rules.append(rule)
        for kind in ("class", "outcome"):
            if len([r for r in rules if r.kind == kind]) != 1:
                raise ValueError(f"coding scheme needs exactly one section of type {kind!r}")
        return cls(rules)

    @classmethod
    def from_file(cls, path) -> "CodingScheme":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "CodingScheme":
        return cls.from_text(default_coding_text())


def default_coding_text() -> str:
    return resources.files("rpmnl.configs").joinpath("coding_default.ini").read_text(encoding="utf-8")


@dataclass
class RawCrashRecord:
    row: int
    record_id: str
    source: str
    automation_class: str
    outcome: SeverityLevel
    fields: dict[str, str]


@dataclass
class Rejection:
    row: int
    record_id: str
    reason: str

    def to_dict(self) -> dict:
        return {"row": self.row, "record_id": self.record_id, "reason": self.reason}


def read_column_mapping(path) -> dict[str, str]:
    """Canonical column name -> header used in the file (``[columns]`` section)."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    cp.read(path, encoding="utf-8")
    if not cp.has_section("columns"):
        raise ValueError(f"{path}: column mapping needs a [columns] section")
    return {k: v.strip() for k, v in cp["columns"].items()}


def load_csv(
    path,
    scheme: CodingScheme | None = None,
    column_map: Mapping[str, str] | None = None,
) -> tuple[list[RawCrashRecord], list[Rejection]]:
    """Read raw crash rows; rows that fail checks go to the rejection log.

    Raises ``SchemaError`` when required headers are absent. Malformed rows
    never raise.
    """
    scheme = scheme or CodingScheme.default()
    column_map = dict(column_map or {})
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: no header row")
        header = [h.strip() for h in header]
        pos = {h: i for i, h in enumerate(header)}
        wanted = scheme.required_columns
        missing = [c for c in wanted if column_map.get(c, c) not in pos]
        if missing:
            raise SchemaError(f"missing required columns: {', '.join(missing)}")
        cols = {c: pos[column_map.get(c, c)] for c in wanted}
        for c in OPTIONAL_COLUMNS:
            if column_map.get(c, c) in pos:
                cols[c] = pos[column_map.get(c, c)]
        class_rule = scheme.of_kind("class")[0]
        outcome_rule = scheme.of_kind("outcome")[0]
        source_rules = scheme.of_kind("source")
        numeric = {r.name for r in scheme.of_kind("numeric")}

        records, rejected = [], []
        for row_no, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                rejected.append(Rejection(row_no, "", "empty row"))
                continue
            rid = row[cols["record_id"]].strip() if "record_id" in cols and cols["record_id"] < len(row) else ""
            rid = rid or f"row{row_no}"
            if len(row) != len(header):
                rejected.append(Rejection(row_no, rid, f"expected {len(header)} fields, got {len(row)}"))
                continue
            values = {c: row[i].strip() for c, i in cols.items()}
            cls_hit = class_rule.lookup(values[class_rule.name])
            if len(cls_hit) != 1:
                rejected.append(Rejection(row_no, rid, f"unmappable automation class {values[class_rule.name]!r}"))
                continue
            sev_hit = outcome_rule.lookup(values[outcome_rule.name])
            if len(sev_hit) != 1:
                rejected.append(Rejection(row_no, rid, "unmappable severity"))
                continue
            source = ""
            if source_rules:
                src_hit = source_rules[0].lookup(values[source_rules[0].name])
                if len(src_hit) != 1:
                    rejected.append(Rejection(row_no, rid, f"unknown source {values[source_rules[0].name]!r}"))
                    continue
                source = src_hit[0]
            bad_num = [c for c in numeric if not _is_number(values[c])]
            if bad_num:
                rejected.append(Rejection(row_no, rid, f"non-numeric {', '.join(sorted(bad_num))}"))
                continue
            records.append(
                RawCrashRecord(
                    row=row_no,
                    record_id=rid,
                    source=source,
                    automation_class=cls_hit[0],
                    outcome=SeverityLevel.parse(sev_hit[0]),
                    fields=values,
                )
            )
    return records, rejected


def _is_number(text: str) -> bool:
    try:
        return math.isfinite(float(text.replace(",", "")))
    except ValueError:
        return False


def deduplicate(
    records: Sequence[RawCrashRecord],
    keep: Sequence[str] = (),
) -> tuple[list[RawCrashRecord], list[Rejection]]:
    """Drop repeats of (date, location, manufacturer, automation class).

    The first occurrence wins. Records whose id is in ``keep`` are never
    dropped, and records with any empty key field are never matched.
    """
    keep = set(keep)
    first: dict[tuple, RawCrashRecord] = {}
    out, dropped = [], []
    for rec in records:
        key = tuple(
            rec.automation_class if k == "automation_class" else _norm(rec.fields.get(k, "")) for k in DEDUP_KEY
        )
        if rec.record_id in keep or any(part == "" for part in key):
            out.append(rec)
            continue
        if key in first:
            dropped.append(Rejection(rec.row, rec.record_id, f"duplicate of row {first[key].row}"))
            continue
        first[key] = rec
        out.append(rec)
    return out, dropped


def code_dataset(
    records: Sequence[RawCrashRecord],
    scheme: CodingScheme,
    automation_class: str,
) -> tuple[ChoiceDataset, list[Rejection]]:
    """Materialize every indicator of the scheme for one automation class."""
    automation_class = automation_class.upper()
    if automation_class not in AUTOMATION_CLASSES:
        raise ValueError(f"automation class must be one of {AUTOMATION_CLASSES}")
    rules = scheme.indicator_rules
    names = [ind for r in rules for ind in r.indicators]
    ids, outcomes, rows, rejected = [], [], [], []
    for rec in records:
        if rec.automation_class != automation_class:
            continue
        coded = dict.fromkeys(names, 0.0)
        problem = None
        for rule in rules:
            raw = rec.fields.get(rule.name, "")
            if rule.kind == "numeric":
                raw = raw.replace(",", "")
            hits = rule.lookup(raw) if raw != "" else []
            if not hits and rule.unknown != "reject":
                hits = [rule.unknown]
            if len(hits) != 1:
                what = "no indicator" if not hits else f"{len(hits)} indicators"
                problem = f"group {rule.group}: {what} for value {raw!r}"
                break
            coded[hits[0]] = 1.0
        if problem:
            rejected.append(Rejection(rec.row, rec.record_id, problem))
            continue
        ids.append(rec.record_id)
        outcomes.append(rec.outcome)
        rows.append([coded[n] for n in names])
    matrix = np.array(rows, dtype=float).reshape(len(rows), len(names))
    columns = {n: matrix[:, j] for j, n in enumerate(names)}
    notes = {"automation_class": automation_class}
    for rule in scheme.of_kind("numeric"):
        notes[f"bins:{rule.name}"] = "; ".join(f"{k} {iv}" for k, iv in rule.bins.items())
    return ChoiceDataset(ids, outcomes, columns, indicators=names, notes=notes), rejected


# -- descriptives ------------------------------------------------------------


@dataclass
class IndicatorSummary:
    share: float
    std: float


@dataclass
class SummaryReport:
    counts: dict[str, int]
    stats: dict[str, dict[str, IndicatorSummary]]  # label -> indicator -> summary
    rejections: list[Rejection] = field(default_factory=list)
    speed_table: list[list[int]] | None = None
    speed_labels: list[str] | None = None
    speed_test: dict | None = None

    def to_dict(self) -> dict:
        return {
            "counts": self.counts,
            "stats": {
                label: {k: {"share": v.share, "std": v.std} for k, v in d.items()}
                for label, d in self.stats.items()
            },
            "rejections": [r.to_dict() for r in self.rejections],
            "speed_table": self.speed_table,
            "speed_labels": self.speed_labels,
            "speed_test": self.speed_test,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv_text(self) -> str:
        labels = list(self.stats)
        indicators = list(dict.fromkeys(k for d in self.stats.values() for k in d))
        lines = ["indicator," + ",".join(f"{lab}_mean,{lab}_std" for lab in labels)]
        for ind in indicators:
            cells = []
            for lab in labels:
                s = self.stats[lab].get(ind)
                cells += ["", ""] if s is None else [f"{s.share:.4f}", f"{s.std:.4f}"]
            lines.append(ind + "," + ",".join(cells))
        return "\n".join(lines) + "\n"


SEVERITY_COLUMNS = {
    SeverityLevel.NO_INJURY: "severity_no_injury",
    SeverityLevel.MINOR: "severity_minor",
    SeverityLevel.MODERATE_SEVERE: "severity_moderate_severe",
}


def _summaries(ds: ChoiceDataset) -> dict[str, IndicatorSummary]:
    out = {}
    columns = dict(ds.columns)
    for level, name in SEVERITY_COLUMNS.items():
        columns[name] = (ds.outcomes == int(level)).astype(float)
    for name, col in columns.items():
        n = col.size
        share = math.fsum(col) / n
        std = float(np.std(col, ddof=1)) if n > 1 else 0.0
        out[name] = IndicatorSummary(share, std)
    return out


def describe(
    datasets: ChoiceDataset | Mapping[str, ChoiceDataset],
    rejections: Sequence[Rejection] = (),
    speed_indicators: Sequence[str] = ("speed_le_20", "speed_20_40", "speed_40_60", "speed_ge_60"),
) -> SummaryReport:
    """Shares and sample standard deviations of every indicator, per dataset.

    With two or more datasets that carry the speed indicators, a
    dataset-by-speed-bin contingency table and its chi-square test are added.
    """
    from .inference import chi_square_homogeneity

    if isinstance(datasets, ChoiceDataset):
        datasets = {datasets.notes.get("automation_class", "data"): datasets}
    for label, ds in datasets.items():
        if len(ds) == 0:
            raise ValueError(f"dataset {label!r} is empty")
    report = SummaryReport(
        counts={label: len(ds) for label, ds in datasets.items()},
        stats={label: _summaries(ds) for label, ds in datasets.items()},
        rejections=list(rejections),
    )
    have_speed = all(all(s in ds.columns for s in speed_indicators) for ds in datasets.values())
    if len(datasets) >= 2 and have_speed:
        table = [[int(ds.columns[s].sum()) for s in speed_indicators] for ds in datasets.values()]
        report.speed_table = table
        report.speed_labels = list(speed_indicators)
        arr = np.array(table)
        keep = arr.sum(axis=0) > 0
        if keep.sum() >= 2 and np.all(arr.sum(axis=1) > 0):
            res = chi_square_homogeneity(arr[:, keep])
            report.speed_test = {"statistic": res.statistic, "df": res.df, "p_value": res.p_value}
    return report
