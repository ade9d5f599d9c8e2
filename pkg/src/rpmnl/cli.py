"""Command-line pipeline: ingest, describe, estimate, margins, lrtest, report, simulate.

Exit codes: 0 success, 2 usage or validation error, 3 estimation finished
without convergence (result still written), 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .data import ChoiceDataset, ModelSpec, SpecValidationError, validate_spec
from .estimator import EstimationResult, OptimizerConfig, estimate
from .inference import MarginalEffectsTable, lr_test, margins_table
from .ingest import CodingScheme, SchemaError, code_dataset, deduplicate, describe, load_csv, read_column_mapping
from .quasirandom import HaltonConfig, make_draws
from .report import format_report
from .simll import THREADS_ENV

EXIT_OK, EXIT_USAGE, EXIT_UNCONVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("rpmnl")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_path, command: str, inputs: dict, **extra) -> Path:
    """Record what produced an artifact next to it as ``<out>.manifest.json``."""
    manifest = {
        "command": command,
        "tool_version": __version__,
        "inputs": {name: {"path": str(p), "sha256": _file_hash(p)} for name, p in inputs.items() if p},
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    manifest.update(extra)
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _load_scheme(path) -> CodingScheme:
    return CodingScheme.default() if path == "default" else CodingScheme.from_file(path)


def cmd_ingest(args) -> int:
    scheme = _load_scheme(args.coding)
    mapping = read_column_mapping(args.columns) if args.columns else None
    records, rejected = load_csv(args.input, scheme, mapping)
    keep = Path(args.keep_ids).read_text().split() if args.keep_ids else ()
    records, dupes = deduplicate(records, keep)
    dataset, coding_rejects = code_dataset(records, scheme, args.automation_class)
    rejected = rejected + dupes + coding_rejects
    dataset.to_csv(args.out)
    if len(dataset) == 0:
        log.warning("no %s records accepted from %s", args.automation_class.upper(), args.input)
    rej_path = args.rejections or str(args.out) + ".rejections.csv"
    lines = ["row,record_id,reason"] + [f'{r.row},{r.record_id},"{r.reason}"' for r in sorted(rejected, key=lambda r: r.row)]
    Path(rej_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    other = sum(1 for r in records if r.automation_class != args.automation_class.upper())
    print(f"accepted {len(dataset)} {args.automation_class.upper()} records, "
          f"rejected {len(rejected)}, other class {other}")
    write_manifest(args.out, "ingest", {"input": args.input, "coding": None if args.coding == "default" else args.coding},
                   automation_class=args.automation_class.upper(), accepted=len(dataset), rejected=len(rejected))
    return EXIT_OK


def cmd_describe(args) -> int:
    datasets = {}
    for item in args.data:
        label, _, path = item.partition("=")
        if not path:
            label, path = Path(item).stem, item
        datasets[label] = ChoiceDataset.read_csv(path)
    report = describe(datasets)
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(report.to_csv_text(), encoding="utf-8")
    print(report.to_csv_text(), end="")
    if report.speed_test:
        t = report.speed_test
        print(f"speed chi-square: X2={t['statistic']:.2f}, df={t['df']}, p={t['p_value']:.3g}")
    return EXIT_OK


def _halton(args) -> HaltonConfig:
    return HaltonConfig(draws_per_observation=args.draws, burn_in=args.burn_in)


def cmd_estimate(args) -> int:
    data = ChoiceDataset.read_csv(args.data)
    spec = ModelSpec.from_config(args.spec)
    report = validate_spec(spec, data)
    if not report.ok:
        raise UsageError("spec validation failed: " + "; ".join(report.errors))
    for w in report.warnings:
        log.warning(w)
    cfg = _halton(args)
    draws = make_draws(cfg, len(data), len(spec.random_parameters)) if spec.random_parameters else None
    result = estimate(data, spec, draws, OptimizerConfig(max_iterations=args.max_iter))
    if draws is None:
        result.draws = cfg.to_dict() | {"n_random": 0}
    Path(args.out).write_text(result.to_json(), encoding="utf-8")
    text = format_report(result, themes=CodingScheme.default().theme_of())
    if args.table:
        Path(args.table).write_text(text, encoding="utf-8")
    print(text, end="")
    write_manifest(args.out, "estimate", {"data": args.data, "spec": args.spec},
                   spec_hash=spec.spec_hash(), draws=cfg.to_dict(), seed=None)
    return EXIT_OK if result.converged else EXIT_UNCONVERGED


def cmd_margins(args) -> int:
    result = EstimationResult.from_json(Path(args.result).read_text(encoding="utf-8"))
    data = ChoiceDataset.read_csv(args.data)
    if data.content_hash() != result.data_hash:
        raise UsageError("dataset differs from the one the result was estimated on")
    table = margins_table(result, data)
    Path(args.out).write_text(table.to_json(), encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(table.to_csv_text(), encoding="utf-8")
    print(table.to_csv_text(), end="")
    write_manifest(args.out, "margins", {"result": args.result, "data": args.data}, spec_hash=result.spec_hash)
    return EXIT_OK


def cmd_lrtest(args) -> int:
    restricted = EstimationResult.from_json(Path(args.restricted).read_text(encoding="utf-8"))
    unrestricted = [EstimationResult.from_json(Path(p).read_text(encoding="utf-8")) for p in args.unrestricted]
    if len(unrestricted) == 1 and unrestricted[0].data_hash != restricted.data_hash:
        raise UsageError("results were estimated on different datasets; nested comparison needs the same data")
    if len(unrestricted) > 1:
        pooled_n = sum(r.n_obs for r in unrestricted)
        if pooled_n != restricted.n_obs:
            raise UsageError(f"separate models cover {pooled_n} observations, pooled model {restricted.n_obs}")
    other = unrestricted[0] if len(unrestricted) == 1 else unrestricted
    res = lr_test(restricted, other, df=args.df)
    payload = json.dumps(res.to_dict(), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
        write_manifest(args.out, "lrtest", {"restricted": args.restricted,
                                            **{f"unrestricted{i}": p for i, p in enumerate(args.unrestricted)}})
    print(f"LR statistic {res.statistic:.4f}, df {res.degrees_of_freedom}, p-value {res.p_value:.4g}")
    return EXIT_OK


def cmd_report(args) -> int:
    result = EstimationResult.from_json(Path(args.result).read_text(encoding="utf-8"))
    margins = None
    if args.margins:
        margins = MarginalEffectsTable.from_dict(json.loads(Path(args.margins).read_text(encoding="utf-8")))
    scheme = _load_scheme(args.coding)
    text = format_report(result, margins, themes=scheme.theme_of())
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        write_manifest(args.out, "report", {"result": args.result, "margins": args.margins})
    print(text, end="")
    return EXIT_OK


def read_truth(path) -> tuple[dict[str, float], dict[str, tuple]]:
    """``[values]`` coefficient = number; ``[covariates]`` name = bernoulli p | normal mean sd."""
    # derived ids such as mean:c_M:z contain colons, so only "=" separates keys
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), delimiters=("=",))
    cp.optionxform = str
    cp.read(path, encoding="utf-8")
    values = {k: float(v) for k, v in cp["values"].items()} if cp.has_section("values") else {}
    covs = {}
    for name, text in (cp["covariates"].items() if cp.has_section("covariates") else []):
        parts = text.split()
        covs[name] = (parts[0].lower(), *(float(p) for p in parts[1:]))
    return values, covs


def cmd_simulate(args) -> int:
    from .synthetic import DgpConfig, generate

    spec = ModelSpec.from_config(args.spec)
    values, covs = read_truth(args.truth)
    sample = generate(DgpConfig(spec, values, covs, args.n, args.seed))
    sample.dataset.to_csv(args.out)
    if args.probabilities:
        lines = ["id,p_no_injury,p_minor,p_moderate_severe"]
        for i, row in zip(sample.dataset.ids, sample.probabilities):
            lines.append(f"{i}," + ",".join(repr(float(p)) for p in row))
        Path(args.probabilities).write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_manifest(args.out, "simulate", {"spec": args.spec, "truth": args.truth}, seed=args.seed, n_obs=args.n)
    print(f"wrote {args.n} simulated observations to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rpmnl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="code a raw crash CSV into a model-ready dataset")
    s.add_argument("--input", required=True)
    s.add_argument("--class", dest="automation_class", required=True, type=str.lower, choices=["adas", "ads"])
    s.add_argument("--coding", required=True, help="coding scheme file, or 'default' for the bundled scheme")
    s.add_argument("--out", required=True)
    s.add_argument("--columns", help="column-name mapping file with a [columns] section")
    s.add_argument("--keep-ids", help="whitespace-separated record ids exempt from de-duplication")
    s.add_argument("--rejections", help="rejection log path (default <out>.rejections.csv)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("describe", help="indicator shares and standard deviations")
    s.add_argument("--data", action="append", required=True, help="LABEL=coded.csv; repeatable")
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_describe)

    s = sub.add_parser("estimate", help="maximum simulated likelihood estimation")
    s.add_argument("--data", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--draws", type=_positive_int, default=1000)
    s.add_argument("--burn-in", type=_nonnegative_int, default=10)
    s.add_argument("--seedless", action="store_true",
                   help="accepted for clarity; Halton draws are deterministic and need no seed")
    s.add_argument("--max-iter", type=_positive_int, default=500)
    s.add_argument("--out", required=True)
    s.add_argument("--table")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("margins", help="average discrete-change marginal effects")
    s.add_argument("--result", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_margins)

    s = sub.add_parser("lrtest", help="likelihood-ratio test of nested models")
    s.add_argument("--restricted", required=True)
    s.add_argument("--unrestricted", required=True, nargs="+",
                   help="one result, or several separate-sample results compared with a pooled restricted model")
    s.add_argument("--df", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_lrtest)

    s = sub.add_parser("report", help="merged estimates and marginal effects table")
    s.add_argument("--result", required=True)
    s.add_argument("--margins")
    s.add_argument("--coding", default="default")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("simulate", help="draw a dataset from a known model")
    s.add_argument("--spec", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--probabilities")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    log.debug("threads: %s=%s", THREADS_ENV, os.environ.get(THREADS_ENV, "1"))
    try:
        return args.func(args)
    except (UsageError, SchemaError, SpecValidationError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
