"""Command-line pipeline: ``synth``, ``elicit``, ``fit``, ``analyze``.

Exit codes: 0 success, 2 validation error, 3 endpoint failure, 4 estimation failure.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
import warnings
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .btfit import FitConfig, fit_bt
from .cache import ComparisonCache, dump_record, iter_records, latest_by_key
from .core import Entity, read_roster, write_roster
from .errors import (
    EndpointError,
    EstimationError,
    MissingCovariate,
    NotConverged,
    PairscaleError,
    ValidationError,
)
from .harness import (
    EndpointConfig,
    RunSummary,
    pending_tasks,
    run_schedule,
    schedule_pairs,
    tally,
)
from .prompts import get_template, load_templates
from .report import (
    correlation_csv,
    correlation_markdown,
    correlation_matrix,
    read_meta,
    read_scores,
    regression_markdown,
    regression_rows,
    sidecar_path,
    write_json,
    write_rows,
    write_scores,
)
from .stats import build_design, get_spec, logistic_fit, model_specs
from .synth import PRNG_NAME, SYNTH_MODEL_ID, SynthSpec, generate, mock_endpoint, synthetic_roster

log = logging.getLogger("pairscale")

CACHE_NAME = "comparisons.jsonl"
ROLE_BY_ATTRIBUTE = {"ideology-liberal": "aips", "knowledge-institution": "kips"}
ROLE_LABEL = {"aips": "AIPS", "kips": "KIPS"}
EXTERNAL_LABEL = "External Score"
REGRESSION_COLUMNS = ("table", "column", "predictor", "coef", "se", "z", "p", "stars", "n_obs")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return value


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", text).strip("-") or "x"


def _run_key(attribute: str, model_id: str) -> str:
    return f"{attribute}::{model_id}"


def _update_cache_meta(cache_path: Path, attribute: str, model_id: str, info: dict[str, Any]) -> None:
    side = sidecar_path(cache_path)
    meta = read_meta(cache_path) if side.exists() else {}
    runs = meta.setdefault("runs", {})
    runs[_run_key(attribute, model_id)] = info
    meta["toolkit_version"] = __version__
    write_json(side, meta)


def _run_records(cache_path: Path, attribute: str, model_id: str | None):
    records = [
        r for r in latest_by_key(iter_records(cache_path)).values()
        if r.task.attribute == attribute
    ]
    models = sorted({r.model_id for r in records})
    if model_id is None:
        if not models:
            raise ValidationError(f"{cache_path}: no records for attribute {attribute!r}")
        if len(models) > 1:
            raise ValidationError(
                f"{cache_path}: several models for {attribute!r} ({', '.join(models)}); pass --model"
            )
        model_id = models[0]
    records = [r for r in records if r.model_id == model_id]
    if not records:
        raise ValidationError(f"{cache_path}: no records for {attribute!r} from model {model_id!r}")
    # deterministic order regardless of completion order in the file
    records.sort(key=lambda r: (r.task.pair, r.task.repeat_index))
    return model_id, records


# -- synth -------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    n = args.n
    if args.gap is not None:
        lam = args.gap * (np.arange(n) - (n - 1) / 2.0)
    else:
        lam = np.linspace(-args.spread, args.spread, n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entities = synthetic_roster(lam, seed=args.seed, layoff_effect=args.layoff_effect)
    roster_path = out / "roster.csv"
    write_roster(entities, roster_path)
    spec = SynthSpec(tuple(lam), args.repeats, args.tie_rate, args.seed, args.attribute,
                     tuple(e.id for e in entities))
    cache_path = out / CACHE_NAME
    records = generate(spec)
    cache_path.write_text("".join(dump_record(r) + "\n" for r in records), encoding="utf-8")
    _update_cache_meta(cache_path, spec.attribute, SYNTH_MODEL_ID, {
        "seed": spec.seed, "repeats": spec.repeats, "tie_rate": spec.tie_rate,
        "prng": PRNG_NAME, "true_lambda": list(spec.true_lambda), "source": "synth.generate",
    })
    print(f"wrote {roster_path} ({n} entities) and {cache_path} ({len(records)} records)")
    return 0


# -- elicit ------------------------------------------------------------------


def _print_progress(summary: RunSummary) -> None:
    done = summary.usable + summary.unusable
    total = summary.scheduled - summary.skipped
    if done == total or done % max(1, total // 20) == 0:
        print(f"  {done}/{total} issued, {summary.unusable} unusable", file=sys.stderr)


def cmd_elicit(args: argparse.Namespace) -> int:
    entities = read_roster(args.roster)
    extra = load_templates(args.template_file) if args.template_file else None
    template = get_template(args.attribute, extra)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache_path = out / CACHE_NAME
    cache = ComparisonCache(cache_path)
    tasks = schedule_pairs(entities, args.repeats, args.attribute, args.seed)
    print(f"scheduled {len(tasks)} comparisons ({len(entities)} entities x {args.repeats} repeats)",
          file=sys.stderr)

    names = {e.id: e.display_name for e in entities}
    common = dict(max_concurrency=args.max_concurrency, max_retries=args.max_retries)
    mock = None
    if args.mock:
        missing = [e.id for e in entities if e.covariates.external_score is None]
        if missing:
            raise MissingCovariate(missing[0], "external_score")
        mock = mock_endpoint(
            [e.covariates.external_score for e in entities], entities, args.seed,
            tie_rate=args.mock_tie_rate, garbage_rate=args.mock_garbage_rate,
        ).start()
        endpoint = EndpointConfig(mock.base_url, args.model or "mock", backoff_base=0.01, **common)
    else:
        if not args.base_url or not args.model:
            raise ValidationError("--base-url and --model are required unless --mock is given")
        endpoint = EndpointConfig.from_env(args.base_url, args.model, **common)
    if args.max_tasks is not None:
        keep = set(pending_tasks(tasks, cache, endpoint.model_id)[: args.max_tasks])
        run_tasks = [t for t in tasks if t in keep]
    else:
        run_tasks = tasks
    try:
        summary = run_schedule(run_tasks, template, endpoint, cache,
                               display=names.get, progress=_print_progress)
    finally:
        if mock is not None:
            mock.stop()

    _update_cache_meta(cache_path, args.attribute, endpoint.model_id, {
        "seed": args.seed, "repeats": args.repeats, "template_sha256": template.digest,
        "base_url": None if args.mock else args.base_url, "mock": bool(args.mock),
        "prng": PRNG_NAME if args.mock else None,
        "stage2_temperature": endpoint.stage2_temperature, "max_retries": endpoint.max_retries,
    })
    keys = {(t.attribute, endpoint.model_id, t.pair, t.repeat_index) for t in tasks}
    stored = [r for r in cache.records() if r.cache_key in keys]
    usable = sum(r.outcome.usable for r in stored)
    unusable = len(stored) - usable
    rate = unusable / len(stored) if stored else 0.0
    print(f"issued {summary.issued} (skipped {summary.skipped} cached); "
          f"stored usable={usable} unusable={unusable} "
          f"remaining={len(tasks) - usable} unusable_rate={rate:.4f}")
    if rate > args.unusable_threshold:
        print(f"error: unusable rate {rate:.4f} exceeds threshold {args.unusable_threshold}",
              file=sys.stderr)
        return EndpointError.exit_code
    return 0


# -- fit ---------------------------------------------------------------------


def cmd_fit(args: argparse.Namespace) -> int:
    entities = read_roster(args.roster)
    cache_path = Path(args.cache)
    if not cache_path.exists():
        raise ValidationError(f"cache file {cache_path} does not exist")
    model_id, records = _run_records(cache_path, args.attribute, args.model)
    counts = tally(records, entities)
    config = FitConfig(args.max_iterations, args.tolerance, args.pseudocount)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scores = fit_bt(counts, config)
    if args.sign_flip:
        scores = scores.flipped()
    run_meta = read_meta(cache_path).get("runs", {}).get(_run_key(args.attribute, model_id), {})
    out = Path(args.out) if args.out else cache_path.parent
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"scores_{_slug(args.attribute)}__{_slug(model_id)}.csv"
    write_scores(scores, path, {
        "attribute": args.attribute,
        "model_id": model_id,
        "seed": run_meta.get("seed"),
        "prng": run_meta.get("prng"),
        "template_sha256": run_meta.get("template_sha256"),
        "toolkit_version": __version__,
        "sign_flip": bool(args.sign_flip),
        "pseudocount": args.pseudocount,
        "n_usable": counts.n_usable,
        "n_unusable": counts.n_unusable,
        "ci_level": 0.95,
    })
    print(f"wrote {path} ({counts.n} entities, {counts.n_usable} usable comparisons, "
          f"{scores.iterations} iterations)")
    if not scores.converged:
        raise NotConverged(f"fit did not converge in {args.max_iterations} iterations "
                           f"(best iterate written to {path})")
    return 0


# -- analyze -----------------------------------------------------------------


def _load_score_files(paths: Sequence[str]) -> list[dict[str, Any]]:
    loaded = []
    for p in paths:
        meta = read_meta(p)
        attribute = meta.get("attribute", "")
        role = ROLE_BY_ATTRIBUTE.get(attribute)
        model = meta.get("model_id") or Path(p).stem
        loaded.append({"path": p, "role": role, "model": model, "attribute": attribute,
                       "scores": read_scores(p).as_dict()})
    labels = [f"{ROLE_LABEL.get(f['role'], f['attribute'] or 'scores')} ({f['model']})"
              for f in loaded]
    for f, label in zip(loaded, labels):
        f["label"] = label if labels.count(label) == 1 else f"{label} [{f['path']}]"
    return loaded


def _fit_or_note(spec, entities: Sequence[Entity], scores: dict[str, dict[str, float]]):
    design = build_design(spec, entities, scores)
    try:
        return logistic_fit(design)
    except EstimationError as exc:
        return f"{type(exc).__name__}: {exc}"


def cmd_analyze(args: argparse.Namespace) -> int:
    entities = read_roster(args.roster)
    files = _load_score_files(args.scores)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    vectors = {f["label"]: f["scores"] for f in files}
    externals = {e.id: e.covariates.external_score for e in entities
                 if e.covariates.external_score is not None}
    if len(externals) >= 3:
        vectors[EXTERNAL_LABEL] = externals
    sections = []
    if len(vectors) >= 1:
        labels, corr = correlation_matrix(vectors)
        (out / "correlations.csv").write_text(correlation_csv(labels, corr), encoding="utf-8")
        sections.append("**Correlations among score vectors (Pearson)**\n\n"
                        + correlation_markdown(labels, corr))

    aips = [f for f in files if f["role"] == "aips"]
    kips = [f for f in files if f["role"] == "kips"]
    wanted = [s.name for s in model_specs()] if args.spec == "all" else [args.spec]
    strict = args.spec != "all"
    rows: list[dict[str, Any]] = []
    failed = False

    if "table2" in wanted:
        if not aips and strict:
            raise MissingCovariate("*", "aips")
        spec = get_spec("table2")
        columns = {f["model"]: _fit_or_note(spec, entities, {"aips": f["scores"]}) for f in aips}
        if columns:
            failed |= any(isinstance(v, str) for v in columns.values())
            sections.append(regression_markdown(
                "Logistic regression of layoff on AIPS (Table 2 layout)", columns))
            rows += regression_rows("table2", columns)

    model_cols: dict[str, Any] = {}
    for k, name in enumerate(("model1", "model2", "model3"), 1):
        if name not in wanted:
            continue
        spec = get_spec(name)
        if not kips:
            if strict:
                raise MissingCovariate("*", "kips")
            continue
        kfile = kips[0]
        scores = {"kips": kfile["scores"]}
        if "aips" in spec.score_roles:
            match = [f for f in aips if f["model"] == kfile["model"]] or aips
            if not match:
                if strict:
                    raise MissingCovariate("*", "aips")
                continue
            scores["aips"] = match[0]["scores"]
        if name == "model3" and len(externals) < len(entities) and not strict:
            continue
        model_cols[f"Model {k}"] = _fit_or_note(spec, entities, scores)
    if model_cols:
        failed |= any(isinstance(v, str) for v in model_cols.values())
        sections.append(regression_markdown(
            "Logistic regression of layoff on KIPS (Table 3 layout)", model_cols))
        rows += regression_rows("table3", model_cols)

    write_rows(out / "regressions.csv", rows, REGRESSION_COLUMNS)
    report = "\n\n".join(sections) + "\n"
    (out / "report.md").write_text(report, encoding="utf-8")
    print(report, end="")
    if failed:
        print("error: at least one regression could not be estimated", file=sys.stderr)
        return EstimationError.exit_code
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pairscale", description="Scale entities from LLM pairwise comparisons."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("elicit", help="run (or resume) pairwise elicitation against an endpoint")
    p.add_argument("--roster", required=True)
    p.add_argument("--attribute", default="ideology-liberal")
    p.add_argument("--template-file", help="JSON file with extra prompt templates")
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--base-url")
    p.add_argument("--model")
    p.add_argument("--out", default=".")
    p.add_argument("--mock", action="store_true",
                   help="serve a loopback mock endpoint using the roster's external_score as truth")
    p.add_argument("--mock-tie-rate", type=_fraction, default=0.0)
    p.add_argument("--mock-garbage-rate", type=_fraction, default=0.0)
    p.add_argument("--max-concurrency", type=_positive_int, default=8)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--max-tasks", type=int, help="issue at most this many pending tasks")
    p.add_argument("--unusable-threshold", type=_fraction, default=0.05)
    p.set_defaults(func=cmd_elicit)

    p = sub.add_parser("fit", help="fit Bradley-Terry scores from a comparison cache")
    p.add_argument("cache")
    p.add_argument("--roster", required=True)
    p.add_argument("--attribute", default="ideology-liberal")
    p.add_argument("--model")
    p.add_argument("--sign-flip", action="store_true")
    p.add_argument("--out")
    p.add_argument("--pseudocount", type=float, default=0.0)
    p.add_argument("--max-iterations", type=_positive_int, default=1000)
    p.add_argument("--tolerance", type=float, default=1e-10)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("analyze", help="correlations and layoff regressions from scores files")
    p.add_argument("scores", nargs="+")
    p.add_argument("--roster", required=True)
    p.add_argument("--spec", default="all",
                   choices=["all"] + [s.name for s in model_specs()])
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="write a synthetic roster and comparison cache")
    p.add_argument("--n", type=_positive_int, default=10)
    p.add_argument("--gap", type=float, help="spacing between consecutive true abilities")
    p.add_argument("--spread", type=float, default=2.0,
                   help="true abilities evenly spaced in [-spread, spread] (without --gap)")
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--tie-rate", type=float, default=0.0)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--attribute", default="ideology-liberal")
    p.add_argument("--layoff-effect", type=float, default=1.0,
                   help="log-odds effect of the standardized ability on the layoff flag")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PairscaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ValidationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
