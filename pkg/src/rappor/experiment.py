"""Scenario runner and evaluation harness.

A scenario is one full pipeline pass: build (or sub-sample) a dataset,
encode every record, aggregate the reports, decode against the candidate
map, and score the estimates against the true histogram.  A grid crosses
population sizes with privacy budgets over several seeds and reports the
per-cell medians.

Every scenario writes a self-contained directory:

    params.csv true_values.csv reports.csv counts.csv map.csv
    results.csv comparison.csv manifest.json

and a grid adds top-level summary.csv and plot.csv.  All files are
deterministic functions of the scenario spec and seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from statistics import median
from typing import Union

from . import aggregate as agg
from . import candidate_map as cm
from . import datasets as ds
from . import decoder as dec
from . import encoder as enc
from . import params as pr
from .errors import InvalidParams, RapporError

COMPARISON_HEADER = ["string", "true_count", "estimate", "detected", "accurate80"]
SUMMARY_HEADER = [
    "population",
    "epsilon",
    "true_strings",
    "rappor_strings",
    "accurate80",
    "proportion",
    "seeds",
]
PLOT_HEADER = ["population", "epsilon", "accuracy_ratio"]

SCENARIO_FILES = [
    "params.csv",
    "true_values.csv",
    "reports.csv",
    "counts.csv",
    "map.csv",
    "results.csv",
    "comparison.csv",
    "manifest.json",
]


@dataclass(frozen=True)
class SyntheticSpec:
    num_candidates: int = 150
    exponent: float = 1.2


@dataclass(frozen=True)
class ScenarioSpec:
    params: pr.RapporParams
    population: int
    seed: int
    out_dir: Path
    mode: enc.EncoderMode = enc.EncoderMode.STANDARD
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    source: Path | None = None
    candidates_file: Path | None = None
    reports_per_user: int = 1
    epsilon_label: float | None = None
    alpha: float = 0.05
    audit: bool = True


@dataclass(frozen=True)
class ComparisonRow:
    string: str
    true_count: int
    estimate: float
    detected: bool
    accurate80: bool


@dataclass(frozen=True)
class Metrics:
    true_strings: int
    rappor_strings: int
    accurate80: int
    proportion: float | None


@dataclass(frozen=True)
class ScenarioResult:
    rows: tuple[ComparisonRow, ...]
    metrics: Metrics
    epsilon: float
    population: int
    seed: int
    out_dir: Path


@dataclass(frozen=True)
class GridSpec:
    populations: tuple[int, ...]
    epsilons: tuple[Union[float, Path], ...]
    seeds: tuple[int, ...]
    out_dir: Path
    mode: enc.EncoderMode = enc.EncoderMode.STANDARD
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    source: Path | None = None
    candidates_file: Path | None = None
    reports_per_user: int = 1
    alpha: float = 0.05
    audit: bool = True
    #: explicit (population, epsilon) cells run on top of the cross product
    extra_cells: tuple[tuple[int, Union[float, Path]], ...] = ()


@dataclass(frozen=True)
class SummaryRow:
    population: int
    epsilon: float
    true_strings: float
    rappor_strings: float
    accurate80: float
    proportion: float | None
    seeds: tuple[int, ...]


@dataclass(frozen=True)
class GridResult:
    summary: tuple[SummaryRow, ...]
    scenarios: tuple[ScenarioResult, ...]
    failures: tuple[tuple[int, float, int, str], ...]


def evaluate(
    rows: list[ComparisonRow] | tuple[ComparisonRow, ...], margin: float = 0.2
) -> Metrics:
    """Score decoded estimates against truth.

    A detected string counts as accurate when its estimate lands within
    margin * true of the true count, boundary included.  The proportion
    relates accurate strings to detections (what a consumer of the decoded
    data can actually check), and is undefined without detections.
    """
    if not 0 < margin < 1:
        raise InvalidParams("margin", "margin must lie in (0, 1)")
    true_strings = sum(1 for r in rows if r.true_count > 0)
    detected = sum(1 for r in rows if r.detected)
    accurate = sum(1 for r in rows if r.accurate80)
    proportion = accurate / detected if detected else None
    return Metrics(
        true_strings=true_strings,
        rappor_strings=detected,
        accurate80=accurate,
        proportion=proportion,
    )


def _is_accurate(true_count: int, estimate: float, margin: float) -> bool:
    return abs(estimate - true_count) <= margin * true_count


def build_comparison(
    histogram: ds.TrueHistogram,
    dist: dec.DecodedDistribution,
    margin: float = 0.2,
) -> list[ComparisonRow]:
    """Join decoded entries with true counts, highest truth first."""
    rows = []
    for entry in dist.entries:
        true_count = histogram.counts.get(entry.string, 0)
        accurate = entry.detected and _is_accurate(true_count, entry.estimate, margin)
        rows.append(
            ComparisonRow(
                string=entry.string,
                true_count=true_count,
                estimate=entry.estimate,
                detected=entry.detected,
                accurate80=accurate,
            )
        )
    rows.sort(key=lambda r: (-r.true_count, r.string))
    return rows


def _scenario_dataset(spec: ScenarioSpec) -> tuple[ds.Dataset, list[str]]:
    if spec.source is None:
        dataset, _ = ds.synth_zipf(
            spec.synthetic.num_candidates,
            spec.population,
            spec.synthetic.exponent,
            spec.seed,
        )
        candidates = ds.zipf_candidates(spec.synthetic.num_candidates)
        return dataset, candidates
    full = ds.read_dataset(spec.source)
    num_users = spec.population // spec.reports_per_user
    dataset = ds.subsample(full, num_users, spec.reports_per_user, spec.seed)
    if spec.candidates_file is None:
        raise InvalidParams("candidates_file", "required when a source file is used")
    return dataset, cm.load_candidates(spec.candidates_file)


def run_scenario(spec: ScenarioSpec, *, workers: int | None = None) -> ScenarioResult:
    """Execute one pipeline pass and persist every artifact.

    Encoding is chunked across processes; the report index keys each
    report's randomness, so output bytes do not depend on the worker count.
    Partial outputs are removed if any stage fails.
    """
    params = pr.validate(spec.params)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        dataset, candidates = _scenario_dataset(spec)
        pr.write_params(params, out_dir / "params.csv")

        counts = agg.zero_counts(params.m, params.k)
        with open(out_dir / "reports.csv", "w", encoding="utf-8", newline="") as rep_fh, open(
            out_dir / "true_values.csv", "w", encoding="utf-8", newline=""
        ) as tv_fh:
            rep_fh.write(enc.REPORTS_HEADER + "\n")
            tv_fh.write(enc.TRUE_VALUES_HEADER + "\n")
            records = dataset.records
            offset = 0
            for chunk in enc.iter_encoded_chunks(
                records,
                params,
                spec.mode,
                spec.seed,
                audit=spec.audit,
                workers=workers,
            ):
                agg.add_reports(counts, chunk, params)
                rep_fh.write("".join(enc.report_row(r) + "\n" for r in chunk))
                tv_fh.write(
                    "".join(
                        f"{enc.csv_quote(r.client)},{r.cohort},{enc.csv_quote(v)}\n"
                        for r, (_, v) in zip(
                            chunk, records[offset : offset + len(chunk)]
                        )
                    )
                )
                offset += len(chunk)
        agg.write_counts(counts, out_dir / "counts.csv")

        cmap = cm.build_map(candidates, params)
        cm.write_map(cmap, out_dir / "map.csv")

        dist = dec.decode(counts, cmap, params, alpha=spec.alpha)
        dec.write_results(dist, out_dir / "results.csv")

        histogram = ds.true_histogram(dataset)
        rows = build_comparison(histogram, dist)
        write_comparison(rows, out_dir / "comparison.csv")
        metrics = evaluate(rows)

        epsilon = pr.epsilon_one(params)
        manifest = {
            "population": spec.population,
            "seed": spec.seed,
            "mode": spec.mode.value,
            "epsilon": None if math.isinf(epsilon) else epsilon,
            "epsilon_label": spec.epsilon_label,
            "source": str(spec.source) if spec.source else None,
            "synthetic": None
            if spec.source
            else {
                "num_candidates": spec.synthetic.num_candidates,
                "exponent": spec.synthetic.exponent,
            },
            "metrics": {
                "true_strings": metrics.true_strings,
                "rappor_strings": metrics.rappor_strings,
                "accurate80": metrics.accurate80,
                "proportion": metrics.proportion,
            },
        }
        (out_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except BaseException:
        for name in SCENARIO_FILES:
            try:
                (out_dir / name).unlink(missing_ok=True)
            except OSError:
                pass
        raise
    return ScenarioResult(
        rows=tuple(rows),
        metrics=metrics,
        epsilon=epsilon,
        population=spec.population,
        seed=spec.seed,
        out_dir=out_dir,
    )


# --- epsilon resolution -----------------------------------------------------

#: Budgets at most this far from a reference configuration reuse it verbatim.
PRESET_TOLERANCE = 5e-3

#: Bisection families: (p, q) pairs tried in order; each covers budgets up to
#: its f->0 limit h*ln(q(1-p)/(p(1-q))).
_FAMILIES = ((0.5, 0.75), (0.05, 0.9))


def resolve_epsilon(
    target: float,
    *,
    h: int = 2,
    k: int = 32,
    m: int = 64,
    one_time: bool = False,
) -> pr.RapporParams:
    """Map a requested budget to concrete parameters.

    The three reference configurations are matched exactly; anything else
    holds (p, q) fixed and bisects the lie probability f, which the budget
    is strictly decreasing in.  Keeping one family per sweep keeps the
    noise level monotone in the budget, so utility comparisons across a
    sweep stay meaningful.  With one_time the (p, q) = (0, 1) collapse is
    the family, where any positive budget is reachable through f alone.
    """
    if target <= 0 or math.isinf(target):
        raise InvalidParams("epsilon", "target budget must be positive and finite")
    if not one_time and h == 2:
        for preset in pr.REFERENCE_PARAMS.values():
            if abs(pr.epsilon_one(preset) - target) <= PRESET_TOLERANCE:
                if (k, m) == (preset.k, preset.m):
                    return preset
                return replace(preset, k=k, m=m)
    families = ((0.0, 1.0),) if one_time else _FAMILIES
    for p, q in families:
        probe = pr.RapporParams(k=k, h=h, m=m, f=1e-12, p=p, q=q)
        if pr.epsilon_one(probe) < target:
            continue
        lo, hi = 1e-12, 1.0 - 1e-12  # epsilon_one decreases in f
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            trial = pr.RapporParams(k=k, h=h, m=m, f=mid, p=p, q=q)
            if pr.epsilon_one(trial) > target:
                lo = mid
            else:
                hi = mid
        return pr.RapporParams(k=k, h=h, m=m, f=0.5 * (lo + hi), p=p, q=q)
    raise InvalidParams(
        "epsilon", f"target {target} exceeds every bisection family's range"
    )


def _resolve_grid_epsilon(
    entry: Union[float, Path], mode: enc.EncoderMode
) -> tuple[float, pr.RapporParams]:
    if isinstance(entry, (str, Path)):
        params = pr.read_params(Path(entry))
        return pr.epsilon_one(params), params
    params = resolve_epsilon(
        float(entry),
        h=1 if mode.basic else 2,
        one_time=mode.one_time,
    )
    return float(entry), params


def scenario_dir_name(population: int, epsilon_label: float, seed: int) -> str:
    return f"N{population}_eps{_format_num(epsilon_label)}_seed{seed}"


def _run_scenario_job(spec: ScenarioSpec) -> ScenarioResult:
    return run_scenario(spec, workers=1)


def run_grid(grid: GridSpec, *, workers: int | None = None) -> GridResult:
    """Run every (population, epsilon, seed) cell; summarize medians per cell.

    Failed cells are recorded and skipped rather than aborting the grid.
    Scenario directories are parallelized across processes; each scenario
    then encodes serially so results never depend on scheduling.
    """
    cells: list[tuple[int, float, pr.RapporParams]] = []
    for population in grid.populations:
        for entry in grid.epsilons:
            label, params = _resolve_grid_epsilon(entry, grid.mode)
            cells.append((population, label, params))
    for population, entry in grid.extra_cells:
        label, params = _resolve_grid_epsilon(entry, grid.mode)
        if all((population, label) != (c[0], c[1]) for c in cells):
            cells.append((population, label, params))

    out_dir = Path(grid.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = []
    for population, label, params in cells:
        for seed in grid.seeds:
            specs.append(
                ScenarioSpec(
                    params=params,
                    population=population,
                    seed=seed,
                    out_dir=out_dir / scenario_dir_name(population, label, seed),
                    mode=grid.mode,
                    synthetic=grid.synthetic,
                    source=grid.source,
                    candidates_file=grid.candidates_file,
                    reports_per_user=grid.reports_per_user,
                    epsilon_label=label,
                    alpha=grid.alpha,
                    audit=grid.audit,
                )
            )

    n_workers = enc.resolve_workers(workers)
    results: dict[tuple[int, float, int], ScenarioResult] = {}
    failures: list[tuple[int, float, int, str]] = []
    if n_workers == 1 or len(specs) <= 1:
        outcomes = []
        for spec in specs:
            try:
                outcomes.append(run_scenario(spec, workers=1))
            except RapporError as exc:
                outcomes.append(exc)
    else:
        outcomes = []
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(_run_scenario_job, spec) for spec in specs]
            for future in futures:
                try:
                    outcomes.append(future.result())
                except RapporError as exc:
                    outcomes.append(exc)
    for spec, outcome in zip(specs, outcomes):
        key = (spec.population, float(spec.epsilon_label), spec.seed)
        if isinstance(outcome, ScenarioResult):
            results[key] = outcome
        else:
            failures.append((*key, str(outcome)))

    summary = []
    for population, label, _ in cells:
        cell_results = [
            results[(population, label, seed)]
            for seed in grid.seeds
            if (population, label, seed) in results
        ]
        if not cell_results:
            summary.append(
                SummaryRow(population, label, math.nan, math.nan, math.nan, None, tuple(grid.seeds))
            )
            continue
        proportions = [
            r.metrics.proportion for r in cell_results if r.metrics.proportion is not None
        ]
        summary.append(
            SummaryRow(
                population=population,
                epsilon=label,
                true_strings=median(r.metrics.true_strings for r in cell_results),
                rappor_strings=median(r.metrics.rappor_strings for r in cell_results),
                accurate80=median(r.metrics.accurate80 for r in cell_results),
                proportion=median(proportions) if proportions else None,
                seeds=tuple(r.seed for r in cell_results),
            )
        )

    write_summary(summary, out_dir / "summary.csv")
    write_plot_data(export_plot_data(summary), out_dir / "plot.csv")
    return GridResult(
        summary=tuple(summary),
        scenarios=tuple(results.values()),
        failures=tuple(failures),
    )


def export_plot_data(summary: list[SummaryRow] | tuple[SummaryRow, ...]) -> list[tuple[int, float, float]]:
    """(population, epsilon, accurate / true-strings) triples for plotting."""
    rows = []
    for row in summary:
        if math.isnan(row.accurate80) or not row.true_strings:
            ratio = 0.0
        else:
            ratio = row.accurate80 / row.true_strings
        rows.append((row.population, row.epsilon, ratio))
    return rows


# --- persistence -------------------------------------------------------------


def _format_num(x: Union[int, float]) -> str:
    if isinstance(x, int):
        return str(x)
    as_float = float(x)
    if math.isnan(as_float):
        return ""
    if as_float.is_integer():
        return str(int(as_float))
    return repr(as_float)


def write_comparison(
    rows: list[ComparisonRow] | tuple[ComparisonRow, ...], path: Union[str, Path]
) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARISON_HEADER)
    for row in rows:
        writer.writerow(
            [
                row.string,
                str(row.true_count),
                repr(float(row.estimate)),
                "true" if row.detected else "false",
                "true" if row.accurate80 else "false",
            ]
        )
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_comparison(path: Union[str, Path]) -> list[ComparisonRow]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != COMPARISON_HEADER:
            raise InvalidParams("file", f"expected header {','.join(COMPARISON_HEADER)}")
        for row in reader:
            if not row:
                continue
            rows.append(
                ComparisonRow(
                    string=row[0],
                    true_count=int(row[1]),
                    estimate=float(row[2]),
                    detected=row[3] == "true",
                    accurate80=row[4] == "true",
                )
            )
    return rows


def write_summary(
    summary: list[SummaryRow] | tuple[SummaryRow, ...], path: Union[str, Path]
) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    for row in summary:
        writer.writerow(
            [
                str(row.population),
                _format_num(row.epsilon),
                _format_num(row.true_strings),
                _format_num(row.rappor_strings),
                _format_num(row.accurate80),
                "" if row.proportion is None else repr(float(row.proportion)),
                ";".join(str(s) for s in row.seeds),
            ]
        )
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def write_plot_data(
    rows: list[tuple[int, float, float]], path: Union[str, Path]
) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PLOT_HEADER)
    for population, epsilon, ratio in rows:
        writer.writerow([str(population), _format_num(epsilon), repr(float(ratio))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


# --- grid config files --------------------------------------------------------


def parse_grid_config(path: Union[str, Path], out_dir: Union[str, Path]) -> GridSpec:
    """Parse the line-oriented grid format.

    Top-level ``key = value`` lines set grid-wide fields; each ``[scenario]``
    block appends one explicit (population, epsilon) cell on top of the
    populations x epsilons cross.  ``#`` starts a comment.
    """
    populations: list[int] = []
    epsilons: list[Union[float, Path]] = []
    seeds: list[int] = [1, 2, 3, 4, 5]
    mode = enc.EncoderMode.STANDARD
    synthetic = SyntheticSpec()
    source: Path | None = None
    candidates_file: Path | None = None
    reports_per_user = 1
    alpha = 0.05

    extra: list[dict[str, str]] = []
    current: dict[str, str] | None = None
    base = Path(path).parent

    def parse_epsilon(token: str) -> Union[float, Path]:
        try:
            return float(token)
        except ValueError:
            return base / token

    for lineno, raw in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower() == "[scenario]":
            current = {}
            extra.append(current)
            continue
        if "=" not in line:
            raise InvalidParams("grid-config", f"line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if current is not None:
            current[key] = value
            continue
        if key == "populations":
            populations = [int(tok) for tok in value.split(",") if tok.strip()]
        elif key == "epsilons":
            epsilons = [parse_epsilon(tok.strip()) for tok in value.split(",") if tok.strip()]
        elif key == "seeds":
            seeds = [int(tok) for tok in value.split(",") if tok.strip()]
        elif key == "mode":
            mode = enc.EncoderMode.parse(value)
        elif key == "candidates":
            synthetic = replace(synthetic, num_candidates=int(value))
        elif key == "exponent":
            synthetic = replace(synthetic, exponent=float(value))
        elif key == "source":
            source = base / value
        elif key == "candidates_file":
            candidates_file = base / value
        elif key == "reports_per_user":
            reports_per_user = int(value)
        elif key == "alpha":
            alpha = float(value)
        else:
            raise InvalidParams("grid-config", f"line {lineno}: unknown key {key!r}")

    cells: list[tuple[int, Union[float, Path]]] = []
    for block in extra:
        if "population" not in block or "epsilon" not in block:
            raise InvalidParams(
                "grid-config", "[scenario] blocks need population and epsilon"
            )
        cells.append((int(block["population"]), parse_epsilon(block["epsilon"])))

    if not populations and not cells:
        raise InvalidParams("grid-config", "no populations configured")
    if populations and not epsilons:
        raise InvalidParams("grid-config", "no epsilons configured")

    return GridSpec(
        populations=tuple(populations),
        epsilons=tuple(epsilons),
        seeds=tuple(seeds),
        out_dir=Path(out_dir),
        mode=mode,
        synthetic=synthetic,
        source=source,
        candidates_file=candidates_file,
        reports_per_user=reports_per_user,
        alpha=alpha,
        extra_cells=tuple(cells),
    )
