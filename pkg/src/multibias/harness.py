"""End-to-end studies driven by one JSON config document.

Three studies share the same data preparation (load or generate, k-core
filter, per-user split, head/tail segmentation on the training part):

* ``run_simulation_sweep``: flip the training data at each beta, train, evaluate.
* ``run_comparison``: grid-searched models on raw vs percentile input.
* ``run_reranker_study``: initial lists of several lengths reranked by every
  method, on both input types, with timing and a gain table.

Every table row carries the dataset fingerprint, the config hash and the
seed. Apart from runtime columns, outputs depend only on the config.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .bias import ItemSegmentation, diagnose, flip_positivity, percentile_transform, segment_head_tail, write_diagnostics
from .data import DataError, RatingMatrix, SplitPair, filter_kcore, load_ratings, split_per_user
from .metrics import RUNTIME_METRICS, MetricReport, UndefinedMetric, append_results, evaluate, relative_gain
from .recommenders import ModelConfig, TrainingError, expand_grid, grid_search, recommend, train
from .rerankers import METHODS, RerankConfig, RerankContext, RerankError, run_timed
from .synthetic import SyntheticConfig, generate

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_BETAS = (0.01, 0.03, 0.05, 0.07, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50)
INPUTS = ("raw", "percentile", "flip")

# column contract of the plot-data files
PLOT_COLUMNS = {
    "lorenz.csv": ["item_fraction", "cumulative_rating_fraction"],
    "beta_sweep.csv": ["beta", "precision", "ndcg", "ia@1", "lia@1", "ee", "gini", "dataset", "config", "seed"],
    "scatter_ndcg_ia.csv": ["input", "N", "method", "ndcg", "ia@1", "dataset", "config", "seed"],
    "scatter_ndcg_ee.csv": ["input", "N", "method", "ndcg", "ee", "dataset", "config", "seed"],
    "timing.csv": ["input", "N", "method", "runtime_seconds", "dataset", "config", "seed"],
    "gain.csv": ["method", "metric", "percentile", "rating", "gain", "dataset", "config", "seed"],
    "comparison.csv": ["algorithm", "metric", "rating", "percentile", "gain", "best_rating", "best_percentile",
                       "dataset", "config", "seed"],
}


class ConfigError(ValueError):
    """Invalid or inconsistent study configuration."""


class StudyFailure(RuntimeError):
    """A study stage failed after some results were already written."""

    def __init__(self, message: str, report: StudyReport | None = None):
        super().__init__(message)
        self.report = report


# configuration ---------------------------------------------------------------


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class DatasetSpec:
    """Where ratings come from and how they are filtered and split.

    ``path=None`` uses the synthetic generator with ``synthetic`` overrides.
    """

    path: str | None = None
    delimiter: str | None = "\t"
    header: bool = False
    synthetic: dict = field(default_factory=dict)
    min_user_ratings: int = 1
    min_item_ratings: int = 1
    split_ratio: float = 0.8
    split_seed: int = 0
    head_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if self.min_user_ratings < 1 or self.min_item_ratings < 1:
            raise ConfigError("filter thresholds must be >= 1")
        if not 0.0 < self.head_fraction < 1.0:
            raise ConfigError("head_fraction must lie in (0, 1)")
        if self.path is None:
            _build(SyntheticConfig, self.synthetic, "dataset.synthetic")


@dataclass(frozen=True)
class PipelineSpec:
    """One pipeline: input transform, model (or grid), list lengths, optional reranker."""

    input_transform: str = "raw"
    beta: float | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    grid: dict | None = None
    objective: str = "ndcg"
    N: int = 10
    K: int = 10
    reranker: RerankConfig | None = None
    alphas: tuple[int, ...] = (1,)

    def __post_init__(self):
        if self.input_transform not in INPUTS:
            raise ConfigError(f"input_transform must be one of {INPUTS}")
        if self.input_transform == "flip" and (self.beta is None or not 0.0 < self.beta <= 1.0):
            raise ConfigError("flip input needs beta in (0, 1]")
        if self.K < 1 or self.N < 1:
            raise ConfigError("N and K must be >= 1")
        if self.reranker is not None and self.K > self.N:
            raise ConfigError(f"K={self.K} exceeds N={self.N} with a reranker")
        if not self.alphas or min(self.alphas) < 1:
            raise ConfigError("alphas must be a non-empty list of positive integers")
        if self.grid is not None:
            bad = set(self.grid) - set(ModelConfig.__dataclass_fields__)
            if bad:
                raise ConfigError(f"grid: unknown model parameters {sorted(bad)}")

    def candidates(self, algorithm: str | None = None) -> list[ModelConfig]:
        base = self.model if algorithm is None else self.model.with_(algorithm=algorithm)
        return expand_grid(base, **self.grid) if self.grid else [base]


@dataclass(frozen=True)
class StudyConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    pipeline: PipelineSpec = field(default_factory=PipelineSpec)
    betas: tuple[float, ...] = DEFAULT_BETAS
    algorithms: tuple[str, ...] = ("BiasedMF", "ItemKNN")
    grids: dict = field(default_factory=dict)          # per-algorithm grid for the comparison
    Ns: tuple[int, ...] = (20, 50, 100)
    methods: tuple[str, ...] = METHODS
    studies: tuple[str, ...] = ("simulation", "comparison", "reranker")

    def __post_init__(self):
        if not self.betas:
            raise ConfigError("betas must be non-empty")
        if any(not 0.0 < b <= 1.0 for b in self.betas):
            raise ConfigError("every beta must lie in (0, 1]")
        if not self.Ns or min(self.Ns) < self.pipeline.K:
            raise ConfigError(f"every N must be >= K={self.pipeline.K}")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown reranker methods {sorted(bad)}")
        bad = set(self.studies) - {"simulation", "comparison", "reranker"}
        if bad:
            raise ConfigError(f"unknown studies {sorted(bad)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return _jsonable(d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]

    def with_seed(self, seed: int) -> StudyConfig:
        """Same study with ``seed`` as split, model and reranker seed."""
        p = self.pipeline
        pipe = replace(p, model=p.model.with_(seed=seed),
                       reranker=p.reranker.with_(seed=seed) if p.reranker else None)
        return replace(self, dataset=replace(self.dataset, split_seed=seed), pipeline=pipe)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def config_from_dict(doc: dict) -> StudyConfig:
    """Validate a config document (see README for the schema)."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    doc = dict(doc)
    version = doc.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    dataset = _build(DatasetSpec, doc.pop("dataset", {}), "dataset")
    pipe = dict(doc.pop("pipeline", {}))
    if "model" in pipe:
        try:
            pipe["model"] = ModelConfig.from_dict(pipe["model"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"pipeline.model: {exc}") from None
    if pipe.get("reranker") is not None:
        try:
            pipe["reranker"] = RerankConfig.from_dict(pipe["reranker"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"pipeline.reranker: {exc}") from None
    if "alphas" in pipe:
        pipe["alphas"] = tuple(pipe["alphas"])
    pipeline = _build(PipelineSpec, pipe, "pipeline")
    for key in ("betas", "algorithms", "Ns", "methods", "studies"):
        if key in doc:
            doc[key] = tuple(doc[key])
    cfg = _build(StudyConfig, dict(doc, dataset=dataset, pipeline=pipeline), "config")
    for alg in cfg.algorithms:
        try:
            pipeline.model.with_(algorithm=alg)
        except ValueError as exc:
            raise ConfigError(f"algorithms: {exc}") from None
    return cfg


def load_config(path: str | Path) -> StudyConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc)


# data --------------------------------------------------------------------------


@dataclass(frozen=True)
class PreparedData:
    matrix: RatingMatrix
    split: SplitPair
    segmentation: ItemSegmentation
    fingerprint: str


def prepare_data(spec: DatasetSpec) -> PreparedData:
    if spec.path is None:
        matrix = generate(SyntheticConfig(**spec.synthetic))
    else:
        matrix = load_ratings(spec.path, delimiter=spec.delimiter, header=spec.header)
    if spec.min_user_ratings > 1 or spec.min_item_ratings > 1:
        matrix = filter_kcore(matrix, spec.min_user_ratings, spec.min_item_ratings)
    split = split_per_user(matrix, spec.split_ratio, spec.split_seed)
    seg = segment_head_tail(split.train, spec.head_fraction)
    return PreparedData(matrix, split, seg, matrix.fingerprint())


def transform_input(train: RatingMatrix, kind: str, beta: float | None = None):
    if kind == "raw":
        return train
    if kind == "percentile":
        return percentile_transform(train)
    if kind == "flip":
        return flip_positivity(train, beta)
    raise ConfigError(f"unknown input transform {kind!r}")


def fit(candidates: list[ModelConfig], train_data, data: PreparedData, pipe: PipelineSpec):
    """Train a single config, or grid-search several on the held-out split."""
    if len(candidates) == 1:
        return train(candidates[0], train_data), None
    result = grid_search(candidates, data.split, pipe.objective, pipe.K, train_data,
                         sorted(data.segmentation.tail), pipe.alphas)
    return result.best_model, result


# reports -----------------------------------------------------------------------


@dataclass
class StudyReport:
    kind: str
    reports: list[MetricReport] = field(default_factory=list)
    gains: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return _jsonable(dict(kind=self.kind, provenance=self.provenance, errors=self.errors,
                              gains=self.gains, reports=[r.to_dict() for r in self.reports]))

    def write(self, out_dir: str | Path):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        append_results(out / "results.csv", self.reports)
        (out / f"{self.kind}_report.json").write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def provenance(cfg: StudyConfig, data: PreparedData) -> dict:
    return dict(
        dataset=data.fingerprint,
        dataset_spec=asdict(cfg.dataset),
        n_users=data.matrix.n_users,
        n_items=data.matrix.n_items,
        n_ratings=data.matrix.nnz,
        head_items=len(data.segmentation.head),
        config=cfg.to_dict(),
        config_hash=cfg.digest(),
        seeds=dict(split=cfg.dataset.split_seed, model=cfg.pipeline.model.seed,
                   reranker=cfg.pipeline.reranker.seed if cfg.pipeline.reranker else cfg.pipeline.model.seed),
        versions=dict(multibias=__version__, numpy=np.__version__, scipy=scipy.__version__,
                      numba=numba.__version__, python=platform.python_version()),
    )


def _tags(prov: dict) -> dict:
    return dict(dataset=prov["dataset"], config=prov["config_hash"], seed=prov["seeds"]["model"])


def _write_table(path: Path, rows: list[dict]):
    columns = PLOT_COLUMNS[path.name]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k, "")) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def _map_jobs(fn, items, jobs: int):
    """Ordered map over a bounded thread pool; exceptions are returned, not raised."""
    def safe(x):
        try:
            return fn(x)
        except (TrainingError, RerankError, DataError, UndefinedMetric, np.linalg.LinAlgError, RuntimeError) as exc:
            return exc
    if jobs <= 1:
        return [safe(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(safe, items))


def _gain(a: float, b: float) -> float:
    try:
        return relative_gain(a, b)
    except UndefinedMetric:
        return float("nan")


# studies -----------------------------------------------------------------------


def run_simulation_sweep(cfg: StudyConfig, out_dir: str | Path | None = None, jobs: int = 1,
                         data: PreparedData | None = None) -> StudyReport:
    """Flip the training data at every beta, retrain, evaluate; writes beta_sweep.csv."""
    pipe = cfg.pipeline
    if pipe.reranker is not None:
        raise ConfigError("the simulation sweep runs without a reranker")
    data = data or prepare_data(cfg.dataset)
    prov = provenance(cfg, data)
    tail = sorted(data.segmentation.tail)
    report = StudyReport("simulation", provenance=prov)

    def cell(beta):
        model, _ = fit(pipe.candidates(), transform_input(data.split.train, "flip", beta), data, pipe)
        recs = recommend(model, pipe.K)
        return evaluate(recs, data.split.test, tail, pipe.alphas, pipeline=f"flip({beta:g})",
                        algorithm=model.algorithm, input="flip", N=pipe.K, beta=beta,
                        model=model.config.label(), **_tags(prov))

    rows = []
    for beta, rep in zip(cfg.betas, _map_jobs(cell, cfg.betas, jobs)):
        if isinstance(rep, Exception):
            report.errors.append(f"beta={beta:g}: {rep}")
            break
        report.reports.append(rep)
        rows.append(dict(dict(rep.metric_items()), beta=beta, **_tags(prov)))
    if out_dir is not None:
        report.write(out_dir)
        _write_table(Path(out_dir) / "beta_sweep.csv", rows)
    if report.errors:
        raise StudyFailure(f"simulation sweep aborted: {report.errors[0]}", report)
    return report


def run_comparison(cfg: StudyConfig, out_dir: str | Path | None = None, jobs: int = 1,
                   data: PreparedData | None = None,
                   arms: tuple[str, str] = ("raw", "percentile")) -> StudyReport:
    """Best model per input type and algorithm, side by side, with relative gains.

    The gain of each metric is that of the second arm over the first.
    """
    pipe = cfg.pipeline
    data = data or prepare_data(cfg.dataset)
    prov = provenance(cfg, data)
    tail = sorted(data.segmentation.tail)
    report = StudyReport("comparison", provenance=prov)
    cells = [(alg, arm) for alg in cfg.algorithms for arm in arms]

    def cell(key):
        alg, arm = key
        grid = cfg.grids.get(alg, pipe.grid if alg == pipe.model.algorithm else None)
        cands = expand_grid(pipe.model.with_(algorithm=alg), **grid) if grid else [pipe.model.with_(algorithm=alg)]
        model, _ = fit(cands, transform_input(data.split.train, arm, pipe.beta), data, pipe)
        recs = recommend(model, pipe.K)
        return evaluate(recs, data.split.test, tail, pipe.alphas, pipeline=f"{alg}/{arm}", algorithm=alg,
                        input=arm, N=pipe.K, model=model.config.label(), **_tags(prov))

    results = dict(zip(cells, _map_jobs(cell, cells, jobs)))
    rows = []
    for alg in cfg.algorithms:
        a, b = results[(alg, arms[0])], results[(alg, arms[1])]
        failed = [f"{alg}/{arm}: {r}" for arm, r in zip(arms, (a, b)) if isinstance(r, Exception)]
        if failed:
            report.errors.extend(failed)
            continue
        report.reports.extend([a, b])
        for name, va in a.metric_items():
            vb = b.get(name)
            g = dict(algorithm=alg, metric=name, rating=va, percentile=vb, gain=_gain(vb, va),
                     best_rating=a.labels["model"], best_percentile=b.labels["model"])
            report.gains.append(g)
            rows.append(dict(g, **_tags(prov)))
    if out_dir is not None:
        report.write(out_dir)
        _write_table(Path(out_dir) / "comparison.csv", rows)
    if report.errors:
        raise StudyFailure(f"comparison failed: {report.errors[0]}", report)
    return report


def run_reranker_study(cfg: StudyConfig, out_dir: str | Path | None = None, jobs: int = 1,
                       data: PreparedData | None = None) -> StudyReport:
    """Rating and percentile pipelines x initial-list lengths x rerankers.

    Base models train in parallel; reranking cells run one at a time so the
    measured runtimes are not disturbed by other cells.
    """
    pipe = cfg.pipeline
    data = data or prepare_data(cfg.dataset)
    prov = provenance(cfg, data)
    tail = sorted(data.segmentation.tail)
    ctx = RerankContext(data.segmentation, data.split.train)
    base_rr = pipe.reranker or RerankConfig("DM", K=pipe.K, seed=pipe.model.seed)
    report = StudyReport("reranker", provenance=prov)
    inputs = ("raw", "percentile")

    def train_input(kind):
        return fit(pipe.candidates(), transform_input(data.split.train, kind), data, pipe)[0]

    models = dict(zip(inputs, _map_jobs(train_input, inputs, jobs)))
    for kind, m in models.items():
        if isinstance(m, Exception):
            report.errors.append(f"{kind}: {m}")
    if report.errors:
        if out_dir is not None:
            report.write(out_dir)
        raise StudyFailure(f"reranker study failed: {report.errors[0]}", report)

    scatter, timing = [], []
    cells: dict[tuple[str, int, str], MetricReport] = {}
    for kind in inputs:
        model = models[kind]
        plain = recommend(model, pipe.K)
        rep = evaluate(plain, data.split.test, tail, pipe.alphas, pipeline=f"{kind}/topK", algorithm=model.algorithm,
                       input=kind, N=pipe.K, method="TOPK", model=model.config.label(), **_tags(prov))
        report.reports.append(rep)
        scatter.append(dict(input=kind, N=pipe.K, method="TOPK", ndcg=rep.ndcg, **{"ia@1": rep.get("ia@1")},
                            ee=rep.ee, **_tags(prov)))
        for N in cfg.Ns:
            initial = recommend(model, N)
            for method in cfg.methods:
                rcfg = base_rr.with_(method=method, K=pipe.K)
                try:
                    recs, seconds = run_timed(initial, rcfg, ctx)
                except (RerankError, RuntimeError) as exc:
                    report.errors.append(f"{kind}/N={N}/{method}: {exc}")
                    continue
                rep = evaluate(recs, data.split.test, tail, pipe.alphas, runtime=seconds,
                               pipeline=f"{kind}/{method}", algorithm=model.algorithm, input=kind, N=N,
                               method=method, model=model.config.label(),
                               flagged_users=len(recs.notes.get("flagged_users", [])),
                               overflow_units=recs.notes.get("overflow_units", 0),
                               deviation=recs.notes.get("deviation", ""), **_tags(prov))
                report.reports.append(rep)
                cells[(kind, N, method)] = rep
                row = dict(input=kind, N=N, method=method, ndcg=rep.ndcg, ee=rep.ee,
                           runtime_seconds=seconds, **{"ia@1": rep.get("ia@1")}, **_tags(prov))
                scatter.append(row)
                timing.append(row)

    lo, hi = min(cfg.Ns), max(cfg.Ns)
    rows = []
    for method in cfg.methods:
        a, b = cells.get(("percentile", lo, method)), cells.get(("raw", hi, method))
        if a is None or b is None:
            continue
        for name in ("ndcg", "ia@1", "ee", "runtime_seconds"):
            va, vb = a.get(name), b.get(name)
            # runtime is a cost: report the time saved relative to the rating pipeline
            g = -_gain(va, vb) if name in RUNTIME_METRICS else _gain(va, vb)
            entry = dict(method=method, metric=name, percentile=va, rating=vb, gain=g,
                         percentile_N=lo, rating_N=hi)
            report.gains.append(entry)
            rows.append(dict(entry, **_tags(prov)))
    if out_dir is not None:
        out = Path(out_dir)
        report.write(out)
        _write_table(out / "scatter_ndcg_ia.csv", scatter)
        _write_table(out / "scatter_ndcg_ee.csv", scatter)
        _write_table(out / "timing.csv", timing)
        _write_table(out / "gain.csv", rows)
    if report.errors:
        raise StudyFailure(f"reranker study incomplete: {report.errors[0]}", report)
    return report


STUDIES = {
    "simulation": run_simulation_sweep,
    "comparison": run_comparison,
    "reranker": run_reranker_study,
}


def run_study(cfg: StudyConfig, out_dir: str | Path | None = None, jobs: int = 1) -> dict[str, StudyReport]:
    """Run every study listed in ``cfg.studies`` on one prepared dataset.

    With ``out_dir`` the dataset diagnostics (lorenz.csv and friends) are written too.
    """
    data = prepare_data(cfg.dataset)
    if out_dir is not None:
        write_diagnostics(diagnose(data.matrix), out_dir, data.matrix)
    out = {}
    for name in cfg.studies:
        log.info("running %s study", name)
        out[name] = STUDIES[name](cfg, out_dir, jobs, data=data)
    return out
