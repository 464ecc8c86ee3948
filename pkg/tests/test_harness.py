import csv
import json
import math

import numpy as np
import pytest

from multibias import harness
from multibias.bias import flip_positivity, segment_head_tail
from multibias.data import load_ratings, write_ratings
from multibias.harness import (
    DEFAULT_BETAS,
    PLOT_COLUMNS,
    ConfigError,
    StudyFailure,
    config_from_dict,
    load_config,
    prepare_data,
    run_comparison,
    run_reranker_study,
    run_simulation_sweep,
    run_study,
)
from multibias.recommenders import TrainingError, recommend, train
from multibias.rerankers import RerankConfig, RerankContext, rerank
from multibias.synthetic import SyntheticConfig, generate

TINY = {"n_users": 60, "n_items": 50, "mean_profile": 15}


def doc(**over):
    d = {
        "schema_version": 1,
        "dataset": {"synthetic": dict(TINY)},
        "pipeline": {"model": {"algorithm": "BiasedMF", "iterations": 5}, "K": 5},
        "betas": [0.05, 0.3],
        "algorithms": ["BiasedMF"],
        "Ns": [5, 10],
    }
    d.update(over)
    return d


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# config ------------------------------------------------------------------------


def test_config_round_trip():
    cfg = config_from_dict(doc())
    assert config_from_dict(cfg.to_dict()) == cfg
    assert cfg.to_dict()["schema_version"] == 1
    assert len(cfg.digest()) == 12


@pytest.mark.parametrize("bad", [
    {"schema_version": 2},
    {"surprise": 1},
    {"betas": []},
    {"betas": [0.0]},
    {"betas": [1.5]},
    {"Ns": [3]},
    {"methods": ["DM", "MAGIC"]},
    {"studies": ["everything"]},
    {"algorithms": ["Nope"]},
    {"dataset": {"split_ratio": 1.0}},
    {"dataset": {"synthetic": {"colour": 1}}},
    {"pipeline": {"K": 10, "N": 5, "reranker": {"method": "DM", "K": 10}}},
    {"pipeline": {"input_transform": "flip"}},
    {"pipeline": {"model": {"algorithm": "BiasedMF", "factors": 0}}},
    {"pipeline": {"grid": {"depth": [1, 2]}}},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        config_from_dict(doc(**bad))


def test_missing_schema_version():
    d = doc()
    del d["schema_version"]
    with pytest.raises(ConfigError, match="schema_version"):
        config_from_dict(d)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_with_seed_sets_every_seed():
    cfg = config_from_dict(doc()).with_seed(7)
    assert cfg.dataset.split_seed == 7 and cfg.pipeline.model.seed == 7


# simulation --------------------------------------------------------------------


def test_sweep_has_one_row_per_beta(tmp_path):
    cfg = config_from_dict(doc(betas=list(DEFAULT_BETAS)))
    rep = run_simulation_sweep(cfg, tmp_path)
    rows = read_csv(tmp_path / "beta_sweep.csv")
    assert len(DEFAULT_BETAS) == 13
    assert rows[0] == PLOT_COLUMNS["beta_sweep.csv"]
    assert [float(r[0]) for r in rows[1:]] == list(DEFAULT_BETAS)
    assert len(rep.reports) == 13


def test_sweep_rejects_reranker():
    d = doc(pipeline={"K": 5, "N": 10, "reranker": {"method": "DM", "K": 5}})
    with pytest.raises(ConfigError):
        run_simulation_sweep(config_from_dict(d))


def _no_max_on_popular(tmp_path):
    """Synthetic data whose most popular items never carry the top rating."""
    m = generate(SyntheticConfig(**TINY))
    top = np.argsort(-m.item_counts(), kind="stable")[:10]
    vals = m.values.copy()
    hit = np.isin(m.items, top) & (vals == vals.max())
    vals[hit] = vals.max() - 1
    path = tmp_path / "r.tsv"
    write_ratings(m.with_values(vals), path)
    return path


def test_tiny_beta_equals_baseline(tmp_path):
    path = _no_max_on_popular(tmp_path)
    cfg = config_from_dict(doc(dataset={"path": str(path)}, betas=[0.001]))
    data = prepare_data(cfg.dataset)
    flipped = flip_positivity(data.split.train, 0.001)
    assert np.array_equal(flipped.values, data.split.train.values)
    sweep = run_simulation_sweep(cfg, data=data).reports[0]
    base = run_comparison(cfg, data=data, arms=("raw", "raw")).reports[0]
    assert dict(sweep.metric_items()) == dict(base.metric_items())


def test_sweep_failure_persists_partial_results(tmp_path, monkeypatch):
    real = harness.fit
    calls = []

    def flaky(*args):
        calls.append(1)
        if len(calls) == 2:
            raise TrainingError("diverged")
        return real(*args)

    monkeypatch.setattr(harness, "fit", flaky)
    cfg = config_from_dict(doc(betas=[0.02, 0.5, 0.9]))
    with pytest.raises(StudyFailure) as info:
        run_simulation_sweep(cfg, tmp_path)
    assert info.value.report is not None and info.value.report.errors
    rows = read_csv(tmp_path / "beta_sweep.csv")
    assert len(rows) == 2 and float(rows[1][0]) == 0.02


# comparison --------------------------------------------------------------------


def test_identical_arms_give_zero_deltas(tmp_path):
    cfg = config_from_dict(doc(algorithms=["BiasedMF", "ItemKNN"]))
    rep = run_comparison(cfg, tmp_path, arms=("percentile", "percentile"))
    assert rep.gains
    for g in rep.gains:
        assert g["gain"] == 0.0 or math.isnan(g["gain"])
    assert read_csv(tmp_path / "comparison.csv")[0] == PLOT_COLUMNS["comparison.csv"]


def test_comparison_uses_per_algorithm_grid():
    d = doc(grids={"BiasedMF": {"iterations": [2, 4]}})
    rep = run_comparison(config_from_dict(d))
    labels = {r.labels["model"] for r in rep.reports}
    assert all("it=2" in x or "it=4" in x for x in labels)


# reranker study ----------------------------------------------------------------


def test_reranker_cell_count(tmp_path):
    cfg = config_from_dict(doc(Ns=[5, 8, 10]))
    rep = run_reranker_study(cfg, tmp_path)
    methods = {r.labels["method"] for r in rep.reports}
    assert len(rep.reports) == 2 * 3 * 6 + 2
    assert methods == {"TOPK", "DM", "FASTAR", "XQUAD", "FAIRMATCH", "RANDOM", "REVERSE"}
    assert {g["metric"] for g in rep.gains} == {"ndcg", "ia@1", "ee", "runtime_seconds"}
    assert len(read_csv(tmp_path / "timing.csv")) == 1 + 2 * 3 * 6


def test_gain_rows_reference_existing_cells():
    cfg = config_from_dict(doc(Ns=[5, 10]))
    rep = run_reranker_study(cfg)
    cells = {(r.labels["input"], r.labels["N"], r.labels.get("method")): r for r in rep.reports}
    for g in rep.gains:
        a = cells[("percentile", 5, g["method"])].get(g["metric"])
        b = cells[("raw", 10, g["method"])].get(g["metric"])
        assert (g["percentile"], g["rating"]) == (a, b)
        expect = (a - b) / b * 100
        assert g["gain"] == pytest.approx(-expect if g["metric"] == "runtime_seconds" else expect)


def test_reverse_with_k_equal_n_reverses_baseline():
    cfg = config_from_dict(doc(Ns=[5], methods=["REVERSE"]))
    data = prepare_data(cfg.dataset)
    model = train(cfg.pipeline.model, data.split.train)
    base = recommend(model, 5)
    out = rerank(base, RerankConfig("REVERSE", K=5), RerankContext(data.segmentation, data.split.train))
    for u in range(base.n_users):
        assert out.list_for(u) == base.list_for(u)[::-1]
    rep = run_reranker_study(cfg, data=data)
    top = {r.labels["input"]: r for r in rep.reports if r.labels["method"] == "TOPK"}
    rev = {r.labels["input"]: r for r in rep.reports if r.labels["method"] == "REVERSE"}
    for kind in ("raw", "percentile"):
        for name in ("precision", "ia@1", "ee", "gini"):
            assert rev[kind].get(name) == top[kind].get(name)


# whole study -------------------------------------------------------------------


def _run(tmp, seed=None):
    cfg = config_from_dict(doc(algorithms=["BiasedMF", "ItemKNN"], grids={"ItemKNN": {"neighbors": [5, 10]}}))
    if seed is not None:
        cfg = cfg.with_seed(seed)
    run_study(cfg, tmp, jobs=2)
    return cfg


def _strip_runtime(path):
    rows = read_csv(path)
    header = rows[0]
    keep = [j for j, c in enumerate(header) if c != "runtime_seconds"]
    out = []
    for r in rows:
        if "runtime_seconds" in r and "metric" in header:
            continue
        if path.name == "gain.csv" and r[1] == "runtime_seconds":
            continue
        out.append([r[j] for j in keep])
    return out


def test_study_is_deterministic(tmp_path):
    _run(tmp_path / "a")
    _run(tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert "results.csv" in names and "lorenz.csv" in names
    for name in names:
        assert _strip_runtime(tmp_path / "a" / name) == _strip_runtime(tmp_path / "b" / name), name


def test_plot_files_match_column_contract(tmp_path):
    _run(tmp_path)
    for name, columns in PLOT_COLUMNS.items():
        rows = read_csv(tmp_path / name)
        assert rows[0] == columns, name
        assert len(rows) > 1
        for r in rows[1:]:
            rec = dict(zip(columns, r))
            for c in columns:
                if c in ("ndcg", "ee", "ia@1", "runtime_seconds", "gain", "beta", "precision",
                         "item_fraction", "cumulative_rating_fraction"):
                    float(rec[c])


def test_every_row_carries_provenance(tmp_path):
    cfg = _run(tmp_path, seed=4)
    data = prepare_data(cfg.dataset)
    rows = read_csv(tmp_path / "results.csv")
    header = rows[0]
    assert header[-3:] == ["dataset", "config", "seed"]
    for r in rows[1:]:
        assert r[-3:] == [data.fingerprint, cfg.digest(), "4"]
    report = json.loads((tmp_path / "reranker_report.json").read_text())
    prov = report["provenance"]
    assert prov["config_hash"] == cfg.digest()
    assert {"numpy", "scipy", "numba", "python", "multibias"} <= set(prov["versions"])


def test_file_dataset_with_filters(tmp_path):
    path = tmp_path / "r.tsv"
    write_ratings(generate(SyntheticConfig(**TINY)), path)
    cfg = config_from_dict(doc(dataset={"path": str(path), "min_user_ratings": 5, "min_item_ratings": 3}))
    data = prepare_data(cfg.dataset)
    assert data.matrix.user_counts().min() >= 5 and data.matrix.item_counts().min() >= 3
    assert data.segmentation == segment_head_tail(data.split.train, 0.2)
    assert load_ratings(path).nnz >= data.matrix.nnz
