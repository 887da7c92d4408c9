from __future__ import annotations

import dataclasses
import json
import re
from decimal import Decimal

import numpy as np
import pytest
from oracles import mean_half_up

from signrag.descriptor import MockDescriptor
from signrag.embedder import MockEmbedder
from signrag.errors import ValidationError
from signrag.evaluation import (
    LabeledExample,
    RunMetrics,
    bench_latency,
    evaluate,
    load_dataset,
    mean_row,
    parse_delimited,
    report,
    round_half_up,
    write_dataset,
)
from signrag.generation import NoisyGenerator, OracleGenerator
from signrag.retrieval import Backends
from signrag.timing import StageTimings
from signrag.vector_store import StoreEntry, VectorStore

TABLE_IDEAL = [
    ("88.78", "99.67", "95.38"),
    ("87.13", "100.00", "95.71"),
    ("89.77", "99.67", "96.04"),
    ("88.45", "100.00", "95.71"),
    ("89.11", "99.67", "95.05"),
]
TABLE_REAL_WORLD = [
    ("64.44", "96.67", "83.33"),
    ("61.24", "96.63", "84.27"),
    ("65.00", "96.11", "80.56"),
    ("60.77", "96.13", "80.66"),
    ("65.75", "96.69", "83.43"),
]


def _runs(table, n):
    return [RunMetrics(float(a), float(b), float(c), n, i) for i, (a, b, c) in enumerate(table, start=1)]


def _rounded_means(runs):
    return tuple(str(round_half_up(v)) for v in mean_row(runs).values())


def test_ideal_table_means():
    assert _rounded_means(_runs(TABLE_IDEAL, 303)) == ("88.65", "99.80", "95.58")


def test_real_world_table_means():
    assert _rounded_means(_runs(TABLE_REAL_WORLD, 181)) == ("63.44", "96.45", "82.45")


@pytest.mark.parametrize("table", [TABLE_IDEAL, TABLE_REAL_WORLD])
def test_means_agree_with_fraction_oracle(table):
    expected = tuple(mean_half_up([row[i] for row in table]) for i in range(3))
    assert _rounded_means(_runs(table, 100)) == expected


def test_round_half_up_on_exact_halves():
    assert str(round_half_up(Decimal("96.445"))) == "96.45"
    assert str(round_half_up(0.125)) == "0.13"
    assert str(round_half_up(2.675)) == "2.68"  # the shortest repr is 2.675


def test_single_run_mean_equals_run():
    (run,) = _runs(TABLE_IDEAL[:1], 303)
    assert _rounded_means([run]) == TABLE_IDEAL[0]


def test_plain_table_shape():
    text = report(_runs(TABLE_IDEAL, 303))
    lines = text.splitlines()
    assert [c.strip() for c in lines[0].strip("|").split("|")] == ["#Run", "Top-1 Acc [%]", "Top-5 Acc [%]", "Gen Acc [%]"]
    rows = [[c.strip() for c in ln.strip("|").split("|")] for ln in lines if not ln.startswith("|-")][1:]
    assert rows[0] == ["1", "88.78", "99.67", "95.38"]
    assert rows[1] == ["2", "87.13", "100.00", "95.71"]
    assert rows[-1] == ["Mean", "88.65", "99.80", "95.58"]


def test_delimited_round_trip():
    runs = _runs(TABLE_REAL_WORLD, 181)
    text = report(runs, "delimited")
    assert text.splitlines()[0].split("\t") == ["run", "top1_acc", "top5_acc", "gen_acc", "n"]
    assert text.splitlines()[-1].startswith("mean\t")
    assert parse_delimited(text) == runs
    with pytest.raises(ValidationError):
        report(runs, "html")


def test_run_metrics_invariants():
    with pytest.raises(ValidationError):
        RunMetrics(90.0, 80.0, 85.0, 10)
    with pytest.raises(ValidationError):
        RunMetrics(10.0, 20.0, 120.0, 10)


def test_identity_fixtures_score_100(ideal, store, backends):
    result = evaluate(ideal, store, backends, runs=2)
    for m in result.runs:
        assert (m.top1_acc, m.top5_acc, m.gen_acc) == (100.0, 100.0, 100.0)


def test_one_missed_retrieval_of_ten(ideal, store, backends):
    far = VectorStore(store.dimension, store.entries())
    entry = far.get("R1-1")
    far.upsert(StoreEntry("R1-1", np.full(store.dimension, 1e3), entry.description))
    data = [ex for ex in ideal if ex.true_code == "R1-1"] + [ex for ex in ideal if ex.true_code != "R1-1"][:9]
    (m,) = evaluate(data, far, backends, runs=1).runs
    assert m.n == 10
    assert m.top5_acc == 90.0
    assert m.gen_acc <= 90.0


def test_unknown_true_code_rejected_before_model_calls(ideal, store):
    class Exploding:
        def __getattr__(self, name):
            raise AssertionError("backend used")

    bad = [LabeledExample(ideal[0].image, "R99-1")]
    with pytest.raises(ValidationError, match="R99-1"):
        evaluate(bad, store, Backends(Exploding(), Exploding(), Exploding()), runs=1)


def test_oracle_gen_equals_top5(real_world, store, backends):
    for m in evaluate(real_world, store, backends, runs=2).runs:
        assert m.top1_acc <= m.top5_acc
        assert m.gen_acc == m.top5_acc
    # the fixture is hard enough for rank 1 to miss
    assert m.top1_acc < m.top5_acc


def test_noisy_gen_degrades_monotonically_in_p(real_world, store, backends):
    means = []
    for p in (0.0, 0.1, 0.3, 0.6, 1.0):
        noisy = dataclasses.replace(backends, generator=NoisyGenerator(p, 11, backends.generator.answers))
        runs = evaluate(real_world, store, noisy, runs=2).runs
        means.append(sum(m.gen_acc for m in runs) / len(runs))
    assert means == sorted(means, reverse=True)
    assert means[0] == runs[0].top5_acc and means[-1] == 0.0


def test_evaluate_is_deterministic(real_world, store, backends):
    noisy = dataclasses.replace(backends, generator=NoisyGenerator(0.1, 5, backends.generator.answers))
    a = evaluate(real_world, store, noisy, runs=3).runs
    b = evaluate(real_world, store, noisy, runs=3).runs
    assert a == b


def test_audit_log(tmp_path, real_world, store, backends):
    path = tmp_path / "audit.jsonl"
    evaluate(real_world[:10], store, backends, runs=2, audit_path=path)
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(records) == 20
    assert {r["run"] for r in records} == {1, 2}
    first = records[0]
    assert set(first) >= {"run", "example", "true_code", "top1", "topk", "gen", "outcome"}
    assert first["outcome"]["hits"][0]["rank"] == 1


def test_dataset_round_trip(tmp_path, real_world):
    path = tmp_path.parent / "ds.jsonl"
    write_dataset(path, real_world)
    assert load_dataset(path) == list(real_world)


# -- latency --------------------------------------------------------------

def _delayed_backends(catalog, corpus, delays):
    d, e, g = delays
    descriptor = MockDescriptor.from_catalog(catalog, delay=d).load_script(corpus.script)
    return Backends(descriptor, MockEmbedder(64, delay=e), OracleGenerator(descriptor.answers(), delay=g))


def test_injected_delays_recovered(catalog, corpus, real_world, store, delayed_store):
    backends = _delayed_backends(catalog, corpus, (0.010, 0.005, 0.008))
    rep = bench_latency(real_world, delayed_store(store, 0.002), backends, trials=100)
    assert rep.failed == 0
    expected = {"descriptor_ms": 10, "embed_ms": 5, "store_query_ms": 2, "generation_ms": 8}
    for stage, ms in expected.items():
        assert abs(rep.stages[stage].mean - ms) <= 2, (stage, rep.stages[stage])
    parts = sum(rep.stages[s].mean for s in expected)
    assert abs(rep.total.mean - parts) <= 0.05 * rep.total.mean


def test_zero_delay_stages_are_fast(real_world, store, backends):
    rep = bench_latency(real_world, store, backends, trials=100)
    for stage, st in rep.stages.items():
        assert st.mean < 5, stage


def test_summary_shape(real_world, store, backends):
    rep = bench_latency(real_world, store, backends, trials=20)
    text = rep.summary()
    assert re.search(r"average latency was [\d.]+m?s, ranging from [\d.]+m?s to [\d.]+m?s "
                     r"with a standard deviation of [\d.]+m?s", text)
    labels = ["VLM descriptor", "embedding", "database query", "LLM classifier"]
    assert all(label in text for label in labels)
    order = sorted(labels, key=text.index)
    means = {"VLM descriptor": "descriptor_ms", "embedding": "embed_ms",
             "database query": "store_query_ms", "LLM classifier": "generation_ms"}
    ranked = [rep.stages[means[label]].mean for label in order]
    assert ranked == sorted(ranked, reverse=True)
    d = rep.to_dict()
    assert set(d["total_ms"]) == {"mean", "min", "max", "sd", "count"}
    assert set(d["stages_ms"]) == set(means.values())


def test_failed_trials_excluded(store, backends):
    from signrag.fixtures import make_image

    rep = bench_latency([LabeledExample(make_image("unknown"), "R1-1")], store, backends, trials=5)
    assert rep.failed == 5 and rep.total.count == 0
    assert "failed" in rep.summary()


def test_stage_timings_sum():
    t = StageTimings(descriptor_ms=1.0, embed_ms=2.0, total_ms=3.5)
    assert t.stage_sum_ms == 3.0
    assert t.to_dict()["store_query_ms"] is None
