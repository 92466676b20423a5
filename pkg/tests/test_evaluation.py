import math

import numpy as np
import pytest

from oov_forge.corpus import EmbeddingTable
from oov_forge.errors import EvaluationError, FormatError
from oov_forge.evaluation import (EvalItem, average_ranks, cosine_np,
                                  evaluate_method, import_chimera,
                                  load_benchmark_tsv, mask_contexts,
                                  nearest_neighbors, save_benchmark_tsv,
                                  spearman)


def brute_force_spearman(a, b):
    """Independent oracle: O(n^2) tie-averaged ranks + textbook Pearson."""
    def ranks(values):
        out = []
        for v in values:
            less = sum(1 for u in values if u < v)
            equal = sum(1 for u in values if u == v)
            # ranks occupied: less+1 .. less+equal; average them
            out.append(less + (equal + 1) / 2.0)
        return out

    ra, rb = ranks(list(a)), ranks(list(b))
    n = len(ra)
    ma = sum(ra) / n
    mb = sum(rb) / n
    num = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    da = math.sqrt(sum((x - ma) ** 2 for x in ra))
    db = math.sqrt(sum((y - mb) ** 2 for y in rb))
    return num / (da * db)


def test_spearman_identity_and_reversal_exact():
    a = [3.0, 1.0, 2.0, 5.0, 4.0]
    assert spearman(a, a) == 1.0
    ranks = average_ranks(a)
    reversed_ranks = (len(a) + 1) - ranks  # strictly reverses the ordering
    assert spearman(a, reversed_ranks) == -1.0


def test_spearman_constant_input_is_an_error():
    with pytest.raises(EvaluationError):
        spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(EvaluationError):
        spearman([1.0, 2.0, 3.0], [7.0, 7.0, 7.0])


def test_spearman_shape_contracts():
    with pytest.raises(EvaluationError):
        spearman([1.0], [2.0])
    with pytest.raises(EvaluationError):
        spearman([1.0, 2.0], [1.0, 2.0, 3.0])


def test_spearman_matches_bruteforce_on_random_tied_pairs(rng):
    for trial in range(1000):
        n = int(rng.integers(2, 12))
        # integer draws inject plenty of ties
        a = rng.integers(0, max(2, n // 2 + 1), size=n).astype(float)
        b = rng.integers(0, max(2, n // 2 + 1), size=n).astype(float)
        if len(set(a)) < 2 or len(set(b)) < 2:
            continue
        assert abs(spearman(a, b) - brute_force_spearman(a, b)) < 1e-12


def test_spearman_symmetry_and_monotone_invariance(rng):
    a = rng.normal(size=9)
    b = rng.normal(size=9)
    assert spearman(a, b) == spearman(b, a)
    assert spearman(np.exp(a), b) == spearman(a, b)
    assert spearman(a, 100 + 3 * b) == spearman(a, b)


def test_average_ranks_tie_policy():
    assert np.array_equal(average_ranks([10.0, 20.0, 20.0, 30.0]),
                          [1.0, 2.5, 2.5, 4.0])


# ---------------------------------------------------------------------------
# evaluate_method
# ---------------------------------------------------------------------------

def _synthetic_benchmark(rng, n_items=6, dim=5):
    """Human ratings generated from cosines to a planted vector: the method
    that returns the planted vector scores a perfect mean rho."""
    words = [f"p{i}" for i in range(8)]
    table = EmbeddingTable(
        dim=dim,
        vectors={w: rng.normal(size=dim).astype(np.float32) for w in words},
    )
    items, planted = [], {}
    for i in range(n_items):
        pw = f"nonce{i}"
        vec = rng.normal(size=dim)
        planted[pw] = vec
        human = [cosine_np(vec, table.vectors[w].astype(np.float64))
                 for w in words]
        items.append(EvalItem(
            pseudo_word=pw,
            contexts=[f"the {pw} is here", f"we saw a {pw} today"],
            probes=list(words),
            human=human,
            shot=2 if i % 2 == 0 else 4,
        ))
    return items, table, planted


def test_evaluate_method_planted_perfection(rng):
    items, table, planted = _synthetic_benchmark(rng)
    report = evaluate_method(items, lambda w, ctxs: planted[w], table,
                             method="oracle-stub")
    assert report.failed == 0
    for shot, rho in report.mean_by_shot.items():
        assert rho == pytest.approx(1.0, abs=1e-12)


def test_evaluate_method_per_item_rho_recomputable(rng):
    items, table, planted = _synthetic_benchmark(rng)

    def fuzzy(w, ctxs):
        return planted[w] + 0.5 * np.sin(np.arange(len(planted[w])))

    report = evaluate_method(items, fuzzy, table, method="fuzzy")
    for item, res in zip(items, report.items):
        vec = fuzzy(item.pseudo_word, None)
        machine = [cosine_np(vec, table.vectors[p].astype(np.float64))
                   for p in item.probes]
        assert res.rho == pytest.approx(spearman(machine, item.human), abs=1e-15)


def test_evaluate_method_drops_missing_probes_and_counts(rng):
    items, table, planted = _synthetic_benchmark(rng, n_items=2)
    items[0].probes[0] = "notintable"
    report = evaluate_method(items, lambda w, ctxs: planted[w], table)
    assert report.dropped_probes == 1
    assert report.items[0].dropped_probes == 1
    assert not report.items[0].failed


def test_evaluate_method_records_failures_without_dying(rng):
    items, table, planted = _synthetic_benchmark(rng, n_items=4)

    def flaky(w, ctxs):
        if w == "nonce1":
            raise RuntimeError("boom")
        return planted[w]

    report = evaluate_method(items, flaky, table)
    assert report.failed == 1
    failed = [r for r in report.items if r.failed]
    assert failed[0].pseudo_word == "nonce1"
    scored = [r.rho for r in report.items if not r.failed]
    assert all(r == pytest.approx(1.0, abs=1e-12) for r in scored)


def test_mask_contexts_replaces_target():
    out = mask_contexts("nonce", ["The nonce appeared.", "a nonce, again"])
    from oov_forge.episode import MASK_TOKEN
    assert out[0] == ["the", MASK_TOKEN, "appeared"]
    assert out[1] == ["a", MASK_TOKEN, "again"]


# ---------------------------------------------------------------------------
# nearest neighbors
# ---------------------------------------------------------------------------

def test_nearest_neighbors_excludes_query_word(rng):
    table = EmbeddingTable(dim=3, vectors={
        "a": np.array([1.0, 0.0, 0.0], dtype=np.float32),
        "b": np.array([0.9, 0.1, 0.0], dtype=np.float32),
        "c": np.array([0.0, 1.0, 0.0], dtype=np.float32),
    })
    got = nearest_neighbors(table.vectors["a"].astype(np.float64), table, 2,
                            exclude=("a",))
    assert [w for w, _ in got] == ["b", "c"]


def test_nearest_neighbors_tie_breaks_lexicographically():
    table = EmbeddingTable(dim=3, vectors={
        "zeta": np.array([0.0, 1.0, 0.0], dtype=np.float32),
        "alpha": np.array([0.0, 0.0, 1.0], dtype=np.float32),
        "query": np.array([1.0, 0.0, 0.0], dtype=np.float32),
    })
    got = nearest_neighbors(np.array([1.0, 0.0, 0.0]), table, 3, exclude=("query",))
    assert [w for w, _ in got] == ["alpha", "zeta"]  # cosine ties at 0


def test_nearest_neighbors_matches_full_scan(rng):
    words = [f"w{i}" for i in range(40)]
    table = EmbeddingTable(
        dim=6, vectors={w: rng.normal(size=6).astype(np.float32) for w in words})
    q = rng.normal(size=6)
    got = nearest_neighbors(q, table, 7)
    brute = sorted(
        ((w, cosine_np(q, v.astype(np.float64))) for w, v in table.vectors.items()),
        key=lambda wc: (-wc[1], wc[0]))[:7]
    assert [w for w, _ in got] == [w for w, _ in brute]
    with pytest.raises(EvaluationError):
        nearest_neighbors(q, table, 0)


# ---------------------------------------------------------------------------
# benchmark files
# ---------------------------------------------------------------------------

def test_benchmark_tsv_roundtrip(tmp_path, rng):
    items, _, _ = _synthetic_benchmark(rng, n_items=3)
    path = tmp_path / "bench.tsv"
    save_benchmark_tsv(items, path)
    loaded = load_benchmark_tsv(path)
    assert len(loaded) == 3
    for a, b in zip(items, loaded):
        assert a.pseudo_word == b.pseudo_word
        assert a.contexts == b.contexts
        assert a.probes == b.probes
        assert a.human == b.human
        assert a.shot == b.shot


def test_benchmark_tsv_malformed_reports_line(tmp_path):
    path = tmp_path / "bench.tsv"
    path.write_text("word\t2\tctx with word\tp1,p2\n")  # only 4 fields
    with pytest.raises(FormatError, match="line 1"):
        load_benchmark_tsv(path)
    path.write_text("word\t2\tword here\tp1,p2\tx,y\n")
    with pytest.raises(FormatError, match="line 1"):
        load_benchmark_tsv(path)


def test_benchmark_item_context_must_contain_word(tmp_path):
    path = tmp_path / "bench.tsv"
    path.write_text("word\t2\tnothing relevant\tp1,p2\t1.0,2.0\n")
    with pytest.raises(FormatError):
        load_benchmark_tsv(path)


def test_import_chimera_normalizes(tmp_path):
    raw = ("VEHICLE_x\tWe saw the ___ parked. @@ A ___ drove by!\t"
           "car, bus\t3.5,2.0\n")
    path = tmp_path / "raw.txt"
    path.write_text(raw)
    items = import_chimera(path, shot=2)
    assert len(items) == 1
    item = items[0]
    assert item.pseudo_word == "vehicle_x"
    assert len(item.contexts) == 2
    assert all("vehicle_x" in c for c in item.contexts)
    assert item.probes == ["car", "bus"]
    assert item.human == [3.5, 2.0]
    assert item.shot == 2
