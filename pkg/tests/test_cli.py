import numpy as np
import pytest

import synthetic_task
from oov_forge.baselines import ngram_fit
from oov_forge.cli import main
from oov_forge.corpus import EmbeddingTable, load_embeddings, save_embeddings
from oov_forge.evaluation import EvalItem, cosine_np, save_benchmark_tsv
from oov_forge.training import load_checkpoint, load_checkpoint_config

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


# ---------------------------------------------------------------------------
# fixtures: a small on-disk task
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    vocab, store, table, oracle, _ = synthetic_task.planted_task(
        n_topics=6, words_per_topic=8, n_sentences=900, dim=8, seed=11,
        min_count=4)
    (root / "corpus.txt").write_text(synthetic_task.corpus_text(store))
    save_embeddings(oracle, root / "embeddings.txt")
    return root


@pytest.fixture(scope="module")
def prepared(workdir):
    out = workdir / "prep"
    code = main(["prepare", str(workdir / "corpus.txt"),
                 str(workdir / "embeddings.txt"), str(out),
                 "--min-count", "4"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(workdir, prepared):
    out = workdir / "model.hice"
    code = main(["train", str(prepared), "--steps", "60", "--seed", "5",
                 "--batch", "8", "--val-every", "20", "--k-max", "4",
                 "--heads", "2", "--out", str(out)])
    assert code == 0
    return out


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------

def test_prepare_is_byte_identical_on_rerun(workdir, prepared, capsys):
    first = {p.name: p.read_bytes() for p in prepared.iterdir()}
    assert main(["prepare", str(workdir / "corpus.txt"),
                 str(workdir / "embeddings.txt"), str(prepared),
                 "--min-count", "4"]) == 0
    second = {p.name: p.read_bytes() for p in prepared.iterdir()}
    assert first == second
    out = capsys.readouterr().out
    assert "vocabulary:" in out and "split:" in out


def test_prepare_empty_corpus_exits_2(workdir, tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("\n\n")
    code = main(["prepare", str(empty), str(workdir / "embeddings.txt"),
                 str(tmp_path / "out")])
    assert code == 2


def test_prepare_unreadable_embeddings_exits_2(workdir, tmp_path):
    code = main(["prepare", str(workdir / "corpus.txt"),
                 str(tmp_path / "missing.txt"), str(tmp_path / "out")])
    assert code == 2


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_train_zero_steps_makes_valid_checkpoint(prepared, tmp_path, capsys):
    out = tmp_path / "untrained.hice"
    code = main(["train", str(prepared), "--steps", "0", "--out", str(out)])
    assert code == 0
    model = load_checkpoint(out)
    assert model.config.embed_dim == 8
    assert "best validation cosine" in capsys.readouterr().out


def test_train_replay_identical_reports(prepared, tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"{tag}.hice"
        assert main(["train", str(prepared), "--steps", "30", "--seed", "9",
                     "--batch", "4", "--val-every", "10", "--heads", "2",
                     "--out", str(out)]) == 0
        outs.append((out.read_bytes(), (tmp_path / f"{tag}.hice.csv").read_bytes()))
    assert outs[0][1] == outs[1][1]


def test_train_no_morph_flag_recorded(prepared, tmp_path):
    out = tmp_path / "nomorph.hice"
    assert main(["train", str(prepared), "--steps", "0", "--no-morph",
                 "--out", str(out)]) == 0
    config = load_checkpoint_config(out)
    assert config["use_morph"] == "false"
    model = load_checkpoint(out)
    assert model.config.use_morph is False


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------

def test_infer_additive_single_word_context(workdir, tmp_path, capsys):
    table = load_embeddings(workdir / "embeddings.txt")
    known = next(iter(table.vectors))
    ctx = tmp_path / "ctx.txt"
    ctx.write_text(f"{known} newword\n")
    code = main(["infer", "--word", "newword", "--contexts-file", str(ctx),
                 "--method", "additive", "--embeddings",
                 str(workdir / "embeddings.txt")])
    assert code == 0
    line = capsys.readouterr().out.strip().splitlines()[0]
    parts = line.split()
    assert parts[0] == "newword"
    vec = np.array([float(x) for x in parts[1:]])
    assert np.allclose(vec, table.vectors[known].astype(np.float64))


def test_infer_output_parses_as_embedding_row(workdir, checkpoint, tmp_path, capsys):
    ctx = tmp_path / "ctx.txt"
    ctx.write_text("t00w00 flurble t00w01 t00w02\nt00w03 flurble t00w04\n")
    code = main(["infer", "--word", "flurble", "--contexts-file", str(ctx),
                 "--method", "hice", "--checkpoint", str(checkpoint)])
    assert code == 0
    line = capsys.readouterr().out.strip().splitlines()[0]
    emb = tmp_path / "row.txt"
    emb.write_text(f"1 8\n{line}\n")
    parsed = load_embeddings(emb)  # the row format round-trips
    assert "flurble" in parsed


def test_infer_word_missing_from_contexts_exits_5(workdir, tmp_path):
    ctx = tmp_path / "ctx.txt"
    ctx.write_text("nothing here\n")
    code = main(["infer", "--word", "absent", "--contexts-file", str(ctx),
                 "--method", "additive", "--embeddings",
                 str(workdir / "embeddings.txt")])
    assert code == 5


def test_infer_neighbors_listing(workdir, tmp_path, capsys):
    table = load_embeddings(workdir / "embeddings.txt")
    known = sorted(table.vectors)[0]
    ctx = tmp_path / "ctx.txt"
    ctx.write_text(f"{known} target\n")
    code = main(["infer", "--word", "target", "--contexts-file", str(ctx),
                 "--method", "additive", "--embeddings",
                 str(workdir / "embeddings.txt"), "--neighbors", "3"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    neighbor_lines = [l for l in lines if l.startswith("# ")]
    assert len(neighbor_lines) == 3
    assert neighbor_lines[0].split()[1] == known  # its own vector is nearest


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def benchmark(workdir):
    """Pseudo-words are table rows, human ratings are cosine-generated, so
    the oracle method must score a perfect correlation."""
    table = load_embeddings(workdir / "embeddings.txt")
    words = sorted(table.vectors)
    probes = words[::8][:6]  # one per topic: distinct oracle vectors
    items = []
    for i, pw in enumerate(words[10:14]):
        human = [cosine_np(table.vectors[pw].astype(np.float64),
                           table.vectors[p].astype(np.float64)) for p in probes]
        fill = words[20 + 4 * i: 24 + 4 * i]
        items.append(EvalItem(
            pseudo_word=pw,
            contexts=[f"{fill[0]} {pw} {fill[1]} here",
                      f"{fill[2]} and {fill[3]} near the {pw}"],
            probes=list(probes),
            human=human,
            shot=2 if i % 2 == 0 else 4,
        ))
    path = workdir / "bench.tsv"
    save_benchmark_tsv(items, path)
    return path


def test_eval_oracle_method_scores_one(workdir, benchmark, tmp_path, capsys):
    out = tmp_path / "rep"
    code = main(["eval", str(benchmark), "--embeddings",
                 str(workdir / "embeddings.txt"), "--methods", "oracle",
                 "--out-dir", str(out)])
    assert code == 0
    rows = [l for l in (out / "eval_summary.csv").read_text().splitlines()
            if l and not l.startswith("#") and not l.startswith("method,")]
    for row in rows:
        method, shot, mean_rho = row.split(",")[:3]
        assert method == "oracle"
        assert float(mean_rho) == pytest.approx(1.0, abs=1e-12)


def test_eval_emits_row_per_method_per_shot_and_recomputes(
        workdir, prepared, benchmark, tmp_path):
    out = tmp_path / "rep"
    code = main(["eval", str(benchmark), "--embeddings",
                 str(workdir / "embeddings.txt"),
                 "--methods", "additive,additive-ns,alacarte",
                 "--prepared-dir", str(prepared), "--fit-samples", "40",
                 "--svg", str(tmp_path / "chart.svg"),
                 "--out-dir", str(out)])
    assert code == 0
    summary = [l for l in (out / "eval_summary.csv").read_text().splitlines()
               if l and not l.startswith("#")][1:]
    assert len(summary) == 6  # 3 methods x 2 shots
    items = [l for l in (out / "eval_items.csv").read_text().splitlines()
             if l and not l.startswith("#")][1:]
    # summary means equal recomputation from the per-item dump
    from collections import defaultdict
    per = defaultdict(list)
    for line in items:
        method, shot, word, rho, failed = line.split(",")
        if failed == "0":
            per[(method, int(shot))].append(float(rho))
    for line in summary:
        method, shot, mean_rho = line.split(",")[:3]
        assert float(mean_rho) == pytest.approx(
            np.mean(per[(method, int(shot))]), abs=1e-12)
    svg = (tmp_path / "chart.svg").read_text()
    assert "<svg" in svg and "additive" in svg
    assert "command=eval" in svg  # provenance comment embedded


def test_eval_additive_on_planted_perfect_benchmark(workdir, tmp_path, capsys):
    """Ratings generated from the additive estimate itself: the additive
    method must score a perfect mean correlation."""
    from oov_forge.baselines import additive as additive_fn
    from oov_forge.evaluation import mask_contexts
    table = load_embeddings(workdir / "embeddings.txt")
    words = sorted(table.vectors)
    probes = words[::8][:6]
    items = []
    for i, pw in enumerate(["blick", "wug", "florp"]):
        raw = [f"{words[30 + 3 * i]} {pw} {words[31 + 3 * i]}",
               f"{words[32 + 3 * i]} with the {pw}"]
        est = additive_fn(mask_contexts(pw, raw), table).vector
        human = [cosine_np(est, table.vectors[p].astype(np.float64))
                 for p in probes]
        items.append(EvalItem(pw, raw, list(probes), human, 2))
    bench = tmp_path / "planted.tsv"
    save_benchmark_tsv(items, bench)
    out = tmp_path / "rep"
    assert main(["eval", str(bench), "--embeddings",
                 str(workdir / "embeddings.txt"), "--methods", "additive",
                 "--out-dir", str(out)]) == 0
    capsys.readouterr()
    rows = [l for l in (out / "eval_summary.csv").read_text().splitlines()
            if l and not l.startswith("#")][1:]
    assert len(rows) == 1
    assert float(rows[0].split(",")[2]) == pytest.approx(1.0, abs=1e-12)


def test_eval_malformed_tsv_exits_6(workdir, tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("only\ttwo\n")
    code = main(["eval", str(bad), "--embeddings",
                 str(workdir / "embeddings.txt"), "--methods", "additive"])
    assert code == 6


def test_eval_hice_runs(workdir, benchmark, checkpoint, tmp_path):
    out = tmp_path / "rep"
    code = main(["eval", str(benchmark), "--embeddings",
                 str(workdir / "embeddings.txt"), "--methods", "hice,additive",
                 "--checkpoint", str(checkpoint), "--out-dir", str(out)])
    assert code == 0
    text = (out / "eval_summary.csv").read_text()
    assert "hice," in text and "additive," in text


# ---------------------------------------------------------------------------
# adapt
# ---------------------------------------------------------------------------

def test_adapt_zero_steps_keeps_params(workdir, prepared, checkpoint, tmp_path):
    out = tmp_path / "adapted.hice"
    code = main(["adapt", str(checkpoint), str(workdir / "corpus.txt"),
                 "--source-dir", str(prepared), "--steps", "0",
                 "--min-count", "4", "--out", str(out)])
    assert code == 0
    before = load_checkpoint(checkpoint)
    after = load_checkpoint(out)
    for (_, a), (_, b) in zip(before.parameters(), after.parameters()):
        assert np.array_equal(a.data, b.data)
    config = load_checkpoint_config(out)
    assert config["adapted"] == "true"


def test_adapt_alpha_zero_equals_finetune_mode(workdir, prepared, checkpoint, tmp_path):
    out_a = tmp_path / "a.hice"
    out_b = tmp_path / "b.hice"
    common = [str(checkpoint), str(workdir / "corpus.txt"),
              "--source-dir", str(prepared), "--steps", "3", "--seed", "4",
              "--beta", "1e-3", "--min-count", "4"]
    assert main(["adapt", *common, "--alpha", "0", "--out", str(out_a)]) == 0
    assert main(["adapt", *common, "--finetune", "--out", str(out_b)]) == 0
    a = load_checkpoint(out_a)
    b = load_checkpoint(out_b)
    for (_, pa), (_, pb) in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.data, pb.data)


def test_adapt_no_eligible_words_exits_4(workdir, prepared, checkpoint, tmp_path):
    alien = tmp_path / "alien.txt"
    alien.write_text("zzz yyy xxx\nzzz yyy\n")
    code = main(["adapt", str(checkpoint), str(alien),
                 "--source-dir", str(prepared), "--steps", "1"])
    assert code == 4


def test_adapt_replay_determinism(workdir, prepared, checkpoint, tmp_path):
    blobs = []
    for tag in ("r1", "r2"):
        out = tmp_path / f"{tag}.hice"
        assert main(["adapt", str(checkpoint), str(workdir / "corpus.txt"),
                     "--source-dir", str(prepared), "--steps", "2",
                     "--seed", "7", "--min-count", "4", "--out", str(out)]) == 0
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1]


# ---------------------------------------------------------------------------
# neighbors
# ---------------------------------------------------------------------------

def test_neighbors_command(workdir, capsys):
    table = load_embeddings(workdir / "embeddings.txt")
    word = sorted(table.vectors)[0]
    code = main(["neighbors", "--embeddings", str(workdir / "embeddings.txt"),
                 "--word", word, "--top", "4"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4
    assert all("\t" in l for l in lines)
    assert word not in [l.split("\t")[0] for l in lines]


def test_neighbors_unknown_word_exits_5(workdir):
    code = main(["neighbors", "--embeddings", str(workdir / "embeddings.txt"),
                 "--word", "notaword"])
    assert code == 5


def test_env_seed_applies_when_flag_absent(prepared, tmp_path, monkeypatch):
    out_env = tmp_path / "env.hice"
    monkeypatch.setenv("OOVFORGE_SEED", "9")
    assert main(["train", str(prepared), "--steps", "10", "--batch", "4",
                 "--val-every", "10", "--heads", "2", "--out", str(out_env)]) == 0
    monkeypatch.delenv("OOVFORGE_SEED")
    out_flag = tmp_path / "flag.hice"
    assert main(["train", str(prepared), "--steps", "10", "--seed", "9",
                 "--batch", "4", "--val-every", "10", "--heads", "2",
                 "--out", str(out_flag)]) == 0
    a = load_checkpoint(out_env)
    b = load_checkpoint(out_flag)
    for (_, pa), (_, pb) in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.data, pb.data)


def test_config_file_is_overridden_by_flags(prepared, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("steps = 10\nseed = 9\n# a comment\n")
    out_a = tmp_path / "a.hice"
    assert main(["train", str(prepared), "--config", str(cfg), "--batch", "4",
                 "--val-every", "10", "--heads", "2", "--out", str(out_a)]) == 0
    out_b = tmp_path / "b.hice"
    assert main(["train", str(prepared), "--config", str(cfg), "--seed", "3",
                 "--batch", "4", "--val-every", "10", "--heads", "2",
                 "--steps", "10", "--out", str(out_b)]) == 0
    a = load_checkpoint(out_a)   # seed 9 from file
    b = load_checkpoint(out_b)   # seed 3 from flag wins
    same = all(np.array_equal(pa.data, pb.data)
               for (_, pa), (_, pb) in zip(a.parameters(), b.parameters()))
    assert not same


# ---------------------------------------------------------------------------
# qualitative fixture: context semantics vs character look-alikes
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def scooter_setup(tmp_path_factory):
    """A vehicle topic and a look-alike family placed far away: contexts say
    'vehicle', characters say 'cooter'."""
    root = tmp_path_factory.mktemp("scooter")
    rng = np.random.default_rng(21)
    trained_topics = {
        "vehicle": ["car", "bmw", "vehicles", "ride", "road", "wheels",
                    "motor", "bike"],
        "music": ["piano", "violin", "band", "song", "tune", "drum",
                  "cello", "organ"],
    }
    # the look-alike family lives only in the table: the model never trains
    # on it, but n-gram sums land there because of shared characters
    lookalikes = ["cooter", "pooter", "footer", "looter", "rooter",
                  "scoot", "cooters", "tooter"]
    dim = 8
    centers = {t: rng.normal(size=dim) * 2.0
               for t in (*trained_topics, "lookalike")}
    table = EmbeddingTable(dim=dim)
    for t, words in trained_topics.items():
        for w in words:
            table.vectors[w] = (centers[t] + 0.15 * rng.normal(size=dim)
                                ).astype(np.float32)
    for w in lookalikes:
        table.vectors[w] = (centers["lookalike"] + 0.15 * rng.normal(size=dim)
                            ).astype(np.float32)
    sentences = []
    for _ in range(500):
        t = list(trained_topics)[int(rng.integers(len(trained_topics)))]
        words = trained_topics[t]
        length = int(rng.integers(4, 8))
        sentences.append(" ".join(words[int(rng.integers(len(words)))]
                                  for _ in range(length)))
    (root / "corpus.txt").write_text("\n".join(sentences) + "\n")
    save_embeddings(table, root / "embeddings.txt")
    ngrams = ngram_fit(list(table.vectors), table, ridge=1e-4)
    ngrams.save(root / "grams.ngr")
    return root


def test_scooter_contexts_beat_character_lookalikes(scooter_setup, capsys):
    root = scooter_setup
    assert main(["prepare", str(root / "corpus.txt"),
                 str(root / "embeddings.txt"), str(root / "prep"),
                 "--min-count", "2"]) == 0
    assert main(["train", str(root / "prep"), "--steps", "150", "--seed", "3",
                 "--batch", "8", "--val-every", "50", "--k-max", "4",
                 "--heads", "2", "--out", str(root / "model.hice")]) == 0
    capsys.readouterr()

    ctx = root / "ctx.txt"
    ctx.write_text(
        "we all need vehicles like bmw c1 scooter that allow more social "
        "interaction while using them\n"
        "the scooter is a ride with wheels on the road\n")

    assert main(["infer", "--word", "scooter", "--contexts-file", str(ctx),
                 "--method", "hice", "--checkpoint", str(root / "model.hice"),
                 "--neighbors", "5"]) == 0
    hice_out = capsys.readouterr().out.strip().splitlines()
    hice_top = {l.split()[1] for l in hice_out if l.startswith("# ")}

    assert main(["infer", "--word", "scooter", "--contexts-file", str(ctx),
                 "--method", "ngram", "--checkpoint", str(root / "grams.ngr"),
                 "--embeddings", str(root / "embeddings.txt"),
                 "--neighbors", "5"]) == 0
    ngram_out = capsys.readouterr().out.strip().splitlines()
    ngram_top = {l.split()[1] for l in ngram_out if l.startswith("# ")}

    assert len(hice_top) == 5 and len(ngram_top) == 5
    assert not hice_top & ngram_top  # context semantics vs look-alikes
    vehicle = {"car", "bmw", "vehicles", "ride", "road", "wheels", "motor", "bike"}
    assert hice_top <= vehicle
