"""Command-line front end.

    oov-forge prepare   <corpus> <embeddings> <out_dir> [--min-count N]
    oov-forge train     <prepared_dir> [--steps N --k-max K --seed S --no-morph --out PATH]
    oov-forge adapt     <checkpoint> <target_corpus> --source-dir DIR [...]
    oov-forge infer     --checkpoint PATH --word W --contexts-file PATH --method M
    oov-forge eval      <benchmark_tsv> --embeddings PATH --methods a,b,c [...]
    oov-forge neighbors --embeddings PATH --word W [--top N]

Exit codes: 0 success, 2 ingestion, 3 training, 4 adaptation, 5 inference,
6 evaluation, 1 unexpected fault. Flags override config-file values, which
override defaults; OOVFORGE_SEED seeds every RNG when no --seed is given.
Every artifact written embeds the options that produced it.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import baselines
from .adaptation import AdaptConfig, adapt, finetune
from .corpus import (DEFAULT_MIN_COUNT, DEFAULT_TOKENIZER, EmbeddingTable,
                     SentenceStore, Vocabulary, contexts_of,
                     format_vector, load_embeddings, read_sentences,
                     split_words)
from .episode import (MASK_TOKEN, decode_context, episode_from_masked,
                      sample_episode)
from .errors import (AdaptationError, EvaluationError, FormatError,
                     InferenceError, IngestionError, OovForgeError,
                     TrainingError)
from .evaluation import (evaluate_method, load_benchmark_tsv,
                         nearest_neighbors)
from .model import HiceConfig
from .training import (TrainConfig, load_checkpoint, save_checkpoint,
                       train)

ENV_SEED = "OOVFORGE_SEED"


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def load_config_file(path) -> dict[str, str]:
    """Line-oriented 'key = value' config; '#' starts a comment."""
    out = {}
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as e:
        raise IngestionError(f"cannot read config {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise IngestionError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = body.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_config_file(path, config: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(config):
            fh.write(f"{key} = {config[key]}\n")


def effective(args, name: str, default, cast=str):
    """Flag > config file > environment (seed only) > default."""
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    file_cfg = getattr(args, "_file_config", {})
    if name in file_cfg:
        return cast(file_cfg[name])
    if name == "seed" and os.environ.get(ENV_SEED):
        return cast(os.environ[ENV_SEED])
    return default


def run_config_dict(command: str, args, pairs: dict) -> dict[str, str]:
    cfg = {"command": command}
    for key, value in pairs.items():
        cfg[key] = str(value)
    return cfg


# ---------------------------------------------------------------------------
# prepared-directory artifacts
# ---------------------------------------------------------------------------

VOCAB_FILE = "vocab.tsv"
SENTENCES_FILE = "sentences.txt"
SPLIT_FILE = "split.txt"
RUN_CONFIG_FILE = "run_config.txt"


def write_prepared(out_dir: Path, vocab: Vocabulary, store: SentenceStore,
                   run_cfg: dict[str, str]) -> tuple[list[str], list[str]]:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / VOCAB_FILE, "w", encoding="utf-8") as fh:
        for i, word in enumerate(vocab.words):
            fh.write(f"{word}\t{vocab.counts[i]}\t{int(vocab.stop_flags[i])}\t"
                     f"{int(vocab.counts[i] > vocab.min_count)}\n")
    with open(out_dir / SENTENCES_FILE, "w", encoding="utf-8") as fh:
        for sent in store.sentences:
            fh.write(" ".join(str(t) for t in sent) + "\n")
    train_words, val_words = split_words(vocab.eligible_words())
    with open(out_dir / SPLIT_FILE, "w", encoding="utf-8") as fh:
        for w in sorted(train_words):
            fh.write(f"{w}\ttrain\n")
        for w in sorted(val_words):
            fh.write(f"{w}\tval\n")
    write_config_file(out_dir / RUN_CONFIG_FILE, run_cfg)
    return train_words, val_words


def load_prepared(prepared_dir) -> tuple[Vocabulary, SentenceStore, dict[str, str]]:
    prepared_dir = Path(prepared_dir)
    run_cfg = load_config_file(prepared_dir / RUN_CONFIG_FILE)
    min_count = int(run_cfg.get("min_count", DEFAULT_MIN_COUNT))
    words, counts, stops = [], [], []
    try:
        vocab_lines = open(prepared_dir / VOCAB_FILE, encoding="utf-8").read().splitlines()
    except OSError as e:
        raise IngestionError(f"cannot read prepared vocabulary: {e}") from e
    for lineno, line in enumerate(vocab_lines, start=1):
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"{VOCAB_FILE}: line {lineno}: expected 4 fields")
        words.append(parts[0])
        counts.append(int(parts[1]))
        stops.append(parts[2] == "1")
    vocab = Vocabulary(words, counts, stops, min_count)
    sentences = []
    for line in open(prepared_dir / SENTENCES_FILE, encoding="utf-8").read().splitlines():
        sentences.append([int(t) for t in line.split()] if line else [])
    index: dict[int, list[int]] = {}
    for sid, sent in enumerate(sentences):
        for wid in dict.fromkeys(sent):
            index.setdefault(wid, []).append(sid)
    return vocab, SentenceStore(sentences, index, vocab), run_cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    min_count = effective(args, "min_count", DEFAULT_MIN_COUNT, int)
    config = DEFAULT_TOKENIZER
    sentences = read_sentences(args.corpus, config)
    if not any(sentences):
        raise IngestionError("empty corpus")
    from .corpus import build_vocab
    vocab = build_vocab(sentences, min_count)
    store = SentenceStore.from_tokens(sentences, vocab)
    load_embeddings(args.embeddings)  # validate now, record the path
    run_cfg = run_config_dict("prepare", args, {
        "corpus": args.corpus,
        "embeddings": args.embeddings,
        "min_count": min_count,
        **{f"tokenizer.{k}": v for k, v in config.as_dict().items()},
    })
    train_words, val_words = write_prepared(Path(args.out_dir), vocab, store, run_cfg)
    print(f"vocabulary: {len(vocab)} words")
    print(f"sentences: {len(store)}")
    print(f"target-eligible (count > {min_count}): {len(vocab.eligible_words())}")
    print(f"split: {len(train_words)} train / {len(val_words)} val")
    return 0


def cmd_train(args) -> int:
    vocab, store, run_cfg = load_prepared(args.prepared_dir)
    emb_path = args.embeddings or run_cfg.get("embeddings")
    if not emb_path:
        raise IngestionError("no embeddings path: pass --embeddings or re-run prepare")
    table = load_embeddings(emb_path)
    seed = effective(args, "seed", 0, int)
    steps = effective(args, "steps", 2000, int)
    k_max = effective(args, "k_max", 6, int)
    tc = TrainConfig(
        steps=steps,
        batch_episodes=effective(args, "batch", 32, int),
        learning_rate=effective(args, "lr", 1e-3, float),
        k_max=k_max,
        seed=seed,
        validation_every=effective(args, "val_every", 100, int),
        patience=effective(args, "patience", 5, int),
    )
    mc = HiceConfig(
        embed_dim=table.dim,
        n_heads=effective(args, "heads", 4, int),
        use_morph=not args.no_morph,
        seed=seed,
    )
    model, report = train(tc, vocab, store, table, model_config=mc)
    out = Path(args.out or (Path(args.prepared_dir) / "model.hice"))
    extra = run_config_dict("train", args, {
        "prepared_dir": args.prepared_dir,
        "embeddings": emb_path,
        "steps": steps, "k_max": k_max, "seed": seed,
        "no_morph": args.no_morph,
        "best_val": repr(report.best_val),
        "best_step": report.best_step,
    })
    save_checkpoint(model, out, extra_config={f"run.{k}": v for k, v in extra.items()})
    csv_path = Path(args.report or (str(out) + ".csv"))
    with open(csv_path, "w", encoding="utf-8") as fh:
        for k in sorted(extra):
            fh.write(f"# {k} = {extra[k]}\n")
        fh.write(report.to_csv())
    print(f"checkpoint: {out}")
    print(f"report: {csv_path}")
    print(f"best validation cosine: {report.best_val:.6f} at step {report.best_step}")
    return 0


def cmd_adapt(args) -> int:
    if not args.source_dir:
        raise IngestionError("--source-dir with prepared source artifacts is required")
    vocab_t, store_t, run_cfg = load_prepared(args.source_dir)
    emb_path = args.embeddings or run_cfg.get("embeddings")
    if not emb_path:
        raise IngestionError("no embeddings path: pass --embeddings")
    table = load_embeddings(emb_path)
    model = load_checkpoint(args.checkpoint)
    sentences_n = read_sentences(args.target_corpus)
    if not any(sentences_n):
        raise IngestionError("empty target corpus")
    from .corpus import build_vocab
    vocab_n = build_vocab(sentences_n, min_count=1)
    store_n = SentenceStore.from_tokens(sentences_n, vocab_n)
    cfg = AdaptConfig(
        alpha=effective(args, "alpha", 1e-3, float),
        beta=effective(args, "beta", 1e-4, float),
        first_order=args.first_order,
        adapt_steps=effective(args, "steps", 500, int),
        target_min_count=effective(args, "min_count", 4, int),
        seed=effective(args, "seed", 0, int),
    )
    model.bind_vocab(vocab_t)
    if args.finetune:
        finetune(model, cfg, (vocab_n, store_n, table))
    else:
        adapt(model, cfg, (vocab_t, store_t, table), (vocab_n, store_n, table))
    out = Path(args.out or (args.checkpoint + ".adapted"))
    extra = run_config_dict("adapt", args, {
        "checkpoint": args.checkpoint,
        "target_corpus": args.target_corpus,
        "alpha": cfg.alpha, "beta": cfg.beta,
        "first_order": cfg.first_order, "steps": cfg.adapt_steps,
        "seed": cfg.seed, "mode": "finetune" if args.finetune else "maml",
    })
    save_checkpoint(model, out, extra_config={
        "adapted": "true", "adapted_from": str(args.target_corpus),
        **{f"run.{k}": v for k, v in extra.items()},
    })
    print(f"adapted checkpoint: {out}")
    return 0


def _load_contexts(args, word: str) -> list[list[str]]:
    sentences = read_sentences(args.contexts_file)
    containing = [s for s in sentences if word in s]
    if not containing:
        raise InferenceError(
            f"{word!r} does not occur in any sentence of {args.contexts_file}"
        )
    return [[MASK_TOKEN if t == word else t for t in s] for s in containing]


def _infer_vector(args, word: str, masked: list[list[str]]) -> tuple[np.ndarray, EmbeddingTable | None]:
    """-> (vector, a table usable for neighbor lookups)."""
    method = args.method
    table = load_embeddings(args.embeddings) if args.embeddings else None
    if method == "hice":
        if not args.checkpoint:
            raise InferenceError("method hice needs --checkpoint")
        model = load_checkpoint(args.checkpoint)
        ep, vocab = episode_from_masked(word, masked,
                                        max_word_len=model.config.max_word_len,
                                        max_len=model.config.max_len)
        vec = model.predict_vector(ep, vocab)
        return vec, table or model.frozen_table()
    if method in ("additive", "additive-ns"):
        if table is None:
            raise InferenceError(f"method {method} needs --embeddings")
        res = baselines.additive(masked, table, drop_stopwords=method.endswith("ns"))
        if res.empty:
            raise InferenceError("no context token found in the embedding table")
        return res.vector, table
    if method == "alacarte":
        if table is None or not args.checkpoint:
            raise InferenceError("method alacarte needs --embeddings and --checkpoint")
        model = baselines.AlaCarteModel.load(args.checkpoint)
        return baselines.alacarte_infer(masked, model, table), table
    if method == "ngram":
        if not args.checkpoint:
            raise InferenceError("method ngram needs --checkpoint")
        ngrams = baselines.NgramTable.load(args.checkpoint)
        res = baselines.ngram_sum(word, ngrams)
        if res.empty:
            raise InferenceError(f"no known n-grams in {word!r}")
        return res.vector, table
    raise InferenceError(f"unknown method {args.method!r}")


def cmd_infer(args) -> int:
    word = args.word.lower()
    masked = _load_contexts(args, word)
    vec, table = _infer_vector(args, word, masked)
    print(f"{word} {format_vector(vec)}")
    if args.neighbors:
        if table is None:
            raise InferenceError("--neighbors needs --embeddings (or a hice checkpoint)")
        for nb_word, cos in nearest_neighbors(vec, table, args.neighbors,
                                              exclude=(word,)):
            print(f"# {nb_word} {cos:.6f}")
    return 0


def _fit_baselines(methods: list[str], args, table: EmbeddingTable):
    """Fit the corpus-dependent baselines on prepared training words."""
    fitted: dict[str, object] = {}
    need_fit = {m for m in methods if m in ("alacarte", "ngram")}
    if not need_fit:
        return fitted
    if args.alacarte_model and "alacarte" in need_fit:
        fitted["alacarte"] = baselines.AlaCarteModel.load(args.alacarte_model)
        need_fit.discard("alacarte")
    if args.ngram_model and "ngram" in need_fit:
        fitted["ngram"] = baselines.NgramTable.load(args.ngram_model)
        need_fit.discard("ngram")
    if not need_fit:
        return fitted
    if not args.prepared_dir:
        raise EvaluationError(
            f"methods {sorted(need_fit)} need --prepared-dir (to fit) or a "
            "--alacarte-model/--ngram-model file"
        )
    vocab, store, run_cfg = load_prepared(args.prepared_dir)
    from .episode import eligible_targets
    words = [w for w in eligible_targets(vocab, store, table)]
    words = words[: args.fit_samples]
    if "alacarte" in need_fit:
        rng = np.random.default_rng(effective(args, "seed", 0, int))
        pairs = []
        for w in words:
            ep = sample_episode(w, min(6, len(contexts_of(w, store))), rng, store, table)
            ctxs = [decode_context(ids, vocab) for ids in ep.contexts]
            base = baselines.additive(ctxs, table)
            if not base.empty:
                pairs.append((base.vector, table.vectors[w].astype(np.float64)))
        fitted["alacarte"] = baselines.alacarte_fit(pairs)
    if "ngram" in need_fit:
        fitted["ngram"] = baselines.ngram_fit(words, table)
    if args.save_fitted:
        out = Path(args.save_fitted)
        out.mkdir(parents=True, exist_ok=True)
        if "alacarte" in fitted:
            fitted["alacarte"].save(out / "alacarte.alc")
        if "ngram" in fitted:
            fitted["ngram"].save(out / "ngrams.ngr")
    return fitted


def _method_fn(method: str, table: EmbeddingTable, args, fitted):
    if method == "additive":
        return lambda w, ctxs: baselines.additive(ctxs, table).vector
    if method == "additive-ns":
        return lambda w, ctxs: baselines.additive(ctxs, table, drop_stopwords=True).vector
    if method == "alacarte":
        model = fitted["alacarte"]
        return lambda w, ctxs: baselines.alacarte_infer(ctxs, model, table)
    if method == "ngram":
        ngrams = fitted["ngram"]
        return lambda w, ctxs: baselines.ngram_sum(w, ngrams).vector
    if method == "oracle":
        return lambda w, ctxs: table.vectors[w].astype(np.float64)
    if method == "hice":
        if not args.checkpoint:
            raise EvaluationError("method hice needs --checkpoint")
        model = load_checkpoint(args.checkpoint)

        def fn(w, ctxs, model=model):
            ep, vocab = episode_from_masked(w, ctxs,
                                            max_word_len=model.config.max_word_len,
                                            max_len=model.config.max_len)
            return model.predict_vector(ep, vocab)

        return fn
    raise EvaluationError(f"unknown method {method!r}")


def cmd_eval(args) -> int:
    items = load_benchmark_tsv(args.benchmark)
    table = load_embeddings(args.embeddings)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise EvaluationError("no methods given")
    fitted = _fit_baselines(methods, args, table)
    reports = []
    for method in methods:
        fn = _method_fn(method, table, args, fitted)
        reports.append(evaluate_method(items, fn, table, method=method))
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    run_cfg = run_config_dict("eval", args, {
        "benchmark": args.benchmark, "embeddings": args.embeddings,
        "methods": ",".join(methods),
    })
    header = "".join(f"# {k} = {run_cfg[k]}\n" for k in sorted(run_cfg))
    summary_path = out_dir / "eval_summary.csv"
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(header)
        fh.write("method,shot,mean_rho,pooled_rho,items,failed\n")
        for rep in reports:
            for shot in sorted(rep.mean_by_shot):
                n = sum(1 for r in rep.items if r.shot == shot)
                failed = sum(1 for r in rep.items if r.shot == shot and r.failed)
                pooled = rep.pooled_by_shot.get(shot, float("nan"))
                fh.write(f"{rep.method},{shot},{rep.mean_by_shot[shot]!r},"
                         f"{pooled!r},{n},{failed}\n")
    items_path = out_dir / "eval_items.csv"
    with open(items_path, "w", encoding="utf-8") as fh:
        fh.write(header)
        fh.write("method,shot,pseudo_word,rho,failed\n")
        for rep in reports:
            for r in rep.items:
                rho = "" if r.rho is None else repr(r.rho)
                fh.write(f"{rep.method},{r.shot},{r.pseudo_word},{rho},{int(r.failed)}\n")
    print(render_text_table(reports))
    if args.svg:
        Path(args.svg).write_text(render_svg(reports, run_cfg), encoding="utf-8")
        print(f"chart: {args.svg}")
    print(f"summary: {summary_path}")
    print(f"per-item: {items_path}")
    return 0


def cmd_neighbors(args) -> int:
    table = load_embeddings(args.embeddings)
    if args.word:
        vec = table.get(args.word.lower())
        if vec is None:
            raise InferenceError(f"{args.word!r} not in the table")
        exclude = (args.word.lower(),)
    else:
        if not args.vector_file:
            raise InferenceError("pass --word or --vector-file")
        line = open(args.vector_file, encoding="utf-8").read().strip().splitlines()[-1]
        parts = line.split()
        vec = np.array([float(x) for x in parts[1:]])
        exclude = (parts[0],)
    for word, cos in nearest_neighbors(vec, table, args.top, exclude=exclude):
        print(f"{word}\t{cos:.6f}")
    return 0


# ---------------------------------------------------------------------------
# report rendering
# ---------------------------------------------------------------------------

def render_text_table(reports) -> str:
    shots = sorted({s for rep in reports for s in rep.mean_by_shot})
    headers = ["method"] + [f"{s}-shot" for s in shots]
    rows = [headers]
    for rep in reports:
        rows.append([rep.method] + [
            f"{rep.mean_by_shot[s]:.4f}" if s in rep.mean_by_shot else "-"
            for s in shots
        ])
    widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
    lines = []
    for r in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)))
    return "\n".join(lines)


def render_svg(reports, run_cfg: dict[str, str] | None = None) -> str:
    """A minimal grouped bar chart of mean rho per method and shot."""
    provenance = ""
    if run_cfg:
        body = " ".join(f"{k}={v}" for k, v in sorted(run_cfg.items()))
        provenance = f"<!-- {body.replace('--', '- -')} -->"
    shots = sorted({s for rep in reports for s in rep.mean_by_shot})
    bar_w, gap, group_gap, height, base = 22, 4, 30, 220, 200
    colors = ["#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c"]
    x = 40
    parts = []
    max_rho = max((max(rep.mean_by_shot.values(), default=0.0) for rep in reports),
                  default=1.0)
    scale = 160 / max(max_rho, 1e-9)
    for s_i, shot in enumerate(shots):
        for m_i, rep in enumerate(reports):
            rho = rep.mean_by_shot.get(shot)
            if rho is None:
                continue
            h = max(1.0, rho * scale)
            parts.append(
                f'<rect x="{x:.1f}" y="{base - h:.1f}" width="{bar_w}" '
                f'height="{h:.1f}" fill="{colors[m_i % len(colors)]}">'
                f'<title>{rep.method} {shot}-shot: {rho:.4f}</title></rect>'
            )
            x += bar_w + gap
        parts.append(
            f'<text x="{x - (bar_w + gap) * len(reports) / 2:.1f}" y="{base + 16}" '
            f'font-size="12" text-anchor="middle">{shot}-shot</text>'
        )
        x += group_gap
    legend = []
    for m_i, rep in enumerate(reports):
        legend.append(
            f'<rect x="40" y="{10 + 16 * m_i}" width="12" height="12" '
            f'fill="{colors[m_i % len(colors)]}"/>'
            f'<text x="58" y="{20 + 16 * m_i}" font-size="12">{rep.method}</text>'
        )
    width = max(x + 20, 300)
    return (
        provenance
        + f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + 30}">'
        + "".join(legend) + "".join(parts) + "</svg>\n"
    )


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oov-forge",
        description="Infer embeddings for out-of-vocabulary words from a few contexts.",
    )
    parser.add_argument(
        "--threads", type=int, default=1,
        help="worker cap; every code path here is single-threaded, so any "
             "value behaves like 1 and results are bit-deterministic")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="tokenize a corpus and build artifacts")
    p.add_argument("corpus")
    p.add_argument("embeddings")
    p.add_argument("out_dir")
    p.add_argument("--min-count", type=int, default=None,
                   help=f"target eligibility threshold (default {DEFAULT_MIN_COUNT})")
    p.add_argument("--config", default=None)

    p = sub.add_parser("train", help="train the context-encoder model")
    p.add_argument("prepared_dir")
    p.add_argument("--embeddings", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--val-every", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--no-morph", action="store_true",
                   help="zero out the morphology slot (ablation)")
    p.add_argument("--out", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("adapt", help="adapt a checkpoint to a new corpus")
    p.add_argument("checkpoint")
    p.add_argument("target_corpus")
    p.add_argument("--source-dir", default=None, required=False)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--first-order", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--finetune", action="store_true",
                   help="plain fine-tuning on the target corpus instead")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("infer", help="infer one word's vector from contexts")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--word", required=True)
    p.add_argument("--contexts-file", required=True)
    p.add_argument("--method", default="hice",
                   choices=["hice", "additive", "additive-ns", "alacarte", "ngram"])
    p.add_argument("--embeddings", default=None)
    p.add_argument("--neighbors", type=int, default=0)
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval", help="score methods on a benchmark TSV")
    p.add_argument("benchmark")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--methods", default="additive")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--prepared-dir", default=None)
    p.add_argument("--alacarte-model", default=None)
    p.add_argument("--ngram-model", default=None)
    p.add_argument("--fit-samples", type=int, default=500)
    p.add_argument("--save-fitted", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--svg", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("neighbors", help="nearest neighbors in a table")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--word", default=None)
    p.add_argument("--vector-file", default=None)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--config", default=None)

    return parser


_HANDLERS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "adapt": cmd_adapt,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "neighbors": cmd_neighbors,
}

_PRIMARY_CODE = {
    "prepare": 2,
    "train": 3,
    "adapt": 4,
    "infer": 5,
    "eval": 6,
    "neighbors": 5,
}


def _exit_code(command: str, err: OovForgeError) -> int:
    if command == "eval":
        return 6
    if isinstance(err, (IngestionError, FormatError)):
        return 2
    if isinstance(err, TrainingError):
        return 3
    if isinstance(err, AdaptationError):
        return 4
    if isinstance(err, InferenceError):
        return 5
    if isinstance(err, EvaluationError):
        return 6
    return _PRIMARY_CODE.get(command, 1)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "config", None):
        try:
            args._file_config = load_config_file(args.config)
        except OovForgeError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
    else:
        args._file_config = {}
    handler = _HANDLERS[args.command]
    try:
        return handler(args)
    except OovForgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return _exit_code(args.command, e)
    except Exception as e:  # unexpected fault
        print(f"unexpected error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
