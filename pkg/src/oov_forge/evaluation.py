"""Intrinsic evaluation: score inferred pseudo-word vectors against human
probe-similarity ratings via Spearman correlation, plus nearest-neighbor
probes over an embedding table.

Benchmark items travel as a normalized TSV, one item per line:

    pseudo_word <TAB> shot <TAB> ctx1|||ctx2|||... <TAB> p1,p2,... <TAB> r1,r2,...

Contexts are raw sentences each containing the pseudo-word; the evaluator
tokenizes and masks them before handing them to a method.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .corpus import EmbeddingTable, TokenizerConfig, DEFAULT_TOKENIZER, tokenize
from .episode import MASK_TOKEN
from .errors import EvaluationError, FormatError

InferFn = Callable[[str, list[list[str]]], np.ndarray]
CONTEXT_SEP = "|||"


@dataclass
class EvalItem:
    pseudo_word: str
    contexts: list[str]              # raw sentences containing the pseudo-word
    probes: list[str]
    human: list[float]
    shot: int

    def validate(self) -> None:
        if len(self.probes) != len(self.human) or len(self.probes) < 2:
            raise FormatError(
                f"item {self.pseudo_word!r}: needs >= 2 aligned probes/ratings"
            )
        for ctx in self.contexts:
            if self.pseudo_word not in tokenize(ctx):
                raise FormatError(
                    f"item {self.pseudo_word!r}: context lacks the pseudo-word: {ctx!r}"
                )


def average_ranks(values) -> np.ndarray:
    """1-based ranks; ties get the mean of the rank span they occupy."""
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=np.float64)
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Pearson correlation of average-ranked values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise EvaluationError(
            f"spearman needs two equal-length lists of >= 2 values, got "
            f"{a.shape} and {b.shape}"
        )
    ra = average_ranks(a)
    rb = average_ranks(b)
    da = ra - ra.mean()
    db = rb - rb.mean()
    na = float(np.sqrt((da * da).sum()))
    nb = float(np.sqrt((db * db).sum()))
    if na == 0.0 or nb == 0.0:
        raise EvaluationError("spearman undefined: constant input")
    # identical / exactly reversed orderings are exact by rank construction
    if np.array_equal(ra, rb):
        return 1.0
    if np.array_equal(ra + rb, np.full(len(ra), len(ra) + 1.0)):
        return -1.0
    return float(np.clip((da * db).sum() / (na * nb), -1.0, 1.0))


def cosine_np(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise EvaluationError("cosine undefined for a zero vector")
    return float(np.clip(float(u @ v) / (nu * nv), -1.0, 1.0))


@dataclass
class ItemResult:
    pseudo_word: str
    shot: int
    rho: float | None
    failed: bool = False
    dropped_probes: int = 0
    reason: str = ""


@dataclass
class MethodReport:
    method: str
    items: list[ItemResult] = field(default_factory=list)
    mean_by_shot: dict[int, float] = field(default_factory=dict)
    pooled_by_shot: dict[int, float] = field(default_factory=dict)
    failed: int = 0
    dropped_probes: int = 0
    runtime: float = 0.0

    def mean_rho(self) -> float:
        scored = [r.rho for r in self.items if not r.failed]
        return float(np.mean(scored)) if scored else float("nan")


def mask_contexts(word: str, contexts: list[str],
                  config: TokenizerConfig = DEFAULT_TOKENIZER) -> list[list[str]]:
    """Tokenize raw sentences and replace the pseudo-word by the mask marker."""
    out = []
    for ctx in contexts:
        toks = tokenize(ctx, config)
        out.append([MASK_TOKEN if t == word else t for t in toks])
    return out


def evaluate_method(items: list[EvalItem], infer_fn: InferFn,
                    table: EmbeddingTable, method: str = "method",
                    config: TokenizerConfig = DEFAULT_TOKENIZER) -> MethodReport:
    """Score one inference method over the benchmark.

    Per item: infer a vector from the masked contexts, rank-correlate its
    cosine similarities to the probes against the human ratings. Probes
    missing from the table are dropped (and counted); items that fail keep
    a record but are excluded from the means.
    """
    report = MethodReport(method=method)
    start = time.monotonic()
    pooled: dict[int, tuple[list[float], list[float]]] = {}
    for item in items:
        probes, human, dropped = [], [], 0
        for p, h in zip(item.probes, item.human):
            if p in table:
                probes.append(p)
                human.append(h)
            else:
                dropped += 1
        report.dropped_probes += dropped
        try:
            if len(probes) < 2:
                raise EvaluationError("fewer than 2 probes remain in the table")
            vec = infer_fn(item.pseudo_word, mask_contexts(item.pseudo_word,
                                                           item.contexts, config))
            machine = [cosine_np(vec, table.vectors[p]) for p in probes]
            rho = spearman(machine, human)
        except Exception as e:  # a method failure must not kill the run
            report.items.append(ItemResult(item.pseudo_word, item.shot, None,
                                           failed=True, dropped_probes=dropped,
                                           reason=str(e)))
            report.failed += 1
            continue
        report.items.append(ItemResult(item.pseudo_word, item.shot, rho,
                                       dropped_probes=dropped))
        bucket = pooled.setdefault(item.shot, ([], []))
        bucket[0].extend(machine)
        bucket[1].extend(human)
    for shot in sorted({r.shot for r in report.items}):
        scored = [r.rho for r in report.items if r.shot == shot and not r.failed]
        if scored:
            report.mean_by_shot[shot] = float(np.mean(scored))
        if shot in pooled and len(pooled[shot][0]) >= 2:
            try:
                report.pooled_by_shot[shot] = spearman(*pooled[shot])
            except EvaluationError:
                pass
    report.runtime = time.monotonic() - start
    return report


def nearest_neighbors(vector: np.ndarray, table: EmbeddingTable, top_k: int,
                      exclude: tuple[str, ...] = ()) -> list[tuple[str, float]]:
    """top_k in-table words by cosine, descending; ties break
    lexicographically; excluded words (e.g. the query itself) are skipped."""
    if top_k < 1:
        raise EvaluationError(f"top_k must be >= 1, got {top_k}")
    skip = set(exclude)
    scored = []
    for word, vec in table.vectors.items():
        if word in skip:
            continue
        try:
            scored.append((word, cosine_np(vector, vec)))
        except EvaluationError:
            continue  # zero-norm table rows can never be neighbors
    scored.sort(key=lambda wc: (-wc[1], wc[0]))
    return scored[:top_k]


# ---------------------------------------------------------------------------
# benchmark file handling
# ---------------------------------------------------------------------------

def save_benchmark_tsv(items: list[EvalItem], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write("\t".join([
                item.pseudo_word,
                str(item.shot),
                CONTEXT_SEP.join(item.contexts),
                ",".join(item.probes),
                ",".join(repr(float(h)) for h in item.human),
            ]) + "\n")


def load_benchmark_tsv(path) -> list[EvalItem]:
    items = []
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as e:
        raise FormatError(f"cannot read benchmark {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise FormatError(f"{path}: line {lineno}: expected 5 fields, got {len(parts)}")
        word, shot_s, ctx_s, probes_s, human_s = parts
        try:
            shot = int(shot_s)
            probes = probes_s.split(",")
            human = [float(h) for h in human_s.split(",")]
        except ValueError as e:
            raise FormatError(f"{path}: line {lineno}: {e}") from e
        item = EvalItem(word, ctx_s.split(CONTEXT_SEP), probes, human, shot)
        try:
            item.validate()
        except FormatError as e:
            raise FormatError(f"{path}: line {lineno}: {e}") from e
        items.append(item)
    return items


def import_chimera(path, shot: int, placeholder: str = "___") -> list[EvalItem]:
    """Normalize a raw benchmark file into EvalItems.

    Expected raw layout, one item per line, four tab-separated fields:
    pseudo-word, passage with sentences joined by "@@" and the pseudo-word
    marked by ``placeholder``, comma-separated probes, comma-separated
    ratings. Text is lowercased and the separators removed.
    """
    items = []
    lines = open(path, encoding="utf-8").read().splitlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"{path}: line {lineno}: expected 4 fields, got {len(parts)}")
        word, passage, probes_s, human_s = parts
        word = word.strip().lower()
        contexts = []
        for sent in passage.split("@@"):
            sent = sent.strip().lower().replace(placeholder, word)
            if sent and word in tokenize(sent):
                contexts.append(sent)
        if not contexts:
            raise FormatError(f"{path}: line {lineno}: no usable contexts")
        try:
            human = [float(h) for h in human_s.split(",")]
        except ValueError as e:
            raise FormatError(f"{path}: line {lineno}: {e}") from e
        probes = [p.strip().lower() for p in probes_s.split(",")]
        item = EvalItem(word, contexts, probes, human, shot)
        item.validate()
        items.append(item)
    return items
