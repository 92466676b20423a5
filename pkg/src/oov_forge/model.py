"""The neural regression function: a hierarchical attention encoder that
maps K masked context sentences plus a character sequence to a predicted
embedding vector.

Architecture, bottom to top:

  token embedding   frozen rows copied from the input table, plus two
                    learned rows (MASK, UNK); optional learned projection
                    up to d_model when the table dimension is not divisible
                    by the head count
  context encoder   per-position learned scalar weights ("positional
                    attention") followed by self-attention encoding
                    block(s); the sentence is summarized by the output at
                    the first MASK position (config-switchable to mean)
  aggregator        the K context vectors as a length-K sequence through
                    encoding block(s) WITHOUT positional weighting (order
                    must not matter), then mean-pooled
  morphology        character embeddings -> conv + max-over-time per filter
                    width -> concat -> ReLU
  fusion            one linear projection from [context | morphology] down
                    to the output embedding dimension

All shapes in comments use L = sentence length, K = shot count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .corpus import EmbeddingTable, Vocabulary
from .episode import MASK_ID, UNK_ID, MASK_TOKEN, DEFAULT_CHAR_VOCAB, Episode
from .errors import FormatError, InputError
from .tensor import Tensor

UNK_TOKEN = "<unk>"


@dataclass(frozen=True)
class HiceConfig:
    embed_dim: int
    n_heads: int = 4
    d_model: int = 0          # 0: smallest multiple of n_heads >= embed_dim
    d_ff: int = 0             # 0: 4 * d_model
    n_context_blocks: int = 1
    n_agg_blocks: int = 1
    char_emb_dim: int = 16
    char_filters: int = 32
    filter_widths: tuple[int, ...] = (2, 3, 4)
    max_len: int = 25
    max_word_len: int = 20
    use_morph: bool = True
    context_pool: str = "mask"   # "mask" | "mean"
    seed: int = 0

    def resolved_d_model(self) -> int:
        if self.d_model:
            return self.d_model
        return self.n_heads * math.ceil(self.embed_dim / self.n_heads)

    def resolved_d_ff(self) -> int:
        return self.d_ff or 4 * self.resolved_d_model()

    @property
    def c_morph(self) -> int:
        return self.char_filters * len(self.filter_widths)

    def as_dict(self) -> dict[str, str]:
        return {
            "embed_dim": str(self.embed_dim),
            "n_heads": str(self.n_heads),
            "d_model": str(self.resolved_d_model()),
            "d_ff": str(self.resolved_d_ff()),
            "n_context_blocks": str(self.n_context_blocks),
            "n_agg_blocks": str(self.n_agg_blocks),
            "char_emb_dim": str(self.char_emb_dim),
            "char_filters": str(self.char_filters),
            "filter_widths": ",".join(str(w) for w in self.filter_widths),
            "max_len": str(self.max_len),
            "max_word_len": str(self.max_word_len),
            "use_morph": str(self.use_morph).lower(),
            "context_pool": self.context_pool,
            "seed": str(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "HiceConfig":
        return cls(
            embed_dim=int(d["embed_dim"]),
            n_heads=int(d["n_heads"]),
            d_model=int(d["d_model"]),
            d_ff=int(d["d_ff"]),
            n_context_blocks=int(d["n_context_blocks"]),
            n_agg_blocks=int(d["n_agg_blocks"]),
            char_emb_dim=int(d["char_emb_dim"]),
            char_filters=int(d["char_filters"]),
            filter_widths=tuple(int(w) for w in d["filter_widths"].split(",")),
            max_len=int(d["max_len"]),
            max_word_len=int(d["max_word_len"]),
            use_morph=d["use_morph"] == "true",
            context_pool=d["context_pool"],
            seed=int(d.get("seed", "0")),
        )


class AttentionBlockParams:
    """Weights of one self-attention encoding block."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int,
                 rng: np.random.Generator):
        if d_model % n_heads:
            raise InputError(f"d_model {d_model} not divisible by {n_heads} heads")
        d_head = d_model // n_heads
        s_in = 1.0 / math.sqrt(d_model)
        self.heads = [
            (tc.parameter(rng.normal(size=(d_model, d_head)) * s_in),
             tc.parameter(rng.normal(size=(d_model, d_head)) * s_in),
             tc.parameter(rng.normal(size=(d_model, d_head)) * s_in))
            for _ in range(n_heads)
        ]
        self.wo = tc.parameter(rng.normal(size=(d_model, d_model)) * s_in)
        self.w1 = tc.parameter(rng.normal(size=(d_model, d_ff)) * s_in)
        self.b1 = tc.parameter(np.zeros(d_ff))
        self.w2 = tc.parameter(rng.normal(size=(d_ff, d_model)) / math.sqrt(d_ff))
        self.b2 = tc.parameter(np.zeros(d_model))
        self.ln1_g = tc.parameter(np.ones(d_model))
        self.ln1_b = tc.parameter(np.zeros(d_model))
        self.ln2_g = tc.parameter(np.ones(d_model))
        self.ln2_b = tc.parameter(np.zeros(d_model))
        self.d_model = d_model

    def named(self, prefix: str):
        for i, (wq, wk, wv) in enumerate(self.heads):
            yield f"{prefix}.head{i}.wq", wq
            yield f"{prefix}.head{i}.wk", wk
            yield f"{prefix}.head{i}.wv", wv
        yield f"{prefix}.wo", self.wo
        yield f"{prefix}.ffn.w1", self.w1
        yield f"{prefix}.ffn.b1", self.b1
        yield f"{prefix}.ffn.w2", self.w2
        yield f"{prefix}.ffn.b2", self.b2
        yield f"{prefix}.ln1.g", self.ln1_g
        yield f"{prefix}.ln1.b", self.ln1_b
        yield f"{prefix}.ln2.g", self.ln2_g
        yield f"{prefix}.ln2.b", self.ln2_b


def self_attention(x: Tensor, p: AttentionBlockParams,
                   sink: list | None = None) -> Tensor:
    """Multi-head self-attention over x[L, d_model]; scores scaled by
    1/sqrt(d_model). ``sink`` collects the per-head softmax matrices."""
    scale = 1.0 / math.sqrt(p.d_model)
    heads = []
    for wq, wk, wv in p.heads:
        q = tc.matmul(x, wq)
        k = tc.matmul(x, wk)
        v = tc.matmul(x, wv)
        scores = tc.scale(tc.matmul(q, tc.transpose2d(k)), scale)
        attn = tc.softmax(scores, axis=-1)
        if sink is not None:
            sink.append(attn.data.copy())
        heads.append(tc.matmul(attn, v))
    return tc.matmul(tc.concat_cols(heads), p.wo)


def encoding_block(x: Tensor, p: AttentionBlockParams,
                   sink: list | None = None) -> Tensor:
    """Self-attention and a position-wise FFN, each wrapped in residual +
    layer norm."""
    y1 = tc.layer_norm(tc.add(x, self_attention(x, p, sink)), p.ln1_g, p.ln1_b)
    h = tc.relu(tc.add_bias(tc.matmul(y1, p.w1), p.b1))
    ffn = tc.add_bias(tc.matmul(h, p.w2), p.b2)
    return tc.layer_norm(tc.add(y1, ffn), p.ln2_g, p.ln2_b)


class HiceModel:
    """Hierarchical context encoder with learnable parameters.

    The frozen context-embedding rows are plain numpy data, never tensors,
    so they cannot receive gradients by construction; only the MASK/UNK
    rows and the rest of the network train.
    """

    MASK_ROW = 0
    UNK_ROW = 1

    def __init__(self, config: HiceConfig, frozen: np.ndarray,
                 frozen_words: list[str], vocab: Vocabulary | None = None):
        if frozen.ndim != 2 or frozen.shape[1] != config.embed_dim:
            raise InputError(
                f"frozen table {frozen.shape} does not match embed_dim {config.embed_dim}"
            )
        self.config = config
        self.frozen = np.asarray(frozen, dtype=np.float32)
        self.frozen_words = list(frozen_words)
        self.row_of = {w: i for i, w in enumerate(self.frozen_words)}
        self.vocab = vocab
        self.n_chars = len(DEFAULT_CHAR_VOCAB)

        d_in = config.embed_dim
        d_model = config.resolved_d_model()
        d_ff = config.resolved_d_ff()
        rng = np.random.default_rng(config.seed)

        mean_row = (self.frozen.astype(np.float64).mean(axis=0)
                    if len(self.frozen) else np.zeros(d_in))
        self.special_embed = tc.parameter(np.stack([mean_row, mean_row]))

        if d_model != d_in:
            self.input_proj_w = tc.parameter(
                rng.normal(size=(d_in, d_model)) / math.sqrt(d_in))
            self.input_proj_b = tc.parameter(np.zeros(d_model))
        else:
            self.input_proj_w = None
            self.input_proj_b = None

        self.a_pos = tc.parameter(np.ones(config.max_len))
        self.ctx_blocks = [AttentionBlockParams(d_model, config.n_heads, d_ff, rng)
                           for _ in range(config.n_context_blocks)]
        self.agg_blocks = [AttentionBlockParams(d_model, config.n_heads, d_ff, rng)
                           for _ in range(config.n_agg_blocks)]

        ce = config.char_emb_dim
        self.char_embed = tc.parameter(rng.normal(size=(self.n_chars, ce)) * 0.1)
        self.conv_filters = {}
        self.conv_bias = {}
        for w in config.filter_widths:
            self.conv_filters[w] = tc.parameter(
                rng.normal(size=(w, ce, config.char_filters)) / math.sqrt(w * ce))
            self.conv_bias[w] = tc.parameter(np.zeros(config.char_filters))

        fuse_in = d_model + config.c_morph
        self.fuse_w = tc.parameter(
            rng.normal(size=(fuse_in, d_in)) / math.sqrt(fuse_in))
        self.fuse_b = tc.parameter(np.zeros(d_in))
        self._zero_morph = np.zeros(config.c_morph)

    @classmethod
    def from_table(cls, config: HiceConfig, table: EmbeddingTable,
                   vocab: Vocabulary | None = None) -> "HiceModel":
        words = table.words()
        frozen = (np.stack([table.vectors[w] for w in words])
                  if words else np.zeros((0, config.embed_dim), dtype=np.float32))
        return cls(config, frozen, words, vocab)

    def bind_vocab(self, vocab: Vocabulary) -> None:
        self.vocab = vocab

    def parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = [("special_embed", self.special_embed)]
        if self.input_proj_w is not None:
            out.append(("input_proj.w", self.input_proj_w))
            out.append(("input_proj.b", self.input_proj_b))
        out.append(("a_pos", self.a_pos))
        for i, block in enumerate(self.ctx_blocks):
            out.extend(block.named(f"ctx{i}"))
        for i, block in enumerate(self.agg_blocks):
            out.extend(block.named(f"agg{i}"))
        out.append(("char_embed", self.char_embed))
        for w in self.config.filter_widths:
            out.append((f"conv{w}.filters", self.conv_filters[w]))
            out.append((f"conv{w}.bias", self.conv_bias[w]))
        out.append(("fuse.w", self.fuse_w))
        out.append(("fuse.b", self.fuse_b))
        return out

    def zero_grads(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()

    # ------------------------------------------------------------------
    # forward pieces
    # ------------------------------------------------------------------

    def _resolve_vocab(self, vocab: Vocabulary | None) -> Vocabulary:
        v = vocab or self.vocab
        if v is None:
            raise InputError("no vocabulary bound to the model or passed in")
        return v

    def embed_tokens(self, ids: list[int], vocab: Vocabulary | None = None) -> Tensor:
        """Token ids -> [L, d_in]; frozen rows are constants, MASK/UNK learn."""
        v = self._resolve_vocab(vocab)
        L = len(ids)
        base = np.zeros((L, self.config.embed_dim))
        special_pos: list[int] = []
        special_row: list[int] = []
        for pos, tid in enumerate(ids):
            if tid == MASK_ID:
                special_pos.append(pos)
                special_row.append(self.MASK_ROW)
                continue
            if tid == UNK_ID:
                row = None
            else:
                row = self.row_of.get(v.word_of(tid))
            if row is None:
                special_pos.append(pos)
                special_row.append(self.UNK_ROW)
            else:
                base[pos] = self.frozen[row]
        return tc.overlay_rows(base, special_pos, self.special_embed, special_row)

    def encode_context(self, ids: list[int], vocab: Vocabulary | None = None,
                       sink: list | None = None) -> Tensor:
        """One masked sentence -> [d_model] summary vector."""
        L = len(ids)
        if L < 1:
            raise InputError("encode_context: empty context")
        if L > self.config.max_len:
            raise InputError(
                f"encode_context: length {L} exceeds max_len {self.config.max_len}"
            )
        x = self.embed_tokens(ids, vocab)
        if self.input_proj_w is not None:
            x = tc.add_bias(tc.matmul(x, self.input_proj_w), self.input_proj_b)
        x = tc.scale_rows(x, tc.gather_vec(self.a_pos, range(L)))
        for block in self.ctx_blocks:
            x = encoding_block(x, block, sink)
        if self.config.context_pool == "mean":
            return tc.mean_rows(x)
        try:
            pool_at = ids.index(MASK_ID)
        except ValueError:
            pool_at = 0  # unmasked ad-hoc context: fall back to first position
        return tc.take_row(x, pool_at)

    def aggregate(self, ctx_vectors: list[Tensor],
                  sink: list | None = None) -> Tensor:
        """K context vectors -> one [d_model] vector, order-invariantly:
        no positional weighting, symmetric mean pool."""
        x = tc.stack_rows(ctx_vectors)
        for block in self.agg_blocks:
            x = encoding_block(x, block, sink)
        return tc.mean_rows(x)

    def encode_morphology(self, char_seq: list[int]) -> Tensor:
        """Character ids -> [c_morph] morphology features."""
        if not char_seq:
            raise InputError("encode_morphology: empty character sequence")
        x = tc.gather_rows(self.char_embed, char_seq)
        pooled = []
        for w in self.config.filter_widths:
            conv = tc.conv1d_maxpool(x, self.conv_filters[w])
            pooled.append(tc.add(conv, self.conv_bias[w]))
        return tc.relu(tc.concat_vecs(pooled))

    def predict(self, episode: Episode, vocab: Vocabulary | None = None,
                use_morph: bool | None = None,
                ctx_sink: list | None = None,
                agg_sink: list | None = None) -> Tensor:
        """Predicted embedding [d_in] for the episode's target word.

        With morphology off, the morphology slot of the fusion input is a
        zero vector of the same width (ablation arm).
        """
        if use_morph is None:
            use_morph = self.config.use_morph
        ctx_vecs = []
        for ids in episode.contexts:
            per_ctx = [] if ctx_sink is not None else None
            ctx_vecs.append(self.encode_context(ids, vocab, per_ctx))
            if ctx_sink is not None:
                ctx_sink.append(per_ctx)
        agg = self.aggregate(ctx_vecs, agg_sink)
        if use_morph:
            morph = self.encode_morphology(episode.char_seq)
        else:
            morph = tc.constant(self._zero_morph)
        fused = tc.concat_vecs([agg, morph])
        return tc.add(tc.vecmat(fused, self.fuse_w), self.fuse_b)

    def predict_vector(self, episode: Episode, vocab: Vocabulary | None = None,
                       use_morph: bool | None = None) -> np.ndarray:
        """Inference path: no graph recording, returns a plain array."""
        return self.predict(episode, vocab, use_morph).data

    def dump_attention(self, episode: Episode,
                       vocab: Vocabulary | None = None) -> "AttentionReport":
        """Capture every softmax attention matrix of a forward pass."""
        v = self._resolve_vocab(vocab)
        ctx_sink: list = []
        agg_sink: list = []
        self.predict(episode, v, ctx_sink=ctx_sink, agg_sink=agg_sink)
        tokens = [
            [_token_text(tid, v) for tid in ids]
            for ids in episode.contexts
        ]
        return AttentionReport(
            word=episode.target_word,
            context_tokens=tokens,
            context_matrices=ctx_sink,
            aggregator_matrices=agg_sink,
        )

    def frozen_table(self) -> EmbeddingTable:
        """The frozen rows repackaged as an embedding table (neighbor probes)."""
        table = EmbeddingTable(dim=self.config.embed_dim, source="<checkpoint>")
        table.vectors = {w: self.frozen[i] for i, w in enumerate(self.frozen_words)}
        return table

    # ------------------------------------------------------------------
    # state
    # ------------------------------------------------------------------

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        arrays = [(name, p.data) for name, p in self.parameters()]
        arrays.append(("frozen_rows", self.frozen))
        from .container import pack_text
        arrays.append(("frozen_words", pack_text("\n".join(self.frozen_words))))
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        from .container import unpack_text
        for name, p in self.parameters():
            if name not in arrays:
                raise FormatError(f"checkpoint missing parameter {name!r}")
            arr = arrays[name].astype(np.float64)
            if arr.shape != p.data.shape:
                raise FormatError(
                    f"checkpoint parameter {name!r}: shape {arr.shape} vs {p.data.shape}"
                )
            p.data = arr
            p.grad = None
        if "frozen_rows" not in arrays or "frozen_words" not in arrays:
            raise FormatError("checkpoint missing frozen embedding block")
        self.frozen = arrays["frozen_rows"].astype(np.float32)
        text = unpack_text(arrays["frozen_words"])
        self.frozen_words = text.split("\n") if text else []
        if len(self.frozen_words) != len(self.frozen):
            raise FormatError("checkpoint word list does not match frozen rows")
        self.row_of = {w: i for i, w in enumerate(self.frozen_words)}


def _token_text(tid: int, vocab: Vocabulary) -> str:
    if tid == MASK_ID:
        return MASK_TOKEN
    if tid == UNK_ID:
        return UNK_TOKEN
    return vocab.word_of(tid)


@dataclass
class AttentionReport:
    """Attention matrices from one forward pass, serializable to text."""

    word: str
    context_tokens: list[list[str]]
    context_matrices: list[list[np.ndarray]]   # per context, per softmax call
    aggregator_matrices: list[np.ndarray]

    def render(self) -> str:
        lines = ["oov-forge attention report v1", f"word: {self.word}",
                 f"contexts: {len(self.context_tokens)}"]
        for i, (tokens, mats) in enumerate(
                zip(self.context_tokens, self.context_matrices)):
            lines.append(f"context {i}: {' '.join(tokens)}")
            for j, m in enumerate(mats):
                lines.append(f"matrix {i}.{j}: {m.shape[0]} {m.shape[1]}")
                for row in m:
                    lines.append(" ".join(repr(float(x)) for x in row))
        lines.append(f"aggregator: {len(self.aggregator_matrices)}")
        for j, m in enumerate(self.aggregator_matrices):
            lines.append(f"matrix a.{j}: {m.shape[0]} {m.shape[1]}")
            for row in m:
                lines.append(" ".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"


def parse_attention_report(text: str) -> AttentionReport:
    lines = text.splitlines()
    if not lines or lines[0] != "oov-forge attention report v1":
        raise FormatError("not an attention report")
    try:
        word = lines[1].split(": ", 1)[1]
        n_ctx = int(lines[2].split(": ", 1)[1])
        pos = 3
        tokens: list[list[str]] = []
        matrices: list[list[np.ndarray]] = []
        for i in range(n_ctx):
            head, rest = lines[pos].split(": ", 1)
            if head != f"context {i}":
                raise FormatError(f"expected 'context {i}', got {head!r}")
            tokens.append(rest.split(" "))
            pos += 1
            mats = []
            while pos < len(lines) and lines[pos].startswith(f"matrix {i}."):
                r, c = (int(x) for x in lines[pos].split(": ", 1)[1].split())
                pos += 1
                rows = [[float(x) for x in lines[pos + k].split()] for k in range(r)]
                pos += r
                mats.append(np.array(rows).reshape(r, c))
            matrices.append(mats)
        n_agg = int(lines[pos].split(": ", 1)[1])
        pos += 1
        agg = []
        for _ in range(n_agg):
            r, c = (int(x) for x in lines[pos].split(": ", 1)[1].split())
            pos += 1
            rows = [[float(x) for x in lines[pos + k].split()] for k in range(r)]
            pos += r
            agg.append(np.array(rows).reshape(r, c))
    except (IndexError, ValueError) as e:
        raise FormatError(f"malformed attention report: {e}") from e
    return AttentionReport(word, tokens, matrices, agg)
