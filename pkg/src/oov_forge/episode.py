"""K-shot episode construction: masked context sampling plus character
features for one target word.

Context token ids live in the owning corpus vocabulary's id space, with two
reserved sentinels: MASK_ID marks masked-out target occurrences and UNK_ID
marks tokens that have no vocabulary entry (ad-hoc inference sentences).
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .corpus import EmbeddingTable, SentenceStore, Vocabulary, contexts_of
from .errors import EpisodeError, InputError

MASK_ID = -1
UNK_ID = -2
MASK_TOKEN = "<mask>"

CONTEXT_WINDOW = 12      # tokens kept on each side of the target
MAX_WORD_LEN = 20        # characters kept before truncation


class CharVocab:
    """Characters the morphology encoder understands, with BOW/EOW markers.

    Covers ASCII letters, digits, hyphen and apostrophe; anything else maps
    to CHAR_UNK.
    """

    ALPHABET = string.ascii_lowercase + string.ascii_uppercase + string.digits + "-'"

    def __init__(self):
        self.bow = 0
        self.eow = 1
        self.unk = 2
        self.char_ids = {c: i + 3 for i, c in enumerate(self.ALPHABET)}
        self.chars = {i: c for c, i in self.char_ids.items()}

    def __len__(self) -> int:
        return len(self.char_ids) + 3

    def encode_char(self, c: str) -> int:
        return self.char_ids.get(c, self.unk)


DEFAULT_CHAR_VOCAB = CharVocab()


def char_sequence(word: str, cv: CharVocab = DEFAULT_CHAR_VOCAB,
                  max_word_len: int = MAX_WORD_LEN) -> list[int]:
    """[BOW] + character ids + [EOW], truncated from the right."""
    if not word:
        raise InputError("char_sequence: empty word")
    body = [cv.encode_char(c) for c in word[:max_word_len]]
    return [cv.bow] + body + [cv.eow]


def decode_chars(ids: list[int], cv: CharVocab = DEFAULT_CHAR_VOCAB) -> str:
    """Inverse of char_sequence up to truncation; unknown chars fold to '?'."""
    out = []
    for i in ids:
        if i in (cv.bow, cv.eow):
            continue
        out.append(cv.chars.get(i, "?"))
    return "".join(out)


@dataclass
class Episode:
    """One K-shot task: masked contexts, character features, oracle target."""

    target_word: str
    target_id: int
    contexts: list[list[int]]
    char_seq: list[int]
    oracle: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.contexts)


def encode_tokens(tokens: list[str], vocab: Vocabulary) -> list[int]:
    """Token strings -> vocab ids; unknown words get the UNK sentinel."""
    out = []
    for tok in tokens:
        wid = vocab.id_of(tok)
        out.append(UNK_ID if wid is None else wid)
    return out


def window_on_mask(ids: list[int], window: int = CONTEXT_WINDOW) -> list[int]:
    """Keep ``window`` tokens on each side of the first MASK_ID."""
    first = ids.index(MASK_ID)
    lo = max(0, first - window)
    hi = min(len(ids), first + window + 1)
    return ids[lo:hi]


def mask_window(ids: list[int], target_id: int, window: int = CONTEXT_WINDOW) -> list[int]:
    """Mask every target occurrence, keep ``window`` tokens each side of the
    first one."""
    masked = [MASK_ID if t == target_id else t for t in ids]
    return window_on_mask(masked, window)


def decode_context(ids: list[int], vocab: Vocabulary) -> list[str]:
    """Token ids back to strings; sentinels become their marker tokens."""
    out = []
    for tid in ids:
        if tid == MASK_ID:
            out.append(MASK_TOKEN)
        elif tid == UNK_ID:
            out.append("<unk>")
        else:
            out.append(vocab.word_of(tid))
    return out


def sample_episode(word: str, k: int, rng: np.random.Generator,
                   store: SentenceStore, table: EmbeddingTable | None = None,
                   char_vocab: CharVocab = DEFAULT_CHAR_VOCAB,
                   window: int = CONTEXT_WINDOW,
                   max_word_len: int = MAX_WORD_LEN) -> Episode:
    """Draw K masked contexts for ``word``.

    Sampling is uniform without replacement while enough sentences exist,
    with replacement otherwise (keeps the episode shape fixed for rare
    words). The oracle vector is attached from ``table`` when given.
    """
    if k < 1:
        raise EpisodeError(f"k must be >= 1, got {k}")
    sids = contexts_of(word, store)
    if not sids:
        raise EpisodeError(f"no contexts for {word!r}")
    target_id = store.vocab.id_of(word)
    if len(sids) >= k:
        chosen = rng.choice(len(sids), size=k, replace=False)
    else:
        chosen = rng.integers(0, len(sids), size=k)
    contexts = [
        mask_window(store.sentences[sids[int(i)]], target_id, window)
        for i in chosen
    ]
    oracle = None
    if table is not None:
        oracle = table.get(word)
        if oracle is None:
            raise EpisodeError(f"no oracle embedding for {word!r}")
    return Episode(
        target_word=word,
        target_id=target_id,
        contexts=contexts,
        char_seq=char_sequence(word, char_vocab, max_word_len),
        oracle=oracle,
    )


def episode_from_tokens(word: str, token_sentences: list[list[str]],
                        vocab: Vocabulary | None = None,
                        table: EmbeddingTable | None = None,
                        char_vocab: CharVocab = DEFAULT_CHAR_VOCAB,
                        window: int = CONTEXT_WINDOW,
                        max_word_len: int = MAX_WORD_LEN) -> Episode:
    """Build an episode from explicit tokenized sentences (inference path).

    Every sentence must contain the word. With no vocabulary given, a
    transient one covering exactly these sentences is built.
    """
    if not token_sentences:
        raise EpisodeError("episode needs at least one context sentence")
    for sent in token_sentences:
        if word not in sent:
            raise EpisodeError(f"context sentence does not contain {word!r}: {sent}")
    if vocab is None:
        vocab = _transient_vocab(token_sentences)
    target_id = vocab.id_of(word)
    if target_id is None:
        raise EpisodeError(f"{word!r} missing from the provided vocabulary")
    contexts = [
        mask_window(encode_tokens(sent, vocab), target_id, window)
        for sent in token_sentences
    ]
    oracle = table.get(word) if table is not None else None
    return Episode(word, target_id, contexts,
                   char_sequence(word, char_vocab, max_word_len), oracle)


def _transient_vocab(token_sentences: list[list[str]]) -> Vocabulary:
    words: list[str] = []
    seen = set()
    for sent in token_sentences:
        for tok in sent:
            if tok != MASK_TOKEN and tok not in seen:
                seen.add(tok)
                words.append(tok)
    return Vocabulary(words, [1] * len(words), [False] * len(words), min_count=1)


def episode_from_masked(word: str, masked_sentences: list[list[str]],
                        vocab: Vocabulary | None = None,
                        table: EmbeddingTable | None = None,
                        char_vocab: CharVocab = DEFAULT_CHAR_VOCAB,
                        max_word_len: int = MAX_WORD_LEN,
                        max_len: int = 2 * CONTEXT_WINDOW + 1):
    """Episode from sentences already carrying MASK_TOKEN at target slots.

    Returns (episode, vocabulary); the vocabulary is transient when none is
    given and is what the model needs to resolve the ids.
    """
    if not masked_sentences:
        raise EpisodeError("episode needs at least one context sentence")
    for sent in masked_sentences:
        if MASK_TOKEN not in sent:
            raise EpisodeError(f"context has no {MASK_TOKEN} marker: {sent}")
    if vocab is None:
        vocab = _transient_vocab(masked_sentences)
    window = (max_len - 1) // 2
    contexts = []
    for sent in masked_sentences:
        ids = [MASK_ID if t == MASK_TOKEN else
               (vocab.id_of(t) if vocab.id_of(t) is not None else UNK_ID)
               for t in sent]
        contexts.append(window_on_mask(ids, window))
    oracle = table.get(word) if table is not None else None
    episode = Episode(word, vocab.id_of(word) if word in vocab else UNK_ID,
                      contexts, char_sequence(word, char_vocab, max_word_len),
                      oracle)
    return episode, vocab


def eligible_targets(vocab: Vocabulary, store: SentenceStore,
                     table: EmbeddingTable | None) -> list[str]:
    """Words usable as episode targets: eligible count, present in the
    oracle table, and occurring in at least one sentence."""
    out = []
    for w in vocab.eligible_words():
        if table is not None and w not in table:
            continue
        wid = vocab.id_of(w)
        if store.index.get(wid):
            out.append(w)
    return out


def episode_stream(vocab: Vocabulary, store: SentenceStore,
                   table: EmbeddingTable | None, k, seed: int,
                   words: list[str] | None = None,
                   char_vocab: CharVocab = DEFAULT_CHAR_VOCAB,
                   window: int = CONTEXT_WINDOW):
    """Infinite deterministic-for-seed episode generator.

    ``k`` is either a fixed int or an inclusive (lo, hi) range sampled per
    episode; targets are drawn uniformly from ``words`` (default: all
    eligible targets).
    """
    if words is None:
        words = eligible_targets(vocab, store, table)
    if not words:
        raise EpisodeError("no eligible target words")
    fixed_k = isinstance(k, int)

    def generate():
        rng = np.random.default_rng(seed)
        while True:
            word = words[int(rng.integers(0, len(words)))]
            k_now = k if fixed_k else int(rng.integers(k[0], k[1] + 1))
            yield sample_episode(word, k_now, rng, store, table,
                                 char_vocab=char_vocab, window=window)

    return generate()
