"""Subword vocabulary: greedy byte-pair-merge training, encode/decode, JSON persistence.

Training is whitespace-pretokenized: merges never cross a whitespace/word
boundary. The hot counting/merging loops live in a compiled kernel when
available (`_fastbpe`), with a pure-Python fallback (`_purebpe`).
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

try:
    from storyfill import _fastbpe as _kernel
except ImportError:  # extension not built
    from storyfill import _purebpe as _kernel

KERNEL_IMPLEMENTATION = _kernel.IMPLEMENTATION

SPECIAL_NAMES = ("PAD", "BOS", "EOS", "SEP", "EOSENT")
SPECIAL_STRINGS = {
    "PAD": "<pad>",
    "BOS": "<bos>",
    "EOS": "<eos>",
    "SEP": "<sep>",
    "EOSENT": "<eosent>",
}

_PRETOKEN_RE = re.compile(r"\s+|\S+")


@dataclass
class Vocab:
    """Token inventory with merge rules and reserved special ids.

    `tokens[i]` is the string for id i; specials occupy the front of the
    id space. decode(encode(x)) == x for any x over the training charset.
    """

    tokens: list[str]
    merges: list[tuple[str, str]]
    specials: dict[str, int]
    _token_to_id: dict[str, int] = field(default_factory=dict, repr=False)
    _merge_ids: list[tuple[int, int, int]] = field(default_factory=list, repr=False)
    _word_cache: dict[str, tuple[int, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self._token_to_id) != len(self.tokens):
            raise ValueError("duplicate token strings in vocab")
        self._merge_ids = []
        for a, b in self.merges:
            merged = self._token_to_id[a + b]
            self._merge_ids.append((self._token_to_id[a], self._token_to_id[b], merged))
        self._word_cache = {}

    def __len__(self):
        return len(self.tokens)

    @property
    def pad_id(self):
        return self.specials["PAD"]

    @property
    def bos_id(self):
        return self.specials["BOS"]

    @property
    def eos_id(self):
        return self.specials["EOS"]

    @property
    def sep_id(self):
        return self.specials["SEP"]

    @property
    def eosent_id(self):
        return self.specials["EOSENT"]

    def _encode_word(self, word: str) -> tuple[int, ...]:
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        try:
            seq = [self._token_to_id[c] for c in word]
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} not in vocabulary") from None
        for first, second, new_id in self._merge_ids:
            if len(seq) < 2:
                break
            seq = _kernel.apply_merge(seq, first, second, new_id)
        result = tuple(seq)
        self._word_cache[word] = result
        return result

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in _PRETOKEN_RE.findall(text):
            ids.extend(self._encode_word(word))
        return ids

    def decode(self, ids) -> str:
        special_ids = set(self.specials.values())
        return "".join(self.tokens[i] for i in ids if i not in special_ids)

    def save(self, path):
        doc = {
            "tokens": self.tokens,
            "merges": [list(pair) for pair in self.merges],
            "specials": self.specials,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, ensure_ascii=False, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            tokens=list(doc["tokens"]),
            merges=[tuple(p) for p in doc["merges"]],
            specials=dict(doc["specials"]),
        )


def train_tokenizer(stories, target_vocab_size: int) -> Vocab:
    """Learn a byte-pair-merge vocabulary over the stories' sentences.

    Greedy: repeatedly merge the most frequent adjacent pair (ties broken
    by lowest id pair) until the target size is reached or no pair occurs
    at least twice. Deterministic given input order.
    """
    word_freqs = Counter()
    for story in stories:
        for sentence in story.sentences:
            word_freqs.update(_PRETOKEN_RE.findall(sentence))

    chars = sorted({c for w in word_freqs for c in w})
    n_reserved = len(SPECIAL_NAMES) + len(chars)
    if target_vocab_size <= n_reserved:
        raise ValueError(
            f"target_vocab_size {target_vocab_size} too small: "
            f"{len(SPECIAL_NAMES)} specials + {len(chars)} characters required"
        )

    tokens = [SPECIAL_STRINGS[n] for n in SPECIAL_NAMES] + chars
    specials = {n: i for i, n in enumerate(SPECIAL_NAMES)}
    token_to_id = {t: i for i, t in enumerate(tokens)}
    known = set(tokens)

    seqs = []
    freqs = []
    for word, freq in word_freqs.items():
        seqs.append([token_to_id[c] for c in word])
        freqs.append(freq)

    merges: list[tuple[str, str]] = []
    while len(tokens) < target_vocab_size:
        counts = _kernel.count_pairs(seqs, freqs)
        # drop pairs whose concatenation collides with an existing token
        best = None
        best_count = 1
        for pair, count in counts.items():
            if count < best_count:
                continue
            if tokens[pair[0]] + tokens[pair[1]] in known:
                continue
            if count > best_count or (best is not None and pair < best):
                best = pair
                best_count = count
        if best is None:
            break
        first, second = best
        merged_str = tokens[first] + tokens[second]
        new_id = len(tokens)
        tokens.append(merged_str)
        known.add(merged_str)
        merges.append((tokens[first], tokens[second]))
        seqs = [
            _kernel.apply_merge(s, first, second, new_id) if len(s) > 1 else s
            for s in seqs
        ]

    return Vocab(tokens=tokens, merges=merges, specials=specials)
