"""Coherence classifier: synthetic negatives, training, scoring, reranking.

The encoder is the generator trunk without the causal mask; final states are
mean-pooled into a 2-way head and the probability of the coherent class is
the coherence score.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from storyfill import model as nn
from storyfill.model import ModelConfig
from storyfill.tokenizer import Vocab

log = logging.getLogger(__name__)

NEGATIVE_TYPES = ("Repetition", "Irrelevant", "OutOfOrder")


class OutOfOrderSkip(Exception):
    """No distinct reordering exists for this segment; caller substitutes."""


@dataclass(frozen=True)
class LabeledSegment:
    sentences: tuple[str, ...]
    label: int  # 1 coherent, 0 incoherent
    negative_type: str | None = None

    def __post_init__(self):
        if (self.label == 0) != (self.negative_type is not None):
            raise ValueError("negative_type must be present iff label is incoherent")
        if self.negative_type is not None and self.negative_type not in NEGATIVE_TYPES:
            raise ValueError(f"unknown negative_type {self.negative_type!r}")


@dataclass
class RankerModel:
    config: ModelConfig
    params: dict = field(repr=False)

    @classmethod
    def fresh(cls, config: ModelConfig, seed: int, dtype=np.float32):
        if config.causal or config.n_classes != 2:
            raise ValueError("ranker config needs causal=False and n_classes=2")
        return cls(config=config, params=nn.init_params(config, seed, dtype))


# --- synthetic negatives ----------------------------------------------------


def make_repetition_negative(seg, rng):
    """Duplicate one uniformly chosen sentence immediately after itself."""
    seg = list(seg)
    if len(seg) < 2:
        raise ValueError("repetition negative needs at least 2 sentences")
    i = rng.randrange(len(seg))
    return seg[: i + 1] + [seg[i]] + seg[i + 1 :]


def make_irrelevant_negative(seg, donor_pool, source_id, rng):
    """Insert a sentence from a different story at an interior position."""
    seg = list(seg)
    donors = [s for s in donor_pool if s.id != source_id]
    if not donors:
        raise ValueError("no eligible donor story")
    donor = donors[rng.randrange(len(donors))]
    sentence = donor.sentences[rng.randrange(len(donor.sentences))]
    pos = rng.randrange(1, len(seg))  # never the beginning or the end
    return seg[:pos] + [sentence] + seg[pos:]


def make_out_of_order_negative(seg, rng, max_tries=100):
    """Permute a random subset (size 2..n) of positions; redraw until the
    order actually changes."""
    seg = list(seg)
    if len(seg) < 3:
        raise ValueError("out-of-order negative needs at least 3 sentences")
    if len(set(seg)) < 2:
        raise OutOfOrderSkip
    for _ in range(max_tries):
        size = rng.randrange(2, len(seg) + 1)
        positions = sorted(rng.sample(range(len(seg)), size))
        values = [seg[p] for p in positions]
        shuffled = values[:]
        rng.shuffle(shuffled)
        out = seg[:]
        for p, v in zip(positions, shuffled):
            out[p] = v
        if out != seg:
            return out
    raise OutOfOrderSkip


def build_ranker_dataset(segments, corpus, seed: int):
    """One positive and one negative per segment, negative types cycling so
    each type gets ~1/3 of the negatives."""
    if not segments:
        raise ValueError("empty segment list")
    import random

    rng = random.Random(seed)
    data = []
    substituted = 0
    for i, seg in enumerate(segments):
        sentences = list(seg.sentences)
        data.append(LabeledSegment(sentences=tuple(sentences), label=1))
        neg_type = NEGATIVE_TYPES[i % 3]
        try:
            if neg_type == "Repetition":
                neg = make_repetition_negative(sentences, rng)
            elif neg_type == "Irrelevant":
                neg = make_irrelevant_negative(sentences, corpus, seg.source_id, rng)
            else:
                neg = make_out_of_order_negative(sentences, rng)
        except (OutOfOrderSkip, ValueError):
            neg = make_repetition_negative(sentences, rng)
            neg_type = "Repetition"
            substituted += 1
        data.append(LabeledSegment(sentences=tuple(neg), label=0, negative_type=neg_type))
    if substituted:
        log.info("substituted Repetition for %d unreorderable segments", substituted)
    return data


def save_ranker_dataset(data, stories_path, labels_path):
    with open(stories_path, "w", encoding="utf-8") as sfh, \
         open(labels_path, "w", encoding="utf-8") as lfh:
        for i, item in enumerate(data):
            sfh.write("\t".join(item.sentences) + "\n")
            lfh.write(f"{i}\t{item.label}\t{item.negative_type or '-'}\n")


def load_ranker_dataset(stories_path, labels_path):
    data = []
    with open(stories_path, encoding="utf-8") as sfh, \
         open(labels_path, encoding="utf-8") as lfh:
        for line, meta in zip(sfh, lfh):
            sentences = tuple(line.rstrip("\n").split("\t"))
            _idx, label, neg_type = meta.rstrip("\n").split("\t")
            data.append(LabeledSegment(
                sentences=sentences,
                label=int(label),
                negative_type=None if neg_type == "-" else neg_type,
            ))
    return data


# --- encoding and training --------------------------------------------------


def encode_segment(sentences, vocab: Vocab, n_ctx: int):
    ids = [vocab.bos_id]
    for i, s in enumerate(sentences):
        if i:
            ids.append(vocab.sep_id)
        ids.extend(vocab.encode(s))
    ids.append(vocab.eos_id)
    if len(ids) > n_ctx:
        log.warning("segment of %d tokens truncated to context %d", len(ids), n_ctx)
        ids = [vocab.bos_id] + ids[-(n_ctx - 1):]
    return ids


def _pad_id_batch(id_lists, pad_id=0):
    T = max(len(x) for x in id_lists)
    ids = np.full((len(id_lists), T), pad_id, dtype=np.int64)
    pad_mask = np.zeros((len(id_lists), T), dtype=bool)
    for b, x in enumerate(id_lists):
        ids[b, : len(x)] = x
        pad_mask[b, : len(x)] = True
    return ids, pad_mask


def train_ranker(model: RankerModel, data, hyper, vocab: Vocab):
    """Minibatch Adam on 2-way cross-entropy. Returns per-epoch mean loss."""
    labels_present = {d.label for d in data}
    if labels_present != {0, 1}:
        raise ValueError("training data must contain both labels")
    encoded = [encode_segment(d.sentences, vocab, model.config.n_ctx) for d in data]
    labels = np.array([d.label for d in data], dtype=np.int64)
    rng = np.random.default_rng(hyper.seed)
    opt = nn.Adam(model.params, lr=hyper.learning_rate)
    trace = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            ids, pad_mask = _pad_id_batch([encoded[i] for i in idx])
            loss, grads = nn.classifier_loss_and_grads(
                model.params, model.config, ids, labels[idx], pad_mask)
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss {loss} at epoch {epoch}")
            opt.step(model.params, grads)
            total += loss * len(idx)
            count += len(idx)
        trace.append(total / count)
        log.info("ranker epoch %d: loss %.4f", epoch, trace[-1])
    return trace


def score_segments(model: RankerModel, segment_list, vocab: Vocab) -> np.ndarray:
    """Coherent-class probability for each segment, one batched forward."""
    encoded = [encode_segment(s, vocab, model.config.n_ctx) for s in segment_list]
    ids, pad_mask = _pad_id_batch(encoded)
    logits = nn.classifier_logits(model.params, model.config, ids, pad_mask)
    probs = np.exp(nn.log_softmax(logits))
    return probs[:, 1]


def coherence_score(model: RankerModel, sentences, vocab: Vocab) -> float:
    if not sentences:
        raise ValueError("empty sentence list")
    return float(score_segments(model, [list(sentences)], vocab)[0])


def rank_candidates(model: RankerModel, sentences, position: int, candidates, vocab: Vocab):
    """Score each candidate inserted at `position` into the full story-in-
    construction; return (argmax index, scores). Ties go to the lowest index."""
    if not candidates:
        raise ValueError("empty candidate list")
    sentences = list(sentences)
    if not 0 < position < len(sentences):
        raise ValueError(f"position {position} is not a legal insertion point")
    variants = [sentences[:position] + [c] + sentences[position:] for c in candidates]
    scores = score_segments(model, variants, vocab)
    best = int(np.argmax(scores))  # argmax returns the first maximum
    return best, [float(s) for s in scores]
