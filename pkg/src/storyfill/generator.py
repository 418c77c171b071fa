"""Autoregressive sentence generator.

Interpolation format puts the *right* (future) neighbor first:
BOS . enc(r) . SEP . enc(l) . SEP . enc(middle) . EOSENT
The left-to-right baseline drops the right block. Loss and perplexity are
computed only on the middle-sentence span plus its EOSENT.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from storyfill import model as nn
from storyfill.model import ModelConfig
from storyfill.tokenizer import Vocab

log = logging.getLogger(__name__)


class SequenceLengthError(ValueError):
    """Encoded example does not fit the model context window."""


@dataclass(frozen=True)
class GenerationContext:
    left: str
    right: str

    def __post_init__(self):
        if not self.left or not self.right:
            raise ValueError("generation context sentences must be non-empty")


@dataclass
class TrainingExample:
    input_ids: np.ndarray  # int64 [T]
    target_mask: np.ndarray  # bool [T], true exactly on middle + EOSENT

    def __len__(self):
        return len(self.input_ids)


@dataclass
class SamplerConfig:
    temperature: float = 0.9
    top_k: int = 40
    max_new_tokens: int = 48
    seed: int = 0
    greedy: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0")


@dataclass
class GeneratorModel:
    config: ModelConfig
    params: dict = field(repr=False)

    @classmethod
    def fresh(cls, config: ModelConfig, seed: int, dtype=np.float32):
        return cls(config=config, params=nn.init_params(config, seed, dtype))


@dataclass
class TrainingHyper:
    epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0


def _assemble(blocks, mask_from: int, vocab: Vocab, n_ctx: int) -> TrainingExample:
    ids = np.array(blocks, dtype=np.int64)
    if len(ids) > n_ctx:
        raise SequenceLengthError(f"example length {len(ids)} exceeds context {n_ctx}")
    mask = np.zeros(len(ids), dtype=bool)
    mask[mask_from:] = True
    return TrainingExample(input_ids=ids, target_mask=mask)


def build_interpolation_example(ctx: GenerationContext, middle: str, vocab: Vocab,
                                n_ctx: int = 128) -> TrainingExample:
    blocks = (
        [vocab.bos_id]
        + vocab.encode(ctx.right)
        + [vocab.sep_id]
        + vocab.encode(ctx.left)
        + [vocab.sep_id]
    )
    mask_from = len(blocks)
    blocks += vocab.encode(middle) + [vocab.eosent_id]
    return _assemble(blocks, mask_from, vocab, n_ctx)


def build_l2r_example(left: str, middle: str, vocab: Vocab, n_ctx: int = 128) -> TrainingExample:
    blocks = [vocab.bos_id] + vocab.encode(left) + [vocab.sep_id]
    mask_from = len(blocks)
    blocks += vocab.encode(middle) + [vocab.eosent_id]
    return _assemble(blocks, mask_from, vocab, n_ctx)


def pad_batch(examples, pad_id=0):
    """Stack variable-length examples into (ids, target_mask, pad_mask)."""
    T = max(len(ex) for ex in examples)
    B = len(examples)
    ids = np.full((B, T), pad_id, dtype=np.int64)
    target_mask = np.zeros((B, T), dtype=bool)
    pad_mask = np.zeros((B, T), dtype=bool)
    for b, ex in enumerate(examples):
        n = len(ex)
        ids[b, :n] = ex.input_ids
        target_mask[b, :n] = ex.target_mask
        pad_mask[b, :n] = True
    return ids, target_mask, pad_mask


def score_tokens(model: GeneratorModel, example: TrainingExample):
    """Log-probability of each masked token under the model, in order."""
    if example.input_ids.max() >= model.config.vocab_size:
        raise ValueError("example contains ids outside the model vocabulary")
    ids, target_mask, pad_mask = pad_batch([example])
    return nn.lm_token_logprobs(model.params, model.config, ids, target_mask, pad_mask)[0]


def batch_loss(model: GeneratorModel, examples) -> float:
    """Masked cross-entropy on a batch, without gradients (for dev eval)."""
    ids, target_mask, pad_mask = pad_batch(examples)
    rows = nn.lm_token_logprobs(model.params, model.config, ids, target_mask, pad_mask)
    total = sum(-lp for row in rows for lp in row)
    count = sum(len(row) for row in rows)
    return total / count


def train_generator(model: GeneratorModel, examples, hyper: TrainingHyper):
    """Minibatch Adam on masked cross-entropy. Returns per-epoch mean loss."""
    if not examples:
        raise ValueError("empty training set")
    rng = np.random.default_rng(hyper.seed)
    opt = nn.Adam(model.params, lr=hyper.learning_rate)
    trace = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(examples))
        total, count = 0.0, 0
        for start in range(0, len(order), hyper.batch_size):
            batch = [examples[i] for i in order[start : start + hyper.batch_size]]
            ids, target_mask, pad_mask = pad_batch(batch)
            loss, grads = nn.lm_loss_and_grads(model.params, model.config, ids, target_mask, pad_mask)
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss {loss} at epoch {epoch}, batch {start // hyper.batch_size}")
            opt.step(model.params, grads)
            n = int(target_mask.sum())
            total += loss * n
            count += n
        trace.append(total / count)
        log.info("generator epoch %d: loss %.4f", epoch, trace[-1])
    return trace


def _sample_one(model: GeneratorModel, prompt_ids, sampler: SamplerConfig, vocab: Vocab, rng):
    banned = [vocab.pad_id, vocab.bos_id, vocab.eos_id, vocab.sep_id]
    ids = list(prompt_ids)
    generated = []
    for _ in range(sampler.max_new_tokens):
        arr = np.array([ids], dtype=np.int64)
        logits = nn.lm_logits(model.params, model.config, arr)[0, -1].astype(np.float64)
        logits[banned] = -np.inf
        if sampler.greedy:
            nxt = int(np.argmax(logits))
        else:
            logits = logits / sampler.temperature
            if sampler.top_k:
                keep = np.argsort(logits)[-sampler.top_k :]
                filtered = np.full_like(logits, -np.inf)
                filtered[keep] = logits[keep]
                logits = filtered
            probs = np.exp(logits - logits.max())
            probs /= probs.sum()
            nxt = int(rng.choice(len(probs), p=probs))
        if nxt == vocab.eosent_id:
            break
        generated.append(nxt)
        ids.append(nxt)
        if len(ids) >= model.config.n_ctx:
            break
    return vocab.decode(generated)


def interpolation_prompt(ctx: GenerationContext, vocab: Vocab):
    return (
        [vocab.bos_id]
        + vocab.encode(ctx.right)
        + [vocab.sep_id]
        + vocab.encode(ctx.left)
        + [vocab.sep_id]
    )


def l2r_prompt(left: str, vocab: Vocab):
    return [vocab.bos_id] + vocab.encode(left) + [vocab.sep_id]


def sample_candidates(model: GeneratorModel, ctx: GenerationContext, m: int,
                      sampler: SamplerConfig, vocab: Vocab, rng=None,
                      prompt_ids=None):
    """m independently sampled middle-sentence candidates for one gap.

    Empty generations are resampled up to 5 times, then kept as-is; the
    ranker is responsible for quality control.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if prompt_ids is None:
        prompt_ids = interpolation_prompt(ctx, vocab)
    if len(prompt_ids) >= model.config.n_ctx:
        raise SequenceLengthError(f"prompt length {len(prompt_ids)} exceeds context {model.config.n_ctx}")
    if rng is None:
        rng = np.random.default_rng(sampler.seed)
    candidates = []
    for _ in range(m):
        text = _sample_one(model, prompt_ids, sampler, vocab, rng)
        retries = 0
        while not text.strip() and not sampler.greedy and retries < 5:
            text = _sample_one(model, prompt_ids, sampler, vocab, rng)
            retries += 1
        candidates.append(text.strip())
    return candidates
