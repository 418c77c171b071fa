"""Iterative story construction: schedule an insertion point, sample
candidates from the generator for that gap, rerank with the coherence
classifier, insert, repeat until the story reaches length k.
"""

from __future__ import annotations

import logging
from bisect import insort, bisect_left
from dataclasses import dataclass, field, asdict

import numpy as np

from storyfill.corpus import Story
from storyfill.generator import (
    GenerationContext,
    GeneratorModel,
    SamplerConfig,
    l2r_prompt,
    sample_candidates,
)
from storyfill.ranker import RankerModel, rank_candidates
from storyfill.tokenizer import Vocab

log = logging.getLogger(__name__)

SCHEDULES = ("bisectional", "random", "sequential")
EMPTY_SENTENCE_PLACEHOLDER = "..."


class StateError(RuntimeError):
    """Story-in-construction already at its target length."""


@dataclass
class InterpolationRequest:
    beginning: str
    ending: str
    k: int
    schedule: str = "bisectional"
    m: int = 10
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if not self.beginning.strip() or not self.ending.strip():
            raise ValueError("beginning and ending must be non-empty")


@dataclass
class InterpolationState:
    sentences: list[str]
    k: int
    step: int = 0

    @classmethod
    def initial(cls, request: InterpolationRequest):
        return cls(sentences=[request.beginning, request.ending], k=request.k)

    @property
    def done(self):
        return len(self.sentences) >= self.k


def bisectional_order(k: int) -> list[int]:
    """Final story positions (0-based) in generation order: repeatedly split
    the largest gap at its midpoint, leftmost gap first on ties."""
    if k < 2:
        raise ValueError("k must be >= 2")
    order = []
    gaps = [(0, k - 1)]
    while gaps:
        lo, hi = max(gaps, key=lambda g: (g[1] - g[0], -g[0]))
        gaps.remove((lo, hi))
        if hi - lo < 2:
            continue
        mid = (lo + hi) // 2
        order.append(mid)
        gaps.append((lo, mid))
        gaps.append((mid, hi))
    return order


def plan_bisectional(k: int) -> list[int]:
    """The bisectional order expressed as insertion indices into the growing
    sentence list (length k - 2)."""
    filled = [0, k - 1]
    plan = []
    for pos in bisectional_order(k):
        idx = bisect_left(filled, pos)
        plan.append(idx)
        insort(filled, pos)
    return plan


def next_insertion_point(state: InterpolationState, schedule: str, rng) -> int:
    if state.done:
        raise StateError(f"story already has {len(state.sentences)} of {state.k} sentences")
    n = len(state.sentences)
    if schedule == "sequential":
        return n - 1
    if schedule == "random":
        return int(rng.integers(1, n))
    return plan_bisectional(state.k)[state.step]


def interpolate_step(state: InterpolationState, generator: GeneratorModel,
                     ranker: RankerModel | None, request: InterpolationRequest,
                     rng, vocab: Vocab):
    """One insertion. The generator sees only the two gap-adjacent sentences;
    the ranker scores candidates in the whole story-in-construction."""
    position = next_insertion_point(state, request.schedule, rng)
    ctx = GenerationContext(left=state.sentences[position - 1],
                            right=state.sentences[position])
    candidates = sample_candidates(generator, ctx, request.m, request.sampler,
                                   vocab, rng=rng)
    if ranker is not None:
        chosen, scores = rank_candidates(ranker, state.sentences, position,
                                         candidates, vocab)
    else:
        chosen, scores = 0, None
    sentence = candidates[chosen]
    if not sentence:
        log.warning("empty candidate chosen at position %d; inserting placeholder", position)
        sentence = EMPTY_SENTENCE_PLACEHOLDER
    state.sentences.insert(position, sentence)
    state.step += 1
    return {
        "position": position,
        "left": ctx.left,
        "right": ctx.right,
        "candidates": candidates,
        "scores": scores,
        "chosen": chosen,
        "sentences_after": list(state.sentences),
    }


def generate_story(request: InterpolationRequest, generator: GeneratorModel,
                   ranker: RankerModel | None, vocab: Vocab, story_id: str = "generated"):
    """Run the full iterative procedure: f(b, e; k) -> k-sentence story."""
    state = InterpolationState.initial(request)
    rng = np.random.default_rng(request.sampler.seed)
    steps = []
    while not state.done:
        steps.append(interpolate_step(state, generator, ranker, request, rng, vocab))
    story = Story(id=story_id, sentences=tuple(state.sentences))
    trace = {
        "request": {**asdict(request), "sampler": asdict(request.sampler)},
        "steps": steps,
        "story": list(story.sentences),
    }
    return story, trace


def generate_story_noranking(request: InterpolationRequest, generator: GeneratorModel,
                             vocab: Vocab, story_id: str = "generated"):
    """Single-candidate variant: m forced to 1, no ranker."""
    req = InterpolationRequest(
        beginning=request.beginning, ending=request.ending, k=request.k,
        schedule=request.schedule, m=1, sampler=request.sampler,
    )
    return generate_story(req, generator, None, vocab, story_id=story_id)


def generate_story_l2r(beginning: str, k: int, generator: GeneratorModel,
                       sampler: SamplerConfig, vocab: Vocab) -> list[str]:
    """Left-to-right baseline: each sentence conditioned on its predecessor
    only; no ending constraint. Returns the k sentences."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(sampler.seed)
    sentences = [beginning]
    for _ in range(k - 1):
        prompt = l2r_prompt(sentences[-1], vocab)
        text = sample_candidates(generator, None, 1, sampler, vocab,
                                 rng=rng, prompt_ids=prompt)[0]
        sentences.append(text or EMPTY_SENTENCE_PLACEHOLDER)
    return sentences
