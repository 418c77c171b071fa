"""Turn story corpora into model training examples.

Interpolation examples come from consecutive-sentence segments: the segment
endpoints are the context pair and each interior sentence in turn is the
target. Covering every interior offset (not just the midpoint) exposes the
model to the full range of gap geometries the insertion schedules produce
at generation time, including asymmetric ones such as a target adjacent to
its left neighbor but several positions from its right neighbor.
"""

from __future__ import annotations

import logging

from storyfill.corpus import segment_stories
from storyfill.generator import (
    GenerationContext,
    SequenceLengthError,
    build_interpolation_example,
    build_l2r_example,
)

log = logging.getLogger(__name__)


def interpolation_examples(stories, vocab, n_ctx, min_len=3, max_len=5):
    examples = []
    skipped = 0
    for seg in segment_stories(stories, min_len, max_len):
        s = seg.sentences
        ctx = GenerationContext(left=s[0], right=s[-1])
        for target in s[1:-1]:
            try:
                examples.append(build_interpolation_example(ctx, target, vocab, n_ctx))
            except SequenceLengthError:
                skipped += 1
    if skipped:
        log.info("skipped %d over-length interpolation examples", skipped)
    return examples


def l2r_examples(stories, vocab, n_ctx):
    examples = []
    skipped = 0
    for story in stories:
        for i in range(1, len(story.sentences)):
            try:
                examples.append(build_l2r_example(
                    story.sentences[i - 1], story.sentences[i], vocab, n_ctx))
            except SequenceLengthError:
                skipped += 1
    if skipped:
        log.info("skipped %d over-length left-to-right examples", skipped)
    return examples
