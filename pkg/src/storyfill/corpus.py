"""Story corpora: loading, splitting, segmentation, and a templated
synthetic corpus whose endings are informative about interior events.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from importlib import resources

ROCSTORIES_HEADER = [
    "storyid",
    "storytitle",
    "sentence1",
    "sentence2",
    "sentence3",
    "sentence4",
    "sentence5",
]


class CorpusError(ValueError):
    """Malformed corpus or grammar input."""


@dataclass(frozen=True)
class Story:
    id: str
    sentences: tuple[str, ...]

    def __post_init__(self):
        if len(self.sentences) < 2:
            raise CorpusError(f"story {self.id!r} has fewer than 2 sentences")
        for s in self.sentences:
            if not s.strip():
                raise CorpusError(f"story {self.id!r} contains an empty sentence")


@dataclass
class CorpusSplit:
    train: list[Story]
    dev: list[Story]
    test: list[Story]


@dataclass(frozen=True)
class StorySegment:
    """A run of consecutive sentences from one story."""

    source_id: str
    start: int
    sentences: tuple[str, ...]


def load_corpus(path, format: str = "rocstories-csv") -> list[Story]:
    """Load stories from a ROCStories-style CSV or a TAB-separated lines file."""
    if format == "rocstories-csv":
        return _load_rocstories_csv(path)
    if format == "plain-lines":
        return _load_plain_lines(path)
    raise CorpusError(f"unknown corpus format {format!r}")


def _load_rocstories_csv(path) -> list[Story]:
    stories = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0].strip().lower() == "storyid":
                continue
            if not row:
                continue
            if len(row) != len(ROCSTORIES_HEADER):
                raise CorpusError(
                    f"{path}:{lineno}: expected {len(ROCSTORIES_HEADER)} fields, got {len(row)}"
                )
            story_id, _title, *sentences = row
            for i, s in enumerate(sentences):
                if not s.strip():
                    raise CorpusError(f"{path}:{lineno}: empty sentence field {i + 1}")
            stories.append(Story(id=story_id, sentences=tuple(sentences)))
    return stories


def _load_plain_lines(path) -> list[Story]:
    stories = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line:
                continue
            sentences = line.split("\t")
            if len(sentences) < 2:
                raise CorpusError(f"{path}:{lineno + 1}: fewer than 2 sentences")
            for s in sentences:
                if not s.strip():
                    raise CorpusError(f"{path}:{lineno + 1}: empty sentence field")
            stories.append(Story(id=str(lineno), sentences=tuple(sentences)))
    return stories


def save_plain_lines(stories, path):
    with open(path, "w", encoding="utf-8") as fh:
        for story in stories:
            fh.write("\t".join(story.sentences) + "\n")


def split_corpus(stories, ratios, seed: int) -> CorpusSplit:
    """Deterministic seeded shuffle, then largest-remainder partition."""
    if any(r < 0 for r in ratios):
        raise ValueError(f"negative ratio in {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios {ratios} do not sum to 1")

    shuffled = list(stories)
    random.Random(seed).shuffle(shuffled)

    n = len(shuffled)
    sizes = _largest_remainder_sizes(n, ratios)
    train = shuffled[: sizes[0]]
    dev = shuffled[sizes[0] : sizes[0] + sizes[1]]
    test = shuffled[sizes[0] + sizes[1] :]
    return CorpusSplit(train=train, dev=dev, test=test)


def _largest_remainder_sizes(n, ratios):
    exact = [n * r for r in ratios]
    sizes = [int(e) for e in exact]
    remainders = [e - s for e, s in zip(exact, sizes)]
    shortfall = n - sum(sizes)
    # distribute leftover seats to the largest fractional remainders
    order = sorted(range(len(ratios)), key=lambda i: (-remainders[i], i))
    for i in order[:shortfall]:
        sizes[i] += 1
    return sizes


def segment_stories(stories, min_len: int, max_len: int) -> list[StorySegment]:
    """All consecutive-sentence windows with min_len <= |window| <= max_len."""
    if not 2 <= min_len <= max_len:
        raise ValueError(f"need 2 <= min_len <= max_len, got ({min_len}, {max_len})")
    segments = []
    for story in stories:
        n = len(story.sentences)
        for w in range(min_len, max_len + 1):
            for start in range(n - w + 1):
                segments.append(
                    StorySegment(
                        source_id=story.id,
                        start=start,
                        sentences=story.sentences[start : start + w],
                    )
                )
    return segments


def skip_segments(stories) -> list[StorySegment]:
    """Ordered subsequences that keep a story's first and last sentences but
    omit interior ones — the shapes a partially built story passes through
    while gaps are still being filled. For each story: every drop-one-interior
    subsequence, plus the endpoints-and-middle triple for 5-sentence stories.
    """
    segments = []
    for story in stories:
        s = story.sentences
        n = len(s)
        if n < 4:
            continue
        for drop in range(1, n - 1):
            segments.append(
                StorySegment(source_id=story.id, start=0,
                             sentences=s[:drop] + s[drop + 1 :])
            )
        if n >= 5:
            segments.append(
                StorySegment(source_id=story.id, start=0,
                             sentences=(s[0], s[(n - 1) // 2], s[n - 1]))
            )
    return segments


# --- synthetic corpus -------------------------------------------------------

REQUIRED_GRAMMAR_KEYS = ("protagonists", "activities", "complications")


def load_grammar(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            grammar = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}: invalid grammar JSON: {exc}") from None
    _validate_grammar(grammar, str(path))
    return grammar


def default_grammar() -> dict:
    text = resources.files("storyfill.data").joinpath("grammar.json").read_text("utf-8")
    grammar = json.loads(text)
    _validate_grammar(grammar, "builtin grammar")
    return grammar


def _validate_grammar(grammar, where):
    for key in REQUIRED_GRAMMAR_KEYS:
        if key not in grammar or not grammar[key]:
            raise CorpusError(f"{where}: grammar missing non-empty {key!r}")
    for i, act in enumerate(grammar["activities"]):
        if "opening" not in act or "details" not in act:
            raise CorpusError(f"{where}: activity {i} needs 'opening' and 'details'")
    for i, comp in enumerate(grammar["complications"]):
        for field in ("event", "consequence", "endings"):
            if field not in comp or not comp[field]:
                raise CorpusError(f"{where}: complication {i} needs non-empty {field!r}")


def generate_synthetic_corpus(grammar, n: int, seed: int) -> list[Story]:
    """Emit n templated 5-sentence stories.

    The ending is drawn from the chosen complication's ending pool with
    probability `coupling` (grammar key, default 0.9), otherwise from a
    different complication, so ending-conditioning carries information
    about the interior of the story.
    """
    if isinstance(grammar, (str, bytes)) or hasattr(grammar, "read_text"):
        grammar = load_grammar(grammar)
    coupling = float(grammar.get("coupling", 0.9))
    rng = random.Random(seed)
    complications = grammar["complications"]
    stories = []
    for i in range(n):
        name = rng.choice(grammar["protagonists"])
        activity = rng.choice(grammar["activities"])
        comp_idx = rng.randrange(len(complications))
        comp = complications[comp_idx]
        if rng.random() < coupling or len(complications) == 1:
            ending_comp = comp
        else:
            other = rng.randrange(len(complications) - 1)
            ending_comp = complications[other if other < comp_idx else other + 1]
        sentences = (
            f"{name} {activity['opening']}.",
            f"{name} {rng.choice(activity['details'])}.",
            f"{name} {comp['event']}.",
            f"{name} {comp['consequence']}.",
            f"{name} {rng.choice(ending_comp['endings'])}.",
        )
        stories.append(Story(id=f"syn-{i:05d}", sentences=sentences))
    return stories
