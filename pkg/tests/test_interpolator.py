import numpy as np
import pytest

from storyfill.generator import GeneratorModel, SamplerConfig
from storyfill.interpolator import (
    InterpolationRequest,
    InterpolationState,
    StateError,
    bisectional_order,
    generate_story,
    generate_story_l2r,
    generate_story_noranking,
    interpolate_step,
    next_insertion_point,
    plan_bisectional,
)
from storyfill.model import ModelConfig
from storyfill.ranker import RankerModel

from conftest import randomize_head

BEGIN = "Jim decided to go hiking alone at the state park."
END = "Jim was finally rescued before the night turned cold."


@pytest.fixture
def generator(vocab, micro_lm_config):
    model = GeneratorModel.fresh(micro_lm_config, seed=0)
    randomize_head(model.params, seed=1)
    return model


@pytest.fixture
def loop_ranker(vocab, micro_ranker_config):
    model = RankerModel.fresh(micro_ranker_config, seed=2)
    randomize_head(model.params, seed=3)
    return model


def _request(k=5, m=3, schedule="bisectional", seed=0):
    return InterpolationRequest(
        beginning=BEGIN, ending=END, k=k, schedule=schedule, m=m,
        sampler=SamplerConfig(seed=seed, max_new_tokens=8))


def test_bisectional_order_k5_matches_midpoint_recursion():
    # for a 5-sentence story: middle (index 2), then 1, then 3
    assert bisectional_order(5) == [2, 1, 3]


def test_bisectional_order_small():
    assert bisectional_order(2) == []
    assert bisectional_order(3) == [1]
    # midpoint of gap (0, 3) rounds down to 1, then the remaining gap (1, 3)
    assert bisectional_order(4) == [1, 2]


def test_plan_bisectional_growing_indices():
    assert plan_bisectional(5) == [1, 1, 3]
    assert plan_bisectional(3) == [1]
    assert plan_bisectional(2) == []
    assert len(plan_bisectional(9)) == 7


def test_plan_length_is_k_minus_2():
    for k in range(2, 12):
        order = bisectional_order(k)
        assert len(order) == k - 2
        assert sorted(order) == list(range(1, k - 1))


def test_schedules_coincide_on_k3():
    state = InterpolationState(sentences=[BEGIN, END], k=3)
    rng = np.random.default_rng(0)
    points = {next_insertion_point(state, sched, rng)
              for sched in ("bisectional", "random", "sequential")}
    assert points == {1}


def test_sequential_gap_after_prefix():
    state = InterpolationState(sentences=[BEGIN, "Jim ate.", END], k=5, step=1)
    assert next_insertion_point(state, "sequential", np.random.default_rng(0)) == 2


def test_random_insertion_reproducible():
    state = InterpolationState(sentences=[BEGIN, "a.", "b.", END], k=6, step=2)
    a = next_insertion_point(state, "random", np.random.default_rng(9))
    b = next_insertion_point(state, "random", np.random.default_rng(9))
    assert a == b
    assert 1 <= a <= 3


def test_full_state_raises():
    state = InterpolationState(sentences=[BEGIN, END], k=2)
    with pytest.raises(StateError):
        next_insertion_point(state, "bisectional", np.random.default_rng(0))


def test_request_validation():
    with pytest.raises(ValueError):
        _request(k=1)
    with pytest.raises(ValueError):
        _request(m=0)
    with pytest.raises(ValueError):
        InterpolationRequest(beginning=BEGIN, ending=END, k=3, schedule="zigzag")


def test_k2_identity(generator, loop_ranker, vocab):
    story, trace = generate_story(_request(k=2), generator, loop_ranker, vocab)
    assert list(story.sentences) == [BEGIN, END]
    assert trace["steps"] == []


def test_endpoints_and_growth(generator, loop_ranker, vocab):
    request = _request(k=6, m=2)
    state = InterpolationState.initial(request)
    rng = np.random.default_rng(request.sampler.seed)
    lengths = [len(state.sentences)]
    while not state.done:
        interpolate_step(state, generator, loop_ranker, request, rng, vocab)
        assert state.sentences[0] == BEGIN
        assert state.sentences[-1] == END
        lengths.append(len(state.sentences))
    assert lengths == [2, 3, 4, 5, 6]


def test_step_trace_shape(generator, loop_ranker, vocab):
    request = _request(k=5, m=4)
    story, trace = generate_story(request, generator, loop_ranker, vocab)
    assert len(trace["steps"]) == 3
    for step in trace["steps"]:
        assert len(step["candidates"]) == 4
        assert len(step["scores"]) == 4
        assert step["chosen"] == int(np.argmax(step["scores"]))
        # locality: prompt context is exactly the two gap-adjacent sentences
        assert step["left"] in trace["story"] or any(
            step["left"] in s["candidates"] for s in trace["steps"])
        assert step["right"] in trace["story"] or any(
            step["right"] in s["candidates"] for s in trace["steps"])


def test_story_has_k_sentences(generator, loop_ranker, vocab):
    for k in (2, 3, 5):
        story, _ = generate_story(_request(k=k), generator, loop_ranker, vocab)
        assert len(story.sentences) == k
        assert story.sentences[0] == BEGIN
        assert story.sentences[-1] == END


def test_seed_determinism(generator, loop_ranker, vocab):
    a, _ = generate_story(_request(seed=21), generator, loop_ranker, vocab)
    b, _ = generate_story(_request(seed=21), generator, loop_ranker, vocab)
    assert a.sentences == b.sentences


def test_noranking_equals_m1(generator, loop_ranker, vocab):
    request = _request(m=1, seed=33)
    with_ranker, _ = generate_story(request, generator, loop_ranker, vocab)
    without, _ = generate_story_noranking(_request(m=7, seed=33), generator, vocab)
    assert with_ranker.sentences == without.sentences


def test_noranking_k2(generator, vocab):
    story, _ = generate_story_noranking(_request(k=2), generator, vocab)
    assert list(story.sentences) == [BEGIN, END]


def test_l2r_generation(generator, vocab):
    sampler = SamplerConfig(seed=0, max_new_tokens=8)
    assert generate_story_l2r(BEGIN, 1, generator, sampler, vocab) == [BEGIN]
    out = generate_story_l2r(BEGIN, 4, generator, sampler, vocab)
    assert len(out) == 4
    assert out[0] == BEGIN
    again = generate_story_l2r(BEGIN, 4, generator, sampler, vocab)
    assert out == again
    with pytest.raises(ValueError):
        generate_story_l2r(BEGIN, 0, generator, sampler, vocab)


def test_random_schedule_positions_legal(generator, loop_ranker, vocab):
    request = _request(k=7, m=1, schedule="random", seed=5)
    _story, trace = generate_story(request, generator, loop_ranker, vocab)
    growing_len = 2
    for step in trace["steps"]:
        assert 1 <= step["position"] <= growing_len - 1
        growing_len += 1
