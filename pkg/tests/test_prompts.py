import json

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from styleaug.captions import mask_caption, tag_text
from styleaug.errors import BackendError, CaptionRejected, DataError
from styleaug.prompts import (
    CAPTION_PREFIX,
    HttpLlmBackend,
    InteractionLog,
    LlmConfig,
    MockLlmBackend,
    ReplayLlmBackend,
    caption_image,
    extract_fills,
    fill_masks,
    load_prompt,
    render_prompt,
    validate_completion,
)

FIG_COMPLETED = (
    "a pastel-themed oversized sweater with a cute graphic print, lavender "
    "tutu skirt, patterned knee-high socks, and platform shoes, embodying a "
    "kawaii street fashion style"
)


# ---------------------------------------------------------------- templates


def test_class_template_exact():
    assert (
        render_prompt("class", class_name="lolita")
        == "A photo of a woman wearing a lolita style outfit."
    )


def test_caption_template_exact():
    assert (
        render_prompt("caption", caption="a red dress")
        == "A photo of a woman wearing a red dress."
    )


def test_mlp_template_embeds_completed_caption_verbatim():
    # oracle: manual substitution into the template
    expected = f"A photo of a woman wearing {FIG_COMPLETED}."
    assert render_prompt("mlp", caption=FIG_COMPLETED) == expected


def test_render_normalizes_trailing_period_and_spaces():
    assert (
        render_prompt("caption", caption="a red  dress.")
        == "A photo of a woman wearing a red dress."
    )


def test_render_missing_arguments():
    with pytest.raises(DataError):
        render_prompt("class")
    with pytest.raises(DataError):
        render_prompt("caption")
    with pytest.raises(DataError):
        render_prompt("mlp", caption="red dress")  # not article-led
    with pytest.raises(DataError):
        render_prompt("zap", class_name="x")


def test_prompt_files_load():
    assert "within 30 words" in load_prompt("captioning")
    assert "[MASK]" in load_prompt("fill_masks")


# ---------------------------------------------------------------- captioning


class ScriptedLlm:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = 0

    def chat(self, system, user, image=None):
        self.calls += 1
        return self.responses.pop(0)


def test_caption_mock_is_deterministic(fixture_dataset):
    img = next((fixture_dataset / "train" / "fairy").glob("*.png"))
    backend = MockLlmBackend(seed=0)
    a = caption_image(backend, img)
    b = caption_image(backend, img)
    assert a == b
    assert a.startswith("a ")
    assert len(a.split()) <= 30
    assert "fairy" in a


def test_caption_rejects_overlong_response(fixture_dataset):
    img = next((fixture_dataset / "train" / "fairy").glob("*.png"))
    long = CAPTION_PREFIX + " a " + " ".join(["word"] * 35)
    backend = ScriptedLlm([long, long])
    with pytest.raises(CaptionRejected, match="length>30"):
        caption_image(backend, img)


def test_caption_retries_once_then_rejects(fixture_dataset, tmp_path):
    img = next((fixture_dataset / "train" / "fairy").glob("*.png"))
    backend = ScriptedLlm(["no prefix here", "still no prefix"])
    log = InteractionLog(tmp_path / "log.jsonl")
    with pytest.raises(CaptionRejected, match="missing prefix") as exc:
        caption_image(backend, img, log=log)
    assert backend.calls == 2  # one retry with the instruction re-sent
    assert exc.value.raw == "still no prefix"
    archived = InteractionLog.read(tmp_path / "log.jsonl")
    assert archived[-1]["verdict"] == "rejected"
    assert archived[-1]["response"] == "still no prefix"


def test_caption_recovers_on_retry(fixture_dataset):
    img = next((fixture_dataset / "train" / "fairy").glob("*.png"))
    good = CAPTION_PREFIX + " a red dress."
    backend = ScriptedLlm(["bad", good])
    assert caption_image(backend, img) == "a red dress"
    assert backend.calls == 2


# ---------------------------------------------------------------- fills


def test_fill_single_mask_accepted():
    mc = mask_caption(tag_text("red dress"), 0.5, seed=0)
    assert mc.masked_text.count("[MASK]") == 1
    cc = fill_masks(MockLlmBackend(seed=0), mc)
    assert cc.accepted
    assert "[MASK]" not in cc.completed_text


def test_fill_unfilled_mask_rejected():
    mc = mask_caption(tag_text("a red dress"), 1.0, seed=0)
    backend = ScriptedLlm(["a [MASK] dress"])
    cc = fill_masks(backend, mc)
    assert not cc.accepted
    assert cc.validation.reason == "unfilled mask"
    assert cc.filled_spans == []


def test_fill_requires_masked_text():
    mc = mask_caption(tag_text("a red dress"), 0.0, seed=0)
    with pytest.raises(DataError):
        fill_masks(MockLlmBackend(), mc)


def test_fill_reference_caption_keeps_anchors_in_order():
    text = (
        "a pastel-themed outfit with a white graphic top, lavender tutu skirt, "
        "patterned knee-high socks, and platform shoes."
    )
    tc = tag_text(text)
    mc = mask_caption(tc, 0.5, seed=3)
    cc = fill_masks(MockLlmBackend(seed=1), mc)
    assert cc.accepted
    kept = [w.lower() for w in mc.unmasked_words()]
    comp = [w.strip(".,") for w in cc.completed_text.lower().split()]
    it = iter(comp)
    assert all(any(k == c for c in it) for k in kept)


# ---------------------------------------------------------------- validation


def test_validate_one_for_one_fill_accepted():
    mc = mask_caption(tag_text("a red dress"), 0.5, seed=0)
    filled = mc.masked_text.replace("[MASK]", "blue")
    assert validate_completion(mc, filled).accepted


def test_validate_altered_non_masked_token_rejected():
    tc = tag_text("a white graphic top with socks")
    mc = mask_caption(tc, 0.2, seed=4)  # masks exactly one token
    # fill the mask one-for-one, then mutate one kept content word
    mutate_at = next(
        i for i, t in enumerate(tc.tokens) if t.maskable and i not in mc.mask_positions
    )
    words = [
        "bold" if i in mc.mask_positions else ("tee" if i == mutate_at else t.surface)
        for i, t in enumerate(tc.tokens)
    ]
    result = validate_completion(mc, " ".join(words))
    assert not result.accepted
    assert result.reason == "non-masked token altered"


def test_validate_multiword_fill_accepted():
    mc = mask_caption(tag_text("a pastel-themed sweater"), 0.2, seed=1)
    assert len(mc.mask_positions) == 1
    filled = mc.masked_text.replace("[MASK]", "pastel-themed oversized")
    assert validate_completion(mc, filled).accepted


def test_validate_overlong_completion_rejected():
    mc = mask_caption(tag_text("a red dress"), 0.5, seed=0)
    filled = mc.masked_text.replace("[MASK]", " ".join(["very"] * 20))
    result = validate_completion(mc, filled)
    assert not result.accepted
    assert result.reason == "completion too long"


def test_validate_flags_are_toggleable():
    mc = mask_caption(tag_text("a red dress"), 0.5, seed=0)
    text = mc.masked_text  # still contains [MASK]
    assert not validate_completion(mc, text).accepted
    assert validate_completion(mc, text, check_unfilled=False).accepted


FILL_WORDS = ["zephyr", "quartz", "umbra", "nimbus", "vortex"]
MUTATIONS = ["glitch", "strobe", "pixel"]


@given(
    seed=st.integers(0, 2**32),
    data=st.data(),
)
@settings(max_examples=60, deadline=None)
def test_validation_properties(seed, data):
    tc = tag_text("a crimson velvet gown with golden lace trim and satin gloves")
    mc = mask_caption(tc, 0.5, seed)
    words = []
    k = 0
    for i, tok in enumerate(tc.tokens):
        if i in mc.mask_positions:
            words.append(data.draw(st.sampled_from(FILL_WORDS)))
            k += 1
        else:
            words.append(tok.surface)
    completion = " ".join(words)
    assert validate_completion(mc, completion).accepted
    # mutate one non-masked word token -> always rejected
    idx = data.draw(
        st.sampled_from(
            [i for i, t in enumerate(tc.tokens) if t.is_word and i not in mc.mask_positions]
        )
    )
    mutated = [
        data.draw(st.sampled_from(MUTATIONS)) if i == idx else w for i, w in enumerate(words)
    ]
    assert not validate_completion(mc, " ".join(mutated)).accepted


def test_extract_fills_single_words():
    tc = tag_text("a red dress with lace")
    mc = mask_caption(tc, 0.5, seed=2)
    filled_words = []
    out = []
    k = 0
    for i, tok in enumerate(tc.tokens):
        if i in mc.mask_positions:
            fill = f"fill{k}"
            out.append(fill)
            filled_words.append((i, fill))
            k += 1
        else:
            out.append(tok.surface)
    fills = extract_fills(mc, " ".join(out))
    assert fills == filled_words


def test_extract_fills_multiword():
    tc = tag_text("a red dress")
    mc = mask_caption(tc, 0.4, seed=0)
    (pos,) = sorted(mc.mask_positions)
    completion = mc.masked_text.replace("[MASK]", "soft flowing")
    fills = extract_fills(mc, completion)
    assert fills == [(pos, "soft flowing")]


# ---------------------------------------------------------------- transport


def make_http_backend(handler, attempts=3):
    transport = httpx.MockTransport(handler)
    client = httpx.Client(transport=transport)
    sleeps = []
    cfg = LlmConfig(endpoint="http://llm.test/v1/chat", max_attempts=attempts)
    backend = HttpLlmBackend(cfg, client=client, sleep=sleeps.append)
    return backend, sleeps


def test_http_backend_parses_chat_response():
    def handler(request):
        body = json.loads(request.content)
        assert body["temperature"] == 0.0
        assert body["messages"][0]["role"] == "system"
        return httpx.Response(200, json={"choices": [{"message": {"content": "hi there"}}]})

    backend, _ = make_http_backend(handler)
    assert backend.chat("sys", "user") == "hi there"


def test_http_backend_retries_on_5xx_with_backoff():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(500, text="boom")
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    backend, sleeps = make_http_backend(handler)
    assert backend.chat("sys", "user") == "ok"
    assert len(calls) == 3
    assert sleeps == [0.25, 0.5]  # exponential from the 250 ms base


def test_http_backend_no_retry_on_4xx():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad request")

    backend, _ = make_http_backend(handler)
    with pytest.raises(BackendError, match="status 400"):
        backend.chat("sys", "user")
    assert len(calls) == 1


def test_http_backend_exhausts_retries():
    def handler(request):
        return httpx.Response(503, text="unavailable")

    backend, sleeps = make_http_backend(handler)
    with pytest.raises(BackendError, match="after 3 attempts"):
        backend.chat("sys", "user")
    assert sleeps == [0.25, 0.5]


# ---------------------------------------------------------------- replay


def test_replay_reproduces_completions(tmp_path):
    captions = [
        "a crimson velvet gown with golden lace trim",
        "a pastel outfit with white graphic top and lavender skirt",
    ]
    log_path = tmp_path / "log.jsonl"
    log = InteractionLog(log_path)
    mock = MockLlmBackend(seed=5)
    recorded = []
    for i, text in enumerate(captions):
        mc = mask_caption(tag_text(text), 0.5, seed=i)
        recorded.append(fill_masks(mock, mc, log=log))

    replay = ReplayLlmBackend(log_path)
    for i, text in enumerate(captions):
        mc = mask_caption(tag_text(text), 0.5, seed=i)
        cc = fill_masks(replay, mc)
        assert cc.completed_text == recorded[i].completed_text
        assert cc.filled_spans == recorded[i].filled_spans


def test_replay_unknown_request_errors(tmp_path):
    log_path = tmp_path / "log.jsonl"
    InteractionLog(log_path).record("fill", "s", "u", None, "r", "accepted")
    replay = ReplayLlmBackend(log_path)
    mc = mask_caption(tag_text("a red dress"), 0.5, seed=0)
    with pytest.raises(BackendError, match="no recorded response"):
        fill_masks(replay, mc)
