"""Prompt rendering, LLM-backed captioning and mask filling, and completion
validation.

Three prompt strategies drive image generation: a class-name template, a
verbatim reference caption, or a masked-and-completed caption.  The LLM wire
protocol is a minimal JSON chat shape (system instruction + user query);
every interaction can be recorded to a JSON-lines log and replayed offline.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol

import httpx

from ._http import request_with_retry
from .captions import MASK_TOKEN, MaskedCaption, tokenize
from .dataset import STYLES, ImageRecord
from .errors import BackendError, CaptionRejected, DataError
from .rng import SplitMix64, derive_seed, fnv1a64

STRATEGIES = ("class", "caption", "mlp")

CAPTION_PREFIX = "A photo of a woman wearing"
MAX_CAPTION_WORDS = 30


def load_prompt(name: str) -> str:
    """Verbatim instruction text shipped with the package (prompts/<name>.txt)."""
    return resources.files("styleaug").joinpath(f"prompts/{name}.txt").read_text("utf-8")


def render_prompt(strategy: str, class_name: str | None = None, caption: str | None = None) -> str:
    """Render the exact generation prompt for a strategy.

    class    -> "A photo of a woman wearing a {CLASS} style outfit."
    caption  -> "A photo of a woman wearing {CAPTION}."
    mlp      -> "A photo of a woman wearing {COMPLETED_CAPTION}."

    Caption payloads must be article-led noun phrases ("a ..." / "an ...").
    The result always carries a single trailing period and no double spaces.
    """
    if strategy not in STRATEGIES:
        raise DataError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if strategy == "class":
        if not class_name:
            raise DataError("class strategy requires class_name")
        body = f"a {class_name} style outfit"
    else:
        if not caption:
            raise DataError(f"{strategy} strategy requires a caption")
        payload = caption.strip().rstrip(".").strip()
        lowered = payload.lower()
        if not (lowered.startswith("a ") or lowered.startswith("an ")):
            raise DataError(f"caption payload must start with an article: {payload[:40]!r}")
        body = payload
    text = f"A photo of a woman wearing {body}."
    return re.sub(r"  +", " ", text)


# --------------------------------------------------------------------------
# backends
# --------------------------------------------------------------------------


class LlmBackend(Protocol):
    def chat(self, system: str, user: str, image: bytes | None = None) -> str: ...


@dataclass
class LlmConfig:
    endpoint: str
    model: str = "gpt-4o-mini"
    temperature: float = 0.0
    max_in_flight: int = 4
    max_attempts: int = 3
    backoff_base: float = 0.25
    api_key: str | None = None


class HttpLlmBackend:
    """Chat-completion client: POST {model, temperature, messages} -> choices."""

    def __init__(self, config: LlmConfig, client: httpx.Client | None = None, sleep=time.sleep):
        self.config = config
        self._client = client or httpx.Client(timeout=60.0)
        self._sleep = sleep

    def chat(self, system: str, user: str, image: bytes | None = None) -> str:
        if image is None:
            content: object = user
        else:
            data_url = "data:image/png;base64," + base64.b64encode(image).decode("ascii")
            content = [
                {"type": "text", "text": user},
                {"type": "image_url", "image_url": {"url": data_url}},
            ]
        body = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": content},
            ],
        }
        headers = {}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        resp = request_with_retry(
            self._client,
            "POST",
            self.config.endpoint,
            json=body,
            headers=headers,
            max_attempts=self.config.max_attempts,
            backoff_base=self.config.backoff_base,
            sleep=self._sleep,
        )
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"malformed chat response: {resp.text[:200]}") from exc


# weighted fill vocabularies for the deterministic mock; weights shape the
# word-frequency reports produced by mock runs
_MOCK_POOLS: dict[str, list[tuple[str, int]]] = {
    "conservative": [("tailored", 3), ("beige", 2), ("modest", 2), ("blazer", 2), ("classic", 1)],
    "dressy": [("elegant", 4), ("satin", 2), ("gown", 2), ("polished", 2), ("pearl", 1)],
    "ethnic": [("bohemian", 4), ("floral", 3), ("brimmed", 2), ("woven", 2), ("fringed", 1)],
    "fairy": [("pastel", 6), ("cute", 2), ("soft", 2), ("dreamy", 1), ("lavender", 1)],
    "feminine": [("romantic", 3), ("blush", 2), ("delicate", 2), ("chiffon", 1)],
    "gal": [("glamorous", 3), ("flashy", 2), ("leopard", 2), ("glossy", 1)],
    "girlish": [("sweet", 3), ("pink", 3), ("ribbon", 2), ("dainty", 1)],
    "kireime-casual": [("crisp", 3), ("clean", 2), ("relaxed", 2), ("simple", 1)],
    "lolita": [("lace", 3), ("petticoat", 2), ("bonnet", 2), ("whimsical", 1)],
    "mode": [("monochrome", 3), ("sleek", 2), ("black", 2), ("minimalist", 1)],
    "natural": [("earthy", 3), ("linen", 2), ("loose", 2), ("beige", 1)],
    "retro": [("vintage", 4), ("plaid", 2), ("mustard", 2), ("checkered", 1)],
    "rock": [("leather", 3), ("studded", 2), ("black", 2), ("edgy", 1)],
    "street": [("urban", 3), ("oversized", 3), ("graphic", 2), ("chunky", 1)],
}
_FALLBACK_POOL: list[tuple[str, int]] = [("stylish", 2), ("modern", 2), ("classic", 1), ("cotton", 1)]

_MOCK_GARMENTS = ("dress", "skirt", "blouse", "jacket", "sweater", "coat", "boots", "scarf")


def _weighted_pick(pool: list[tuple[str, int]], gen: SplitMix64) -> str:
    total = sum(w for _, w in pool)
    r = gen.below(total)
    acc = 0
    for word, w in pool:
        acc += w
        if r < acc:
            return word
    return pool[-1][0]


def _style_in_text(text: str) -> str | None:
    low = text.lower()
    # longest names first so e.g. "kireime-casual" wins over bare substrings
    for style in sorted(STYLES, key=len, reverse=True):
        if re.search(rf"(?<![a-z]){re.escape(style)}(?![a-z])", low):
            return style
    return None


class MockLlmBackend:
    """Offline stand-in: deterministic captions and style-conditioned fills.

    Captions are derived from the image's embedded style token (or a hash of
    its bytes) and always satisfy the captioning contract.  Fill words come
    from per-style weighted pools, keyed by (backend seed, mask position,
    style, query hash) so identical requests return identical fills.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.calls = 0

    def chat(self, system: str, user: str, image: bytes | None = None) -> str:
        self.calls += 1
        if image is not None:
            return self._caption(image)
        return self._fill(user)

    def _image_style(self, image: bytes) -> str:
        try:
            from io import BytesIO

            from PIL import Image

            with Image.open(BytesIO(image)) as img:
                tag = getattr(img, "text", {}).get("styleaug:style")
            if tag in STYLES:
                return tag
        except Exception:
            pass
        return STYLES[fnv1a64(image) % len(STYLES)]

    def _caption(self, image: bytes) -> str:
        style = self._image_style(image)
        digest = hashlib.sha256(image).hexdigest()[:16]
        gen = SplitMix64(derive_seed(self.seed, "caption", digest))
        pool = _MOCK_POOLS.get(style, _FALLBACK_POOL)
        w1 = _weighted_pick(pool, gen)
        w2 = _weighted_pick(pool, gen)
        g1 = _MOCK_GARMENTS[gen.below(len(_MOCK_GARMENTS))]
        g2 = _MOCK_GARMENTS[gen.below(len(_MOCK_GARMENTS))]
        return (
            f"{CAPTION_PREFIX} a {w1} {g1} with a {w2} {g2}, "
            f"reflecting a {style} fashion style."
        )

    def _fill(self, query: str) -> str:
        style = _style_in_text(query) or STYLES[fnv1a64(query) % len(STYLES)]
        pool = _MOCK_POOLS.get(style, _FALLBACK_POOL)
        qhash = fnv1a64(query)
        out: list[str] = []
        pos = 0
        cursor = 0
        while True:
            hit = query.find(MASK_TOKEN, cursor)
            if hit < 0:
                out.append(query[cursor:])
                break
            out.append(query[cursor:hit])
            gen = SplitMix64(derive_seed(self.seed, "fill", pos, style, qhash))
            fill = _weighted_pick(pool, gen)
            if gen.below(4) == 0:
                second = _weighted_pick(pool, gen)
                if second != fill:
                    fill = f"{fill} {second}"
            out.append(fill)
            cursor = hit + len(MASK_TOKEN)
            pos += 1
        return "".join(out)


class ReplayLlmBackend:
    """Serve recorded responses from an interaction log; no network involved."""

    def __init__(self, log_path: str | Path):
        self._responses: dict[str, str] = {}
        for entry in InteractionLog.read(log_path):
            self._responses[entry["key"]] = entry["response"]

    def chat(self, system: str, user: str, image: bytes | None = None) -> str:
        key = interaction_key(system, user, image)
        if key not in self._responses:
            raise BackendError("no recorded response for this request")
        return self._responses[key]


def interaction_key(system: str, user: str, image: bytes | None) -> str:
    h = hashlib.sha256()
    h.update(system.encode("utf-8"))
    h.update(b"\x00")
    h.update(user.encode("utf-8"))
    h.update(b"\x00")
    if image:
        h.update(hashlib.sha256(image).digest())
    return h.hexdigest()


class InteractionLog:
    """Append-only JSONL record of every LLM request/response/verdict.

    Safe for concurrent writers; each record is flushed as one line.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.entries: list[dict] = []
        self._lock = threading.Lock()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def record(
        self,
        kind: str,
        system: str,
        user: str,
        image: bytes | None,
        response: str,
        verdict: str,
        reason: str | None = None,
    ) -> None:
        entry = {
            "kind": kind,
            "key": interaction_key(system, user, image),
            "user": user,
            "image_sha256": hashlib.sha256(image).hexdigest() if image else None,
            "response": response,
            "verdict": verdict,
            "reason": reason,
        }
        with self._lock:
            self.entries.append(entry)
            if self.path:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")

    @staticmethod
    def read(path: str | Path) -> list[dict]:
        out = []
        for line in Path(path).read_text("utf-8").splitlines():
            if line.strip():
                out.append(json.loads(line))
        return out


# --------------------------------------------------------------------------
# captioning step
# --------------------------------------------------------------------------


def caption_image(
    backend: LlmBackend,
    image: ImageRecord | str | Path,
    log: InteractionLog | None = None,
) -> str:
    """Caption one reference image and return the stored payload ("a ...").

    The response must start with the required prefix and the payload must be
    article-led and at most 30 words.  A non-conforming response is retried
    once with the instruction re-sent; a second violation raises
    CaptionRejected with the raw response archived in the log.
    """
    path = Path(image.path if isinstance(image, ImageRecord) else image)
    data = path.read_bytes()
    system = load_prompt("captioning")
    last_reason = "no response"
    raw = ""
    for _ in range(2):
        raw = backend.chat(system, "", image=data)
        payload, reason = _check_caption(raw)
        if reason is None:
            if log:
                log.record("caption", system, "", data, raw, "accepted")
            return payload
        last_reason = reason
    if log:
        log.record("caption", system, "", data, raw, "rejected", last_reason)
    raise CaptionRejected(last_reason, raw)


def _check_caption(raw: str) -> tuple[str, str | None]:
    text = raw.strip()
    if not text.lower().startswith(CAPTION_PREFIX.lower()):
        return "", "missing prefix"
    payload = text[len(CAPTION_PREFIX) :].strip().rstrip(".").strip()
    lowered = payload.lower()
    if not (lowered.startswith("a ") or lowered.startswith("an ")):
        return "", "payload not article-led"
    words = payload.split()
    if len(words) > MAX_CAPTION_WORDS:
        return "", f"length>{MAX_CAPTION_WORDS}"
    return payload, None


# --------------------------------------------------------------------------
# fill-in-the-masks step
# --------------------------------------------------------------------------


@dataclass
class ValidationResult:
    accepted: bool
    reason: str | None = None


@dataclass
class CompletedCaption:
    masked: MaskedCaption
    completed_text: str
    filled_spans: list[tuple[int, str]] = field(default_factory=list)
    validation: ValidationResult = field(default_factory=lambda: ValidationResult(True))

    @property
    def accepted(self) -> bool:
        return self.validation.accepted

    def to_dict(self) -> dict:
        return {
            "masked_text": self.masked.masked_text,
            "mask_positions": sorted(self.masked.mask_positions),
            "ratio": self.masked.ratio,
            "mask_seed": self.masked.seed,
            "completed_text": self.completed_text,
            "filled_spans": [[i, w] for i, w in self.filled_spans],
            "accepted": self.validation.accepted,
            "reason": self.validation.reason,
        }


def _word_list(text: str) -> list[str]:
    if not text or not text.strip():
        return []
    return [t.surface.lower() for t in tokenize(text) if t.is_word]


def _is_subsequence(needle: list[str], haystack: list[str]) -> bool:
    it = iter(haystack)
    return all(any(w == h for h in it) for w in needle)


def validate_completion(
    mc: MaskedCaption,
    text: str,
    *,
    check_unfilled: bool = True,
    check_order: bool = True,
    check_length: bool = True,
) -> ValidationResult:
    """Accept a completion iff no [MASK] survives, every non-masked source
    token appears in order (case-insensitive, punctuation-tolerant), and the
    completion is at most twice the source word count.  Each criterion can be
    toggled off individually."""
    if not text or not text.strip():
        return ValidationResult(False, "empty completion")
    if check_unfilled and MASK_TOKEN in text:
        return ValidationResult(False, "unfilled mask")
    comp_words = _word_list(text)
    if check_order:
        kept = [w.lower() for w in mc.unmasked_words()]
        if not _is_subsequence(kept, comp_words):
            return ValidationResult(False, "non-masked token altered")
    if check_length:
        source_words = len(mc.source.words())
        if len(comp_words) > 2 * source_words:
            return ValidationResult(False, "completion too long")
    return ValidationResult(True)


def extract_fills(mc: MaskedCaption, text: str) -> list[tuple[int, str]]:
    """Best-effort attribution of completion words to mask positions.

    Non-masked source words anchor a greedy alignment; the words falling in
    the gap covering a run of masks are split contiguously across that run.
    Returns [] when the anchors cannot be aligned (rejected completions).
    """
    comp_words = _word_list(text)
    # ordered word-token positions: anchors vs masks
    items: list[tuple[str, int | str]] = []
    mask_order: list[int] = []
    for i, tok in enumerate(mc.source.tokens):
        if not tok.is_word:
            continue
        if i in mc.mask_positions:
            items.append(("mask", i))
            mask_order.append(i)
        else:
            items.append(("anchor", tok.surface.lower()))
    if not mask_order:
        return []

    # greedy anchor matching over the completion words
    matches: list[int] = []
    j = 0
    for kind, val in items:
        if kind != "anchor":
            continue
        while j < len(comp_words) and comp_words[j] != val:
            j += 1
        if j == len(comp_words):
            return []
        matches.append(j)
        j += 1

    fills: dict[int, list[str]] = {i: [] for i in mask_order}
    anchor_no = 0
    idx = 0
    n = len(items)
    while idx < n:
        if items[idx][0] == "anchor":
            anchor_no += 1
            idx += 1
            continue
        run = []
        while idx < n and items[idx][0] == "mask":
            run.append(items[idx][1])
            idx += 1
        lo = matches[anchor_no - 1] + 1 if anchor_no > 0 else 0
        hi = matches[anchor_no] if anchor_no < len(matches) else len(comp_words)
        gap = comp_words[lo:hi]
        base, extra = divmod(len(gap), len(run))
        cursor = 0
        for k, mask_idx in enumerate(run):
            take = base + (1 if k < extra else 0)
            fills[mask_idx] = gap[cursor : cursor + take]
            cursor += take
    return [(i, " ".join(fills[i])) for i in mask_order]


def fill_masks(
    backend: LlmBackend,
    mc: MaskedCaption,
    log: InteractionLog | None = None,
    **validation_flags,
) -> CompletedCaption:
    """Send the fill-in-the-masks instruction and validate the full returned
    sentence.  Semantic failures come back as Rejected results, never raise."""
    if MASK_TOKEN not in mc.masked_text:
        raise DataError("masked caption contains no [MASK] token")
    system = load_prompt("fill_masks")
    raw = backend.chat(system, mc.masked_text)
    text = raw.strip()
    verdict = validate_completion(mc, text, **validation_flags)
    fills = extract_fills(mc, text) if verdict.accepted else []
    if log:
        log.record(
            "fill",
            system,
            mc.masked_text,
            None,
            raw,
            "accepted" if verdict.accepted else "rejected",
            verdict.reason,
        )
    return CompletedCaption(masked=mc, completed_text=text, filled_spans=fills, validation=verdict)
