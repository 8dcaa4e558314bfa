"""Caption tokenization, part-of-speech tagging, and token masking.

Only nouns and adjectives are maskable.  Tagging is rule-based so runs are
reproducible offline: a closed-class stoplist, a curated fashion lexicon
(``data/lexicon.txt``), then suffix heuristics, defaulting to OTHER.  An
external tagger can be plugged in through a line-oriented subprocess
protocol (one ``token`` in, one ``token<TAB>TAG`` out).
"""

from __future__ import annotations

import re
import shlex
import subprocess
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .errors import DataError
from .rng import SplitMix64

NOUN = "NOUN"
ADJ = "ADJ"
OTHER = "OTHER"

MASK_TOKEN = "[MASK]"

# words plus hyphen/apostrophe compounds stay single tokens; any other
# non-space character is its own token
_TOKEN_RE = re.compile(r"[A-Za-z0-9]+(?:['’-][A-Za-z0-9]+)*|[^\sA-Za-z0-9]")

_WORD_RE = re.compile(r"[A-Za-z0-9]")

# closed-class words are never maskable
STOPWORDS = frozenset(
    """
    a an the this that these those some any each every no
    and or but nor so yet both either neither
    of in on at by for with from to into onto over under through
    above below between among around about against along across
    is are was were be been being am do does did has have had
    he she it they them her his its their theirs him hers
    i you we us our your my me mine yours ours
    as if then than because while when where which who whom whose what
    not very too also just only quite rather
    """.split()
)

_ADJ_SUFFIXES = (("ed", 5), ("ous", 5), ("ful", 5), ("ish", 5))
_NOUN_SUFFIXES = (("ness", 6), ("wear", 5))


@dataclass(frozen=True)
class Token:
    """A surface string plus its character span in the source text."""

    surface: str
    start: int
    end: int

    @property
    def is_word(self) -> bool:
        return bool(_WORD_RE.search(self.surface))


@dataclass(frozen=True)
class TaggedToken:
    surface: str
    start: int
    end: int
    tag: str

    @property
    def maskable(self) -> bool:
        return self.tag in (NOUN, ADJ)

    @property
    def is_word(self) -> bool:
        return bool(_WORD_RE.search(self.surface))


@dataclass
class TaggedCaption:
    text: str
    tokens: list[TaggedToken]

    def maskable_indices(self) -> list[int]:
        return [i for i, t in enumerate(self.tokens) if t.maskable]

    def words(self) -> list[str]:
        return [t.surface for t in self.tokens if t.is_word]


@dataclass
class MaskedCaption:
    source: TaggedCaption
    mask_positions: frozenset[int]
    ratio: float
    seed: int
    masked_text: str = field(default="")

    def __post_init__(self):
        if not self.masked_text:
            self.masked_text = render_masked(self.source, self.mask_positions)

    def unmasked_words(self) -> list[str]:
        return [
            t.surface
            for i, t in enumerate(self.source.tokens)
            if t.is_word and i not in self.mask_positions
        ]


def tokenize(text: str) -> list[Token]:
    """Split text into word and punctuation tokens with source spans.

    Hyphenated and apostrophe compounds ("knee-high", "it's") remain single
    tokens; every other non-space character is a token of its own.
    Raises on empty or whitespace-only input.
    """
    if not text or not text.strip():
        raise DataError("cannot tokenize empty text")
    return [Token(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def load_lexicon(path: str | Path | None = None) -> dict[str, str]:
    """Read a ``word<TAB>TAG`` lexicon file; defaults to the packaged one."""
    if path is None:
        source = resources.files("styleaug").joinpath("data/lexicon.txt").read_text("utf-8")
    else:
        source = Path(path).read_text("utf-8")
    lex: dict[str, str] = {}
    for lineno, line in enumerate(source.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in (NOUN, ADJ, OTHER):
            raise DataError(f"bad lexicon line {lineno}: {line!r}")
        lex[parts[0].lower()] = parts[1]
    return lex


class LexiconTagger:
    """Stoplist, then lexicon lookup, then suffix heuristics, else OTHER."""

    def __init__(self, lexicon: dict[str, str] | str | Path | None = None):
        if lexicon is None or isinstance(lexicon, (str, Path)):
            lexicon = load_lexicon(lexicon)
        self.lexicon = lexicon

    def tag_word(self, word: str) -> str:
        w = word.lower()
        if w in STOPWORDS:
            return OTHER
        if w in self.lexicon:
            return self.lexicon[w]
        # hyphenated compounds inherit the tag of their head (last part)
        if "-" in w:
            head = w.rsplit("-", 1)[-1]
            if head in self.lexicon:
                return self.lexicon[head]
        for suffix, min_len in _ADJ_SUFFIXES:
            if len(w) >= min_len and w.endswith(suffix):
                return ADJ
        for suffix, min_len in _NOUN_SUFFIXES:
            if len(w) >= min_len and w.endswith(suffix):
                return NOUN
        return OTHER


class ExternalTagger:
    """Adapter for an external tagger speaking ``token -> token<TAB>TAG`` lines."""

    def __init__(self, command: str | list[str]):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)

    def tag_words(self, words: list[str]) -> list[str]:
        try:
            proc = subprocess.run(
                self.command,
                input="\n".join(words) + "\n",
                capture_output=True,
                text=True,
                timeout=60,
            )
        except OSError as exc:
            raise DataError(f"external tagger failed to start: {exc}") from exc
        if proc.returncode != 0:
            raise DataError(f"external tagger exited {proc.returncode}: {proc.stderr.strip()}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != len(words):
            raise DataError(
                f"external tagger returned {len(lines)} lines for {len(words)} tokens"
            )
        tags = []
        for ln in lines:
            parts = ln.split("\t")
            if len(parts) != 2 or parts[1] not in (NOUN, ADJ, OTHER):
                raise DataError(f"external tagger produced bad line: {ln!r}")
            tags.append(parts[1])
        return tags


def pos_tag(
    tokens: list[Token],
    tagger: LexiconTagger | ExternalTagger | None = None,
    text: str | None = None,
) -> TaggedCaption:
    """Tag tokens NOUN/ADJ/OTHER; punctuation is always OTHER.

    ``text`` should be the string the tokens were cut from; without it the
    caption text is reconstructed from token spans with single-space gaps.
    """
    if not tokens:
        raise DataError("cannot tag an empty token list")
    if tagger is None:
        tagger = _default_tagger()

    word_idx = [i for i, t in enumerate(tokens) if t.is_word]
    if isinstance(tagger, ExternalTagger):
        word_tags = tagger.tag_words([tokens[i].surface for i in word_idx])
        tag_at = dict(zip(word_idx, word_tags))
    else:
        tag_at = {i: tagger.tag_word(tokens[i].surface) for i in word_idx}

    tagged = [
        TaggedToken(t.surface, t.start, t.end, tag_at.get(i, OTHER))
        for i, t in enumerate(tokens)
    ]
    if text is None:
        text = _reconstruct(tokens, max(t.end for t in tokens))
    return TaggedCaption(text=text, tokens=tagged)


def tag_text(text: str, tagger: LexiconTagger | ExternalTagger | None = None) -> TaggedCaption:
    return pos_tag(tokenize(text), tagger, text=text)


def mask_count(ratio: float, maskable: int) -> int:
    """Number of tokens to mask: round-half-up(ratio * maskable), at least 1
    whenever ratio > 0 and anything is maskable.

    The ratio is treated as the decimal the caller wrote (0.7 means 7/10), so
    exact .5 products round up regardless of float representation.
    """
    if not 0.0 <= ratio <= 1.0:
        raise DataError(f"mask ratio must be in [0, 1], got {ratio}")
    if ratio == 0.0 or maskable == 0:
        return 0
    exact = Fraction(ratio).limit_denominator(10**9) * maskable
    k = int(exact + Fraction(1, 2))
    return min(max(k, 1), maskable)


def mask_caption(tc: TaggedCaption, ratio: float, seed: int) -> MaskedCaption:
    """Mask a uniform random subset of the maskable (noun/adjective) tokens.

    The subset is the first ``mask_count`` entries of a seeded Fisher-Yates
    shuffle of the maskable positions, so each position is selected with
    equal probability.  Deterministic for fixed (caption, ratio, seed).
    """
    maskable = tc.maskable_indices()
    k = mask_count(ratio, len(maskable))
    if ratio > 0 and not maskable:
        raise DataError("caption has no maskable tokens")
    gen = SplitMix64(seed)
    chosen = frozenset(gen.shuffle(list(maskable))[:k])
    return MaskedCaption(source=tc, mask_positions=chosen, ratio=ratio, seed=seed)


def render_masked(tc: TaggedCaption, positions: frozenset[int] | set[int]) -> str:
    """Source text with each masked token's span replaced by ``[MASK]``."""
    for p in positions:
        if not (0 <= p < len(tc.tokens)) or not tc.tokens[p].maskable:
            raise DataError(f"mask position {p} is not a maskable token")
    out: list[str] = []
    cursor = 0
    for i, tok in enumerate(tc.tokens):
        out.append(tc.text[cursor : tok.start])
        out.append(MASK_TOKEN if i in positions else tok.surface)
        cursor = tok.end
    out.append(tc.text[cursor:])
    return "".join(out)


def _reconstruct(tokens: list[Token], end: int) -> str:
    buf = [" "] * end
    for t in tokens:
        buf[t.start : t.end] = t.surface
    return "".join(buf)


_TAGGER: LexiconTagger | None = None


def _default_tagger() -> LexiconTagger:
    global _TAGGER
    if _TAGGER is None:
        _TAGGER = LexiconTagger()
    return _TAGGER
