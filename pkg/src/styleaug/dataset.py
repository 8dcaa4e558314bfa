"""Dataset indexing and seeded few-shot sampling.

Expected directory layout::

    root/<split>/<style>/<image files>

with ``split`` one of train/val/test and ``style`` one of the 14 supported
style names.  Record ids are ``<split>/<style>/<filename>`` and are stable
across machines.  Sampling is reproducible from (index contents, n_shot,
seed) alone; see :mod:`styleaug.rng` for the exact PRNG definitions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError
from .rng import SplitMix64, fnv1a64

STYLES = (
    "conservative",
    "dressy",
    "ethnic",
    "fairy",
    "feminine",
    "gal",
    "girlish",
    "kireime-casual",
    "lolita",
    "mode",
    "natural",
    "retro",
    "rock",
    "street",
)

# girlish has no test images, so evaluation runs drop it by default
DEFAULT_EXCLUDE = ("girlish",)

SPLITS = ("train", "val", "test")
N_SHOT_CHOICES = (1, 2, 4, 8, 16)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".webp", ".bmp"}


def validate_style(name: str) -> str:
    if name not in STYLES:
        raise DataError(f"unknown style {name!r}; expected one of {', '.join(STYLES)}")
    return name


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    label: str
    split: str


@dataclass
class DatasetIndex:
    root: str
    records: list[ImageRecord]
    warnings: list[str] = field(default_factory=list)
    excluded: tuple[str, ...] = ()

    def __post_init__(self):
        by_key: dict[tuple[str, str], list[ImageRecord]] = {}
        for rec in self.records:
            by_key.setdefault((rec.split, rec.label), []).append(rec)
        for recs in by_key.values():
            recs.sort(key=lambda r: r.id)
        self._by_key = by_key

    def styles(self) -> list[str]:
        return sorted({rec.label for rec in self.records})

    def eval_styles(self) -> list[str]:
        """Styles that have test images (post-exclusion); the benchmark class set."""
        return sorted({rec.label for rec in self.records if rec.split == "test"})

    def split_records(self, split: str, style: str | None = None) -> list[ImageRecord]:
        if style is not None:
            return list(self._by_key.get((split, style), []))
        out: list[ImageRecord] = []
        for (sp, _), recs in sorted(self._by_key.items()):
            if sp == split:
                out.extend(recs)
        return out

    def pool(self, style: str) -> list[ImageRecord]:
        """Few-shot candidate pool: train plus val records, sorted by id."""
        recs = self.split_records("train", style) + self.split_records("val", style)
        return sorted(recs, key=lambda r: r.id)

    def counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for (split, style), recs in sorted(self._by_key.items()):
            out.setdefault(split, {})[style] = len(recs)
        return out

    def save(self, path: str | Path) -> None:
        doc = {
            "root": self.root,
            "excluded": list(self.excluded),
            "warnings": self.warnings,
            "records": [
                {"id": r.id, "path": r.path, "label": r.label, "split": r.split}
                for r in self.records
            ],
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetIndex":
        doc = json.loads(Path(path).read_text())
        records = [ImageRecord(**r) for r in doc["records"]]
        return cls(
            root=doc["root"],
            records=records,
            warnings=list(doc.get("warnings", [])),
            excluded=tuple(doc.get("excluded", [])),
        )


def load_dataset(root: str | Path, exclude: tuple[str, ...] = DEFAULT_EXCLUDE) -> DatasetIndex:
    """Walk ``root`` and index every readable image file.

    Styles listed in ``exclude`` are removed from the test partition only,
    so their train/val images stay available.  Unknown style directories and
    unreadable files are skipped with a warning recorded on the index.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")

    records: list[ImageRecord] = []
    warnings: list[str] = []
    saw_style_dir = False
    for split in SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            continue
        for style_dir in sorted(split_dir.iterdir()):
            if not style_dir.is_dir():
                continue
            style = style_dir.name
            if style not in STYLES:
                warnings.append(f"skipping unknown style directory {split}/{style}")
                continue
            saw_style_dir = True
            if split == "test" and style in exclude:
                warnings.append(f"excluding {style} from test partition")
                continue
            n_before = len(records)
            for f in sorted(style_dir.iterdir()):
                if not f.is_file() or f.suffix.lower() not in IMAGE_EXTENSIONS:
                    continue
                try:
                    size = f.stat().st_size
                except OSError as exc:
                    warnings.append(f"skipping unreadable file {f}: {exc}")
                    continue
                if size == 0:
                    warnings.append(f"skipping empty file {f}")
                    continue
                rec_id = f"{split}/{style}/{f.name}"
                records.append(ImageRecord(id=rec_id, path=str(f), label=style, split=split))
            if len(records) == n_before:
                warnings.append(f"empty style directory {split}/{style}")

    if not saw_style_dir:
        raise DataError(f"no styles found under {root}")
    return DatasetIndex(root=str(root), records=records, excluded=tuple(exclude), warnings=warnings)


@dataclass
class FewShotSplit:
    n_shot: int
    seed: int
    train: list[ImageRecord]
    val: list[ImageRecord]

    def styles(self) -> list[str]:
        return sorted({r.label for r in self.train})

    def train_by_style(self, style: str) -> list[ImageRecord]:
        return sorted((r for r in self.train if r.label == style), key=lambda r: r.id)

    def val_by_style(self, style: str) -> list[ImageRecord]:
        return sorted((r for r in self.val if r.label == style), key=lambda r: r.id)

    def save(self, path: str | Path) -> None:
        doc = {
            "n_shot": self.n_shot,
            "seed": self.seed,
            "train": [vars(r) for r in self.train],
            "val": [vars(r) for r in self.val],
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FewShotSplit":
        doc = json.loads(Path(path).read_text())
        return cls(
            n_shot=doc["n_shot"],
            seed=doc["seed"],
            train=[ImageRecord(**r) for r in doc["train"]],
            val=[ImageRecord(**r) for r in doc["val"]],
        )


def sample_few_shot(
    index: DatasetIndex,
    n_shot: int,
    seed: int,
    styles: list[str] | None = None,
) -> FewShotSplit:
    """Draw disjoint train/val sets of exactly ``n_shot`` records per style.

    Per style, the candidate pool (train plus val partitions, never test) is
    sorted lexicographically by id and shuffled with a SplitMix64 generator
    seeded by ``seed XOR fnv1a64(style)``; the first ``n_shot`` records form
    the train set and the next ``n_shot`` the validation set.
    """
    if n_shot not in N_SHOT_CHOICES:
        raise DataError(f"n_shot must be one of {N_SHOT_CHOICES}, got {n_shot}")
    if styles is None:
        styles = index.eval_styles() or index.styles()
    if not styles:
        raise DataError("index contains no styles to sample from")

    train: list[ImageRecord] = []
    val: list[ImageRecord] = []
    for style in sorted(styles):
        pool = index.pool(style)
        need = 2 * n_shot
        if len(pool) < need:
            raise DataError(
                f"style {style!r}: need {need}, have {len(pool)} in the train/val pool"
            )
        gen = SplitMix64(seed ^ fnv1a64(style))
        shuffled = gen.shuffle(list(pool))
        train.extend(shuffled[:n_shot])
        val.extend(shuffled[n_shot : 2 * n_shot])
    return FewShotSplit(n_shot=n_shot, seed=seed, train=train, val=val)
