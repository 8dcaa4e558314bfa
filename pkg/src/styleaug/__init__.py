"""styleaug: masked-caption generative augmentation for few-shot fashion
style recognition.

The pipeline captions reference images, masks noun/adjective tokens, has an
LLM complete the masks, renders the completed captions to images through a
text-to-image backend, and trains a linear probe on combined real+synthetic
embeddings.  Deterministic mock backends make the whole thing runnable and
testable offline.
"""

from .dataset import (
    DatasetIndex,
    FewShotSplit,
    ImageRecord,
    STYLES,
    load_dataset,
    sample_few_shot,
)
from .captions import (
    MaskedCaption,
    TaggedCaption,
    LexiconTagger,
    mask_caption,
    pos_tag,
    tag_text,
    tokenize,
)
from .prompts import (
    CompletedCaption,
    MockLlmBackend,
    caption_image,
    fill_masks,
    render_prompt,
    validate_completion,
)
from .synthesis import GenConfig, MockT2IBackend, SyntheticSample, generate_image, run_augmentation
from .embeddings import (
    EmbeddingMatrix,
    MockEmbedProvider,
    embed_images,
    load_embeddings,
    persist_embeddings,
)
from .probe import (
    AdamW,
    ProbeModel,
    TrainConfig,
    combined_loss,
    predict,
    softmax_cross_entropy,
    train_probe,
)
from .metrics import (
    accuracy,
    cmmd_report,
    mmd_rbf,
    pairwise_diversity,
    ssim,
    word_frequencies,
)
from .errors import BackendError, ConfigError, DataError, StyleAugError

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "BackendError",
    "CompletedCaption",
    "ConfigError",
    "DataError",
    "DatasetIndex",
    "EmbeddingMatrix",
    "FewShotSplit",
    "GenConfig",
    "ImageRecord",
    "LexiconTagger",
    "MaskedCaption",
    "MockEmbedProvider",
    "MockLlmBackend",
    "MockT2IBackend",
    "ProbeModel",
    "STYLES",
    "StyleAugError",
    "SyntheticSample",
    "TaggedCaption",
    "TrainConfig",
    "accuracy",
    "caption_image",
    "cmmd_report",
    "combined_loss",
    "embed_images",
    "fill_masks",
    "generate_image",
    "load_dataset",
    "load_embeddings",
    "mask_caption",
    "mmd_rbf",
    "pairwise_diversity",
    "persist_embeddings",
    "pos_tag",
    "predict",
    "render_prompt",
    "run_augmentation",
    "sample_few_shot",
    "softmax_cross_entropy",
    "ssim",
    "tag_text",
    "tokenize",
    "train_probe",
    "validate_completion",
    "word_frequencies",
]
