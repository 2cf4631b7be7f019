# deobstruct.core: imaging, masks, prompting, restoration, training, evaluation.
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from .errors import DeobstructError, LoadError, NumericError, ParameterError, ShapeError, ValidationError
from .imaging import AlphaMask, MaskKind, SceneImage, ScenePair, TransparencyClass, compose, cutout
from .synth import generate_pairs, ingest_pair, synth_background, synth_fence, synth_soft, synth_stroke
from .storage import load_dataset, load_pair, save_dataset, save_pair
from .masks import (
    MaskAdapter,
    MaskDetectorBackend,
    UNetMaskDetector,
    adapt_mask,
    binarize,
    detect_mask,
    resolve_mask,
)
from .encoders import ImageEncoder, OpenClipEncoders, TextEncoder, ToyImageEncoder, ToyTextEncoder, build_encoders
from .prompting import (
    Anchors,
    Embedding,
    EmbeddingSource,
    Instruction,
    InstructionCorpus,
    MultiModalPrompt,
    PromptMode,
    build_prompt,
    classify_transparency,
    cosine_sim,
    embed_image,
    embed_text,
    finetune_text_encoder,
    load_corpus,
)
from .network import RemovalNet, RemovalNetConfig, count_parameters, cross_attention, remove
from .system import RemovalSystem, TrainConfig, build_system, load_train_config
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .training import augment, crop_patch, l1_objective, train
from .runlog import RunLog, VerifyResult, GENESIS
from .metrics import Metric, mask_iou, psnr, register_metric, ssim
from .pipeline import InferenceTrace, Pipeline, infer
from .evaluation import MetricReport, evaluate

__all__ = [
    "DeobstructError",
    "LoadError",
    "NumericError",
    "ParameterError",
    "ShapeError",
    "ValidationError",
    "AlphaMask",
    "MaskKind",
    "SceneImage",
    "ScenePair",
    "TransparencyClass",
    "compose",
    "cutout",
    "generate_pairs",
    "ingest_pair",
    "synth_background",
    "synth_fence",
    "synth_soft",
    "synth_stroke",
    "load_dataset",
    "load_pair",
    "save_dataset",
    "save_pair",
    "MaskAdapter",
    "MaskDetectorBackend",
    "UNetMaskDetector",
    "adapt_mask",
    "binarize",
    "detect_mask",
    "resolve_mask",
    "ImageEncoder",
    "OpenClipEncoders",
    "TextEncoder",
    "ToyImageEncoder",
    "ToyTextEncoder",
    "build_encoders",
    "Anchors",
    "Embedding",
    "EmbeddingSource",
    "Instruction",
    "InstructionCorpus",
    "MultiModalPrompt",
    "PromptMode",
    "build_prompt",
    "classify_transparency",
    "cosine_sim",
    "embed_image",
    "embed_text",
    "finetune_text_encoder",
    "load_corpus",
    "RemovalNet",
    "RemovalNetConfig",
    "count_parameters",
    "cross_attention",
    "remove",
    "RemovalSystem",
    "TrainConfig",
    "build_system",
    "load_train_config",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "augment",
    "crop_patch",
    "l1_objective",
    "train",
    "RunLog",
    "VerifyResult",
    "GENESIS",
    "Metric",
    "mask_iou",
    "psnr",
    "register_metric",
    "ssim",
    "InferenceTrace",
    "Pipeline",
    "infer",
    "MetricReport",
    "evaluate",
]
