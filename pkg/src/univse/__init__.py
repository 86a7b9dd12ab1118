"""Unified visual-semantic embeddings with explicit semantic components.

Captions are decomposed into objects, attribute pairs and relation
triples; each component is embedded on its own, combined with a sentence
encoding, and aligned with image region features under a multi-task
margin objective. The package ships a rule-based graph parser, a
synthetic fully-labeled corpus, adversarial caption generators and a
retrieval/grounding evaluation harness.
"""

from .adversary import AttackSpec, AttackSuite, attack_attribute, attack_object, attack_relation, build_attack_suite
from .composer import CaptionEncoding, CombinerParams, aggregate_components, combine_sequence, encode_caption
from .corpus import CaptionRecord, Corpus, load_corpus, save_captions_jsonl
from .estimator import UnifiedEmbedding
from .evalkit import (
    DisambiguationCase,
    RetrievalReport,
    UnifiedReport,
    adversarial_eval,
    disambiguation_accuracy,
    export_relevance,
    rank_candidates,
    recall_at_k,
    resolve_with_visual_cues,
    retrieval_report,
    unified_retrieval_map,
)
from .model import ALL_FAMILIES, DEFAULT_ALPHA, JointModel, ModelDims
from .objective import LossConfig, TrainBatch, assemble_batch, cosine, obj_loss, ranking_loss_bidirectional, relevance_map, sample_negatives, total_loss
from .semparse import AnnotatedToken, CaptionParseError, ConlluFormatError, SemanticGraph, load_conllu, parse_caption
from .synthcorpus import CorpusConfig, SyntheticScene, generate_ambiguity_cases, generate_corpus
from .trainkit import OptimConfig, ParamStore, backward, finite_diff_check, read_checkpoint, restore_model, train, write_checkpoint
from .vision import FeatureSet, ProjectionParams, RawFeatureMap, load_feature_file, project, write_feature_file
from .vocab import FusionParams, VocabularyTable, gated_fuse

__version__ = "0.1.0"

__all__ = [
    "ALL_FAMILIES",
    "AnnotatedToken",
    "AttackSpec",
    "AttackSuite",
    "CaptionEncoding",
    "CaptionParseError",
    "CaptionRecord",
    "CombinerParams",
    "ConlluFormatError",
    "Corpus",
    "CorpusConfig",
    "DEFAULT_ALPHA",
    "DisambiguationCase",
    "FeatureSet",
    "FusionParams",
    "JointModel",
    "LossConfig",
    "ModelDims",
    "OptimConfig",
    "ParamStore",
    "ProjectionParams",
    "RawFeatureMap",
    "RetrievalReport",
    "SemanticGraph",
    "SyntheticScene",
    "TrainBatch",
    "UnifiedEmbedding",
    "UnifiedReport",
    "VocabularyTable",
    "adversarial_eval",
    "aggregate_components",
    "assemble_batch",
    "attack_attribute",
    "attack_object",
    "attack_relation",
    "backward",
    "build_attack_suite",
    "combine_sequence",
    "cosine",
    "disambiguation_accuracy",
    "encode_caption",
    "export_relevance",
    "finite_diff_check",
    "gated_fuse",
    "generate_ambiguity_cases",
    "generate_corpus",
    "load_conllu",
    "load_corpus",
    "load_feature_file",
    "obj_loss",
    "parse_caption",
    "project",
    "rank_candidates",
    "ranking_loss_bidirectional",
    "read_checkpoint",
    "recall_at_k",
    "relevance_map",
    "resolve_with_visual_cues",
    "restore_model",
    "retrieval_report",
    "sample_negatives",
    "save_captions_jsonl",
    "total_loss",
    "train",
    "unified_retrieval_map",
    "write_checkpoint",
    "write_feature_file",
]
