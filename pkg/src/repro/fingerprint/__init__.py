from .filtering import connected_components, dedup, normalize_key, semantic_filter
from .grounding import ParagraphIndex, ground, ground_units
from .guides import exhaustive_scan, extract_configuration_guides, extract_framework_guides
from .pipeline import FingerprintResult, build_fingerprint, load_fingerprint
from .standardize import parse_fact_scope, standardize
from .types import (
    CONFIGURATION,
    EXHAUSTIVE,
    FRAMEWORK,
    Cluster,
    Criterion,
    Fingerprint,
    FingerprintConfig,
    GuideUnit,
    SourceRef,
)

__all__ = [
    "CONFIGURATION", "EXHAUSTIVE", "FRAMEWORK", "Cluster", "Criterion", "Fingerprint",
    "FingerprintConfig", "FingerprintResult", "GuideUnit", "ParagraphIndex", "SourceRef",
    "build_fingerprint", "connected_components", "dedup", "exhaustive_scan",
    "extract_configuration_guides", "extract_framework_guides", "ground", "ground_units",
    "load_fingerprint", "normalize_key", "parse_fact_scope", "semantic_filter", "standardize",
]
