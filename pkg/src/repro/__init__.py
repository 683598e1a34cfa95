"""Paper-to-code reproduction guided by a fingerprint of verifiable criteria."""

from .codegen import Workspace, generate_skeleton, initial_implementation
from .fingerprint import Fingerprint, build_fingerprint
from .paper import PaperDoc, load_paper, read_paper
from .reflect import LoopConfig, LoopTrace, reflect_loop
from .scoring import pr_leaf, score_rubric

__version__ = "0.1.0"

__all__ = [
    "Fingerprint",
    "LoopConfig",
    "LoopTrace",
    "PaperDoc",
    "Workspace",
    "build_fingerprint",
    "generate_skeleton",
    "initial_implementation",
    "load_paper",
    "pr_leaf",
    "read_paper",
    "reflect_loop",
    "score_rubric",
]
