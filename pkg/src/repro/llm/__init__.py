from .embed import HashEmbedder, HTTPEmbedder, cosine, cosine_matrix, top_k
from .gateway import (
    ChatRequest,
    ChatResponse,
    CostLedger,
    Gateway,
    HTTPChatBackend,
    Routing,
    ScriptedBackend,
    TranscriptStore,
    ask,
    call_cost,
    transcript_key,
)
from .structured import extract_code_block, extract_structured

__all__ = [
    "ChatRequest", "ChatResponse", "CostLedger", "Gateway", "HTTPChatBackend", "HTTPEmbedder",
    "HashEmbedder", "Routing", "ScriptedBackend", "TranscriptStore", "ask", "call_cost", "cosine",
    "cosine_matrix", "extract_code_block", "extract_structured", "top_k", "transcript_key",
]
