"""Mixture-of-models inference layer."""

from socsim.inference.backends import Backend, MockBackend, RemoteBackend
from socsim.inference.cache import SemanticCache
from socsim.inference.embedding import cosine, embed_prompt
from socsim.inference.layer import InferenceLayer
from socsim.inference.router import Router
from socsim.inference.templates import Template, TemplateRegistry
from socsim.inference.types import BackendStats, DecodeParams, InferenceRequest, InferenceResponse

__all__ = [
    "Backend", "BackendStats", "DecodeParams", "InferenceLayer", "InferenceRequest",
    "InferenceResponse", "MockBackend", "RemoteBackend", "Router", "SemanticCache", "Template",
    "TemplateRegistry", "cosine", "embed_prompt",
]
