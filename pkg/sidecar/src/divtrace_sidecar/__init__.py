"""Scorer sidecar: embeddings and entailment probabilities over HTTP."""
from .backends import DEFAULT_REGISTRY, WIRE_LABELS, BackendError, resolve_backend
from .service import ServiceState, SidecarConfig, create_app

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "DEFAULT_REGISTRY",
    "ServiceState",
    "SidecarConfig",
    "WIRE_LABELS",
    "create_app",
    "resolve_backend",
    "__version__",
]
