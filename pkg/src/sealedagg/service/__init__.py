"""HTTP service surfaces (FastAPI apps) and their in-process twin."""

from .apps import create_enclave_app, create_middleware_app, create_plain_app
from .dispatch import enclave_dispatch, error_reply, middleware_dispatch, plain_dispatch

__all__ = [
    "create_enclave_app",
    "create_middleware_app",
    "create_plain_app",
    "enclave_dispatch",
    "middleware_dispatch",
    "plain_dispatch",
    "error_reply",
]
