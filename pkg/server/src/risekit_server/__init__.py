"""Reference HTTP scorer: a pretrained classifier behind the masking wire protocol."""

from .app import create_app
from .model import Classifier, ServerConfig

__all__ = ["Classifier", "ServerConfig", "create_app"]
