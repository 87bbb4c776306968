"""Web-title to voice-title summarization models, decoding and evaluation."""

__version__ = "0.1.0"
