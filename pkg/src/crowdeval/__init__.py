"""Benchmark-free crowdsourced LLM evaluation: models set, answer and grade each other's questions."""

__version__ = "0.1.0"
