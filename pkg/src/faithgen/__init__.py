"""Faithful KG-to-text generation: contrastive training, hallucination control tokens,
and judge-based faithfulness evaluation."""

__version__ = "0.1.0"
