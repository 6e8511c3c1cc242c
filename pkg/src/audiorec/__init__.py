"""Co-listening graph embeddings plus a two-tower retrieval model for
audiobook and podcast recommendation."""

__version__ = "0.1.0"
