"""κ-hop truncated independent natural policy gradient for networked Markov potential games."""

__version__ = "0.1.0"
