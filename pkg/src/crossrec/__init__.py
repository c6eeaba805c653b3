"""Multi-domain graph recommender with disentangled shared and
domain-specific representations."""

__version__ = "0.1.0"
