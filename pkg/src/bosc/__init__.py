"""Open-set classification of synthetic-image source architectures by
backdoor-trigger probing."""

__version__ = "0.1.0"
