"""Zero-shot all-in-one image restoration (ZeroAIR) at desk scale."""

__version__ = "0.1.0"
