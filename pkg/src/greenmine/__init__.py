"""Mine model-registry metadata, harmonize carbon reports, classify, test and lint."""

__version__ = "0.1.0"
