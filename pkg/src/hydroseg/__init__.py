"""Hard- and soft-attention segmentation of hydrocephalus brain MR phantoms."""

__version__ = "0.1.0"
