"""Joint semantic segmentation and semantic boundary detection at desk scale."""

__version__ = "0.1.0"
