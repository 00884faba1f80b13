"""Two-stage aortic vessel tree segmentation engine with phantom-based verification."""

__version__ = "0.1.0"
