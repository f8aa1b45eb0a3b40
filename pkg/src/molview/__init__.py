"""molview: Multi-view self-supervised pretraining of molecular graph encoders."""

__version__ = "0.1.0"
