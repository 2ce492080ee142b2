"""Audio captioning toolkit: event-label-augmented GRU encoder-decoder."""

__version__ = "0.1.0"
