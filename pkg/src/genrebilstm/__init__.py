"""Music genre classification with a from-scratch bidirectional LSTM."""

__version__ = "0.1.0"
