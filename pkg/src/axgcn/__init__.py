"""Two-stream graph-convolution + attention sLSTM skeleton behaviour classifier."""

__version__ = "0.1.0"
