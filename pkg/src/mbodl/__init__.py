"""Market-by-order deep learning: feed handling, book rebuild, features,
labels, from-scratch networks, training and evaluation."""

__version__ = "0.1.0"
