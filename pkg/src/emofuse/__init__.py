"""Score-level fusion toolkit for categorical speech emotion recognition."""

__version__ = "0.1.0"
