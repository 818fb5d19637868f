"""pitchflow: singer-style pitch curve generation by masked flow infilling."""

__version__ = "0.1.0"
