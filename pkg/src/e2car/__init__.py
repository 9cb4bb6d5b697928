"""EEG artifact removal with a verified 1-D to 2-D convolution rewrite."""

__version__ = "0.1.0"
