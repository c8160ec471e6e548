"""Utterance-level neural confidence measures for joint CTC-attention ASR."""

__version__ = "0.1.0"
FORMAT_VERSION = 1
