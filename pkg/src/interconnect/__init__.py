"""Layer-weighted bridging of a speech-style encoder to a text decoder,
with the full surrounding training and analysis pipeline at desk scale."""

__version__ = "0.1.0"
