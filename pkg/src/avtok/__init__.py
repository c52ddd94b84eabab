"""Desk-scale audio-visual dialogue tokenization.

FSQ quantization, a causal landmark codec, the interleaved dialogue token
stream with its decoding grammar, a toy decoder-only LM, and landmark
geometry metrics.
"""

from .errors import (
    AlignmentError,
    AvtokError,
    ChecksumError,
    FormatError,
    GrammarError,
    NumericError,
    ValidationError,
    VersionError,
)
from .fsq import FACE_LEVELS, SPEECH_LEVELS, FsqConfig

__version__ = "0.1.0"
