"""
Finite scalar quantization in a few lines
=========================================

Each latent channel is squashed with a scaled tanh and rounded to one of
``L`` levels. The joint code is a mixed-radix integer, so levels
``[8, 5, 5, 5]`` give a vocabulary of 1000 without any learned codebook.
"""

import numpy as np

from avtok.fsq import (FACE_LEVELS, SPEECH_LEVELS, FsqConfig, code_to_index, fsq_dequantize,
                       fsq_forward_ste, fsq_quantize, index_to_code)

face = FsqConfig(FACE_LEVELS)
speech = FsqConfig(SPEECH_LEVELS)
print("face vocab", face.implied_vocab, "speech vocab", speech.implied_vocab)

# quantize a handful of random latents
rng = np.random.default_rng(0)
z = rng.normal(size=(5, 4)) * 2
codes = fsq_quantize(z, face)
print("codes\n", codes)
print("indices", code_to_index(codes, face))

# indices and codes are a bijection
ids = np.arange(face.implied_vocab)
assert np.array_equal(code_to_index(index_to_code(ids, face), face), ids)

# dequantized values live in [-1, 1]
print("dequantized\n", np.round(fsq_dequantize(codes, face), 3))

# the straight-through estimator passes the tanh derivative
values, grad = fsq_forward_ste(z, face)
print("ste grad\n", np.round(grad, 3))
