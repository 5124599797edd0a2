"""
Why sort by length
==================

Padding wastes compute. Grouping utterances of similar length keeps it low,
and the mask keeps padded frames out of the pooled score.
"""

import numpy as np

from ttseval.batching import (length_sorted_batches, masked_sequence_pool, padded_frames,
                              padding_ratio, sequential_batches)

lengths = [1, 10, 1, 10]
print("manifest order padding ratio:", padding_ratio(lengths, sequential_batches(4, 2)))  # 9/11
print("length-sorted padding ratio: ", padding_ratio(lengths, length_sorted_batches(lengths, 2)))

r = np.random.default_rng(0)
lengths = r.integers(50, 1500, 200)
print("padded frames, manifest order:", padded_frames(lengths, sequential_batches(200, 16)))
print("padded frames, length-sorted: ", padded_frames(lengths, length_sorted_batches(lengths, 16)))

scores = r.normal(size=(2, 6))
valid = np.array([3, 6])
junk = scores.copy()
junk[0, 3:] = 1e9
print("pooled scores ignore padding:", np.array_equal(masked_sequence_pool(scores, valid),
                                                      masked_sequence_pool(junk, valid)))
