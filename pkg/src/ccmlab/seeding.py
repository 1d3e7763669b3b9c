"""Deterministic RNG substreams derived from a single master seed.

Every random draw in the package flows through `substream`, keyed by a
purpose tag plus integer indices, so individual components (trajectories,
pilot noise, weight init, ...) can be varied or reproduced independently.
"""

import zlib

import numpy as np


def _tag_to_int(tag):
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    return int(tag)


def substream(master_seed, *tags):
    """Return a `numpy.random.Generator` keyed by (master_seed, *tags).

    Tags may be strings (hashed with crc32, stable across runs and
    platforms) or integers. The same key always yields the same stream.
    """
    key = [int(master_seed)] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(key)
