"""Named random substreams derived from a single master seed."""

import zlib

import numpy as np
import torch


def substream(seed, name):
    """Independent numpy generator for stream ``name`` under master ``seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


def torch_generator(seed, name):
    gen = torch.Generator()
    gen.manual_seed(int(substream(seed, name).integers(0, 2**63 - 1)))
    return gen
