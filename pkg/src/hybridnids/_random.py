"""Named, reproducible RNG sub-streams derived from one integer seed."""
import zlib

import numpy as np

STREAMS = ("balance", "forest", "vae-init", "vae-noise", "vae-shuffle", "gen-train", "gen-test")


def stream_seed(seed: int, name: str) -> int:
    """Integer seed for stream ``name``; stable across runs and platforms."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
