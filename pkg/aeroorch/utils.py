import sys
import zlib

import numpy as np


class Named(type):
    def __str__(self):
        return self.__name__

    def __repr__(self):
        return self.__name__


def export(fn):
    mod = sys.modules[fn.__module__]
    if hasattr(mod, "__all__"):
        mod.__all__.append(fn.__name__)
    else:
        mod.__all__ = [fn.__name__]
    return fn


@export
def seed_stream(seed, name):
    """Independent numpy generator for the stream ``name`` under a root ``seed``.

    Streams with different names never share draws, and the same (seed, name)
    pair always reproduces the same sequence."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))

