"""Named random substreams derived from a single experiment seed.

Each consumer of randomness (init, shuffle, dropout, synthesis, ...) gets its
own generator keyed by a label, so adding a draw in one place never shifts the
stream seen by another.  Labels are hashed with sha256 because the builtin
``hash`` is salted per process and would break run-to-run reproducibility.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_entropy(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Return a generator for ``label`` (plus optional integer indices).

    The same (seed, label, indices) triple always yields the same stream,
    independent of how many other substreams were created before it.
    """
    entropy = [int(seed), _label_entropy(label)]
    entropy.extend(int(i) for i in indices)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
