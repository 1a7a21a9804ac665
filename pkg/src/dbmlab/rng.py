"""Counter-based Gaussian streams.

Every draw is addressed by (seed, stream, step, node) rather than by the order
in which draws happen, so two runs that share a seed consume bit-identical
increments no matter how often one of them had to split a step.
"""

import numpy as np

_BLOCK = 64


def _generator(seed, a, b, c, d=0):
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(c) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    counter = np.array([a, b, d, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


class NoiseStream:
    """Standard normal increments indexed by global particle label.

    increments(step) has length n_labels; a window run picks the entries of
    its own labels, so a localized run and the full run see the same noise
    for a shared label. bridge(step, node) supplies the extra normals used to
    split step `step` at binary-tree position `node` (root = 1).
    """

    def __init__(self, seed, n_labels, stream=0):
        if seed < 0:
            raise ValueError("seed must be nonnegative")
        self.seed = int(seed)
        self.n = int(n_labels)
        self.stream = int(stream)
        self._block = None
        self._block_id = -1

    def increments(self, step):
        b, r = divmod(int(step), _BLOCK)
        if b != self._block_id:
            g = _generator(self.seed, 0, b, 2 * self.stream)
            self._block = g.standard_normal((_BLOCK, self.n))
            self._block_id = b
        return self._block[r]

    def bridge(self, step, node):
        g = _generator(self.seed, node, step, 2 * self.stream + 1)
        return g.standard_normal(self.n)

    def replica(self, replica_id):
        """Independent stream for Monte Carlo replica `replica_id`."""
        ss = np.random.SeedSequence([self.seed, self.stream, int(replica_id)])
        return NoiseStream(int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1)), self.n, self.stream)


def derive_seed(seed, *keys):
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
