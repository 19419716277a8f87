"""Portable deterministic random number generation.

Every stochastic component in the package (corpus synthesis, k-means
seeding, parameter init, Gumbel noise) draws from SplitMix64 so that
identical seeds give bit-identical results on any platform.

SplitMix64 recurrence (all arithmetic mod 2**64):

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    output = z ^ (z >> 31)

Test vectors (seed 0): 0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4,
0x06C45D188009454F.  Uniform doubles take the top 53 bits:
u = (output >> 11) * 2**-53.  Gaussians come from the Box-Muller
transform on consecutive uniform pairs.
"""

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def _mix(z):
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def derive_seed(seed, *streams):
    """Derive an independent substream seed from a base seed and indices."""
    z = _U64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for s in streams:
            z = _mix((z + _GAMMA) ^ _U64(int(s) & 0xFFFFFFFFFFFFFFFF))
    return int(z)


class SplitMix64:
    """Vectorized SplitMix64 stream."""

    def __init__(self, seed):
        self._state = _U64(int(seed) & 0xFFFFFFFFFFFFFFFF)

    def next_u64(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        with np.errstate(over="ignore"):
            steps = (np.arange(1, n + 1, dtype=np.uint64)) * _GAMMA
            states = self._state + steps
            out = _mix(states)
            self._state = self._state + _U64(n) * _GAMMA
        if size is None:
            return int(out[0])
        return out.reshape(size)

    def uniform(self, size=None):
        """Uniform doubles in [0, 1) with 53-bit resolution."""
        raw = self.next_u64(size if size is not None else 1)
        u = (np.asarray(raw, dtype=np.uint64) >> _U64(11)).astype(np.float64)
        u *= 2.0**-53
        if size is None:
            return float(u.reshape(-1)[0])
        return u

    def gaussian(self, size=None):
        """Standard normals via Box-Muller on consecutive uniform pairs."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u1 = self.uniform(pairs)
        u2 = self.uniform(pairs)
        # guard against log(0)
        u1 = np.maximum(u1, 2.0**-53)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def randint(self, n, size=None):
        """Integers uniform in [0, n) by 53-bit uniform scaling."""
        u = self.uniform(size if size is not None else 1)
        out = np.minimum((np.asarray(u) * n).astype(np.int64), n - 1)
        if size is None:
            return int(out.reshape(-1)[0])
        return out

    def shuffle(self, n):
        """A permutation of range(n) by Fisher-Yates."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
