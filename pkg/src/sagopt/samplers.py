"""Seeded random index selection: uniform, fixed-weight, and updatable-weight sampling.

Every source of randomness in the package flows through :class:`Rng`, a
splitmix64 generator.  The algorithm is fixed and documented here so that index
streams are reproducible bit-for-bit across platforms and across the compiled
and pure-Python kernel lanes:

    state <- (state + 0x9E3779B97F4A7C15) mod 2^64
    z <- state
    z <- (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9   mod 2^64
    z <- (z XOR (z >> 27)) * 0x94D049BB133111EB   mod 2^64
    output z XOR (z >> 31)

Doubles are drawn as (output >> 11) * 2^-53, uniform on [0, 1).
"""
import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV53 = 2.0 ** -53


class Rng:
    """Splittable 64-bit pseudo-random generator (splitmix64).

    The full state is one 64-bit integer, exposed as ``state`` so optimizer
    runs can checkpoint and resume their stream exactly.
    """

    __slots__ = ("_state",)

    def __init__(self, seed):
        self._state = int(seed) & _MASK

    @property
    def state(self):
        return self._state

    @state.setter
    def state(self, value):
        self._state = int(value) & _MASK

    def next_u64(self):
        self._state = (self._state + _GAMMA) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    def next_double(self):
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * _INV53

    def next_index(self, n):
        """Uniform index in [0, n).

        Uses floor(u * n) on a 53-bit uniform; the selection bias of order
        n / 2^53 is far below anything the statistical tests can see.
        """
        idx = int(self.next_double() * n)
        return idx if idx < n else n - 1

    def split(self):
        """Return a child generator with an independent-looking stream.

        The child is seeded from the parent's next output, so splitting
        advances the parent exactly one draw.
        """
        return Rng(self.next_u64())

    def shuffle(self, arr):
        """Fisher-Yates shuffle of a 1-D array, in place."""
        for i in range(len(arr) - 1, 0, -1):
            j = self.next_index(i + 1)
            arr[i], arr[j] = arr[j], arr[i]
        return arr


class DiscreteSampler:
    """Sample indices with probability proportional to nonnegative weights.

    Prefix sums are held in a Fenwick tree (1-based), so construction is O(n)
    and both sampling and weight updates are O(log n).  The same tree layout is
    used by the compiled kernels, which operate on ``tree``/``weights``/
    ``total_arr`` directly.
    """

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or len(w) == 0:
            raise ValueError("weights must be a nonempty 1-D array")
        if np.any(w < 0):
            raise ValueError("negative weight")
        if not np.any(w > 0):
            raise ValueError("all weights are zero")
        self.n = len(w)
        self.weights = w.copy()
        self.tree = np.zeros(self.n + 1)
        self.tree[1:] = w
        for i in range(1, self.n + 1):
            j = i + (i & -i)
            if j <= self.n:
                self.tree[j] += self.tree[i]
        self.total_arr = np.array([float(w.sum())])
        # highest power of two <= n, the starting stride of the bit descend
        self.top_bit = 1 << (self.n.bit_length() - 1)

    @property
    def total(self):
        return float(self.total_arr[0])

    def prefix_sum(self, count):
        """Sum of the first ``count`` weights."""
        s = 0.0
        i = int(count)
        while i > 0:
            s += self.tree[i]
            i -= i & -i
        return s

    def update_weight(self, i, w):
        if w < 0:
            raise ValueError("negative weight")
        delta = float(w) - self.weights[i]
        self.weights[i] = w
        j = i + 1
        while j <= self.n:
            self.tree[j] += delta
            j += j & -j
        self.total_arr[0] += delta
        if self.total_arr[0] <= 0:
            # float drift can only matter when every weight was driven to ~0
            self.total_arr[0] = float(self.weights.sum())
            if self.total_arr[0] <= 0:
                raise ValueError("all weights are zero")

    def sample(self, rng):
        """Draw one index; zero-weight indices are never returned."""
        target = rng.next_double() * self.total_arr[0]
        if target >= self.total_arr[0]:
            target = np.nextafter(self.total_arr[0], 0.0)
        pos = 0
        bit = self.top_bit
        while bit > 0:
            nxt = pos + bit
            if nxt <= self.n and self.tree[nxt] <= target:
                target -= self.tree[nxt]
                pos = nxt
            bit >>= 1
        # pos = number of full prefix weights below the target; 0-based index
        if pos >= self.n or self.weights[pos] == 0.0:
            # accumulated update round-off can leave an eps-mass residue on a
            # cleared weight; step to the nearest live index instead
            for k in range(1, self.n + 1):
                cand = (pos + k) % self.n
                if self.weights[cand] > 0.0:
                    return cand
        return pos
