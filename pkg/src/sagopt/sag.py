"""Stochastic average gradient methods.

The core recursion keeps one gradient memory per example and moves the
iterate against the running sum of the memories.  Two memory layouts exist:
scalar (one stored loss derivative per example, valid for linearly
parameterized losses) and generic (one full gradient vector per example).
On top of the plain step this module provides re-weighting by the number of
examples seen, an exact multiplicative update for the ridge term, a lazy
sparse variant that touches only the support of the sampled row, a doubling
line search for the step size, mini-batch memories, and non-uniform sampling
proportional to per-example Lipschitz estimates.

Single-step functions (``sag_step``, ``sag_step_jit``, ...) are the readable
reference; ``SagDriver`` runs the same recursions in chunks through the
kernel lane for long experiments.
"""
from struct import calcsize, pack, unpack

import numpy as np

from . import _backend
from .losses import SQUARED, batch_hessian_lipschitz, lipschitz_constants
from .samplers import DiscreteSampler, Rng

_SKIP_SQ = 1e-8  # line-search test skipped below this squared gradient norm
_KAPPA_LO = 2.0 ** -50
_KAPPA_HI = 2.0 ** 50

_BLOB_MAGIC = b"SAGW"
_BLOB_VERSION = 1
_FLAG_SCALAR = 1
_HEAD_FMT = "<4sIIqqqqQ"
_MASK = (1 << 64) - 1


class StepSizePolicy:
    """Step-size rule: a fixed constant, a Lipschitz-derived constant, or a
    doubling line search that maintains its own running estimate."""

    MODES = ("constant", "one_over_L", "one_over_16L", "two_over_L_plus_n_mu",
             "line_search")

    def __init__(self, mode, alpha=0.0, l0=1.0):
        if mode not in self.MODES:
            raise ValueError("unknown step-size mode %r" % (mode,))
        if mode == "constant" and not alpha > 0.0:
            raise ValueError("constant mode needs alpha > 0")
        if mode == "line_search" and not l0 > 0.0:
            raise ValueError("line search needs an initial estimate > 0")
        self.mode = mode
        self.alpha = float(alpha)
        self.l0 = float(l0)

    @classmethod
    def constant(cls, alpha):
        return cls("constant", alpha=alpha)

    @classmethod
    def one_over_L(cls):
        return cls("one_over_L")

    @classmethod
    def one_over_16L(cls):
        return cls("one_over_16L")

    @classmethod
    def two_over_L_plus_n_mu(cls):
        return cls("two_over_L_plus_n_mu")

    @classmethod
    def line_search(cls, l0=1.0):
        return cls("line_search", l0=l0)

    def resolve(self, model, ds, lips=None):
        """The constant step size this policy denotes on the given problem.

        Line-search mode has no constant value and raises.
        """
        if self.mode == "constant":
            return self.alpha
        if self.mode == "line_search":
            raise ValueError("line-search mode has no constant step size")
        if lips is None:
            lips = lipschitz_constants(model, ds)
        big_l = lips.l_max
        if self.mode == "one_over_L":
            return 1.0 / big_l
        if self.mode == "one_over_16L":
            return 1.0 / (16.0 * big_l)
        return 2.0 / (big_l + ds.n * model.mu_lower)


class SamplingPolicy:
    """Index-selection rule for the stochastic step.

    ``lipschitz_fixed`` draws i with probability proportional to L_i + c
    (c defaults to the mean constant); ``lipschitz_adaptive`` prefers unseen
    examples and maintains per-example estimates online.
    """

    MODES = ("uniform", "lipschitz_fixed", "lipschitz_adaptive")

    def __init__(self, mode, c=None):
        if mode not in self.MODES:
            raise ValueError("unknown sampling mode %r" % (mode,))
        if c is not None and (mode != "lipschitz_fixed" or c < 0.0):
            raise ValueError("additive constant c requires fixed mode and c >= 0")
        self.mode = mode
        self.c = None if c is None else float(c)
        self._sampler = None
        self._adaptive = None

    @classmethod
    def uniform(cls):
        return cls("uniform")

    @classmethod
    def lipschitz_fixed(cls, c=None):
        return cls("lipschitz_fixed", c=c)

    @classmethod
    def lipschitz_adaptive(cls):
        return cls("lipschitz_adaptive")


class SagState:
    """Iterate plus gradient memory.

    ``y`` holds one scalar loss derivative per example (shape (n,)) in scalar
    mode or one full gradient per slot (shape (n, p)) in generic mode; ``d``
    is the aggregated sum of memory contributions; ``m`` counts slots seen at
    least once; ``k`` counts steps taken.
    """

    def __init__(self, x, y, d, m=0, visited=None, k=0):
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.d = np.asarray(d, dtype=np.float64)
        self.m = int(m)
        n = self.y.shape[0]
        if visited is None:
            visited = np.zeros(n, dtype=np.uint8)
        self.visited = np.asarray(visited, dtype=np.uint8)
        self.k = int(k)
        if self.y.ndim not in (1, 2):
            raise ValueError("memory must be scalar (n,) or generic (n, p)")
        if len(self.visited) != n:
            raise ValueError("visited length must match the memory")
        if self.m != int(self.visited.sum()):
            raise ValueError("m must equal the number of set visited flags")

    @classmethod
    def zeros(cls, n, p, scalar=True):
        y = np.zeros(n) if scalar else np.zeros((n, p))
        return cls(np.zeros(p), y, np.zeros(p))

    @property
    def scalar_memory(self):
        return self.y.ndim == 1

    def copy(self):
        return SagState(self.x.copy(), self.y.copy(), self.d.copy(),
                        self.m, self.visited.copy(), self.k)


class JitState:
    """Lazy representation x = kappa * z.

    ``S`` is the cumulative step-sum sequence with ``S[0] = 0`` and ``S[t]``
    the sum after t steps; ``V[j]`` is the step count at which coordinate j
    was last brought current, so its pending correction is
    (S[k] - S[V_j]) * d_j.
    """

    def __init__(self, z, kappa=1.0):
        self.z = np.asarray(z, dtype=np.float64)
        self.kappa = float(kappa)
        self.S = [0.0]
        self.V = np.zeros(len(self.z), dtype=np.int64)
        self.k = 0

    @classmethod
    def from_x(cls, x):
        return cls(np.array(x, dtype=np.float64), 1.0)


def sag_step(state, model, ds, i, alpha, reweight=False, exact_reg=False):
    """One average-gradient update from sampled index i.

    Replaces memory slot i, folds the change into d, and moves x by
    -(alpha / divisor) d where divisor is the number of examples seen (m)
    under re-weighting and n otherwise.  With ``exact_reg`` the ridge term
    leaves the memory (which then stores loss derivatives only) and is
    applied as the exact multiplicative factor (1 - alpha lam) on x.
    """
    n = ds.n
    if not 0 <= i < n:
        raise IndexError("sample index %d out of range for n=%d" % (i, n))
    lam = model.lam
    if state.scalar_memory:
        if lam != 0.0 and not exact_reg:
            raise ValueError("scalar memory with lam > 0 requires exact_reg")
    elif exact_reg:
        raise ValueError("exact_reg pairs with scalar memory; generic slots "
                         "already store the full gradient")
    if not state.visited[i]:
        state.visited[i] = 1
        state.m += 1

    if state.scalar_memory:
        u = ds.row_dot(i, state.x)
        _, deriv = model.point_loss_deriv(u, ds.labels[i])
        cols, vals = ds.row(i)
        delta = deriv - state.y[i]
        state.y[i] = deriv
        state.d[cols] += vals * delta
    else:
        g = model.example_gradient(ds, i, state.x)
        state.d += g - state.y[i]
        state.y[i] = g

    divisor = state.m if reweight else n
    step = alpha / divisor
    if exact_reg and lam != 0.0:
        state.x *= 1.0 - alpha * lam
    state.x -= step * state.d
    state.k += 1
    return state


def sag_step_jit(state, jit, model, ds, i, alpha, reweight=True):
    """One lazy sparse update; cost O(nnz(a_i)).

    Touched coordinates are first brought current, then the scalar memory,
    d on the support, kappa, and the cumulative step sum advance.  The ridge
    factor lives entirely in kappa, so this is always the exact-regularization
    recursion (with lam = 0 it degenerates to the plain one, kappa staying 1).
    """
    n = ds.n
    if not 0 <= i < n:
        raise IndexError("sample index %d out of range for n=%d" % (i, n))
    if not state.scalar_memory:
        raise ValueError("lazy updates require scalar memory")
    lam = model.lam
    if alpha * lam >= 1.0:
        raise ValueError("alpha * lam must stay below 1")
    if not state.visited[i]:
        state.visited[i] = 1
        state.m += 1

    cols, vals = ds.row(i)
    S = jit.S
    k = jit.k
    for j in cols:
        jit.z[j] -= (S[k] - S[jit.V[j]]) * state.d[j]
        jit.V[j] = k
    u = jit.kappa * float(vals @ jit.z[cols])
    _, deriv = model.point_loss_deriv(u, ds.labels[i])

    delta = deriv - state.y[i]
    state.y[i] = deriv
    state.d[cols] += vals * delta

    jit.kappa *= 1.0 - alpha * lam
    divisor = state.m if reweight else n
    S.append(S[k] + alpha / (jit.kappa * divisor))
    jit.k = k + 1
    state.k += 1

    if not _KAPPA_LO <= abs(jit.kappa) <= _KAPPA_HI:
        _jit_renormalize(state, jit)
    return state, jit


def _jit_renormalize(state, jit):
    # fold kappa into z after a full catch-up; the represented x is unchanged
    s_arr = np.array(jit.S)
    jit.z -= (s_arr[jit.k] - s_arr[jit.V]) * state.d
    jit.V[:] = jit.k
    jit.z *= jit.kappa
    jit.kappa = 1.0
    # every V[j] now equals k, so entries before k are never differenced
    # again; rebasing keeps future increments above the ulp of the sum
    jit.S[jit.k] = 0.0


def finalize_jit(state, jit):
    """Apply every pending lazy correction and return x = kappa * z."""
    s_arr = np.array(jit.S)
    jit.z -= (s_arr[jit.k] - s_arr[jit.V]) * state.d
    jit.V[:] = jit.k
    return jit.kappa * jit.z


def line_search_update(lhat, model, ds, i, x):
    """Smallest L' in {L, 2L, 4L, ...} passing the descent test on f_i.

    The test compares f_i at the candidate point x - (1/L') f_i'(x) against
    f_i(x) - ||f_i'(x)||^2 / (2L').  It is skipped entirely (L' = L) when the
    squared gradient norm is at most 1e-8.  The caller applies the
    per-iteration decay L <- L * 2^(-1/n) before the next test.
    """
    if not lhat > 0.0:
        raise ValueError("estimate must be positive")
    g = model.example_gradient(ds, i, x)
    sq = float(g @ g)
    if sq <= _SKIP_SQ:
        return lhat
    value = model.example_value(ds, i, x)
    if not np.isfinite(value):
        raise RuntimeError("non-finite loss value in line search")
    while True:
        trial = model.example_value(ds, i, x - g / lhat)
        if trial != trial:
            raise RuntimeError("non-finite loss value in line search")
        if trial <= value - sq / (2.0 * lhat):
            return lhat
        if lhat > 1e300:
            raise RuntimeError("line search failed to terminate")
        lhat *= 2.0


class Minibatch:
    """Index block together with its memory-slot position."""

    __slots__ = ("slot", "idx")

    def __init__(self, slot, idx):
        self.slot = int(slot)
        self.idx = np.asarray(idx, dtype=np.int64)


def make_minibatch_partition(n, batch_size, rng):
    """Fixed partition into contiguous blocks of a seeded shuffle of 0..n-1.

    Returns ceil(n / batch_size) blocks; the last one may be short.
    """
    if not 1 <= batch_size <= n:
        raise ValueError("batch size must be in 1..n")
    order = rng.shuffle(np.arange(n, dtype=np.int64))
    return [Minibatch(s, order[lo:lo + batch_size])
            for s, lo in enumerate(range(0, n, batch_size))]


def minibatch_step_size(model, ds, batches, rule="max"):
    """1 / (worst batch constant) under the chosen per-batch rule.

    ``max`` and ``mean`` reduce the per-example constants inside each batch;
    ``hessian`` bounds the spectral norm of the batch-mean Hessian, which is
    never larger and can be much smaller for incoherent batches.
    """
    lips = lipschitz_constants(model, ds)
    per = lips.per_example
    if rule == "max":
        worst = max(float(per[b.idx].max()) for b in batches)
    elif rule == "mean":
        worst = max(float(per[b.idx].mean()) for b in batches)
    elif rule == "hessian":
        worst = max(batch_hessian_lipschitz(model, ds, b.idx) for b in batches)
    else:
        raise ValueError("unknown batch step rule %r" % (rule,))
    return 1.0 / worst


def sag_minibatch_step(state, model, ds, batch, alpha, reweight=False):
    """One update with a single memory slot per batch.

    The slot stores the batch-mean gradient (1/|B|) sum of f_i'(x); the
    divisor counts batches, so batch size 1 reproduces sag_step exactly and
    one single batch reproduces the deterministic full-gradient step.
    """
    if len(batch.idx) == 0:
        raise ValueError("empty batch")
    if state.scalar_memory:
        raise ValueError("batch slots store full gradient vectors")
    slot = batch.slot
    if not state.visited[slot]:
        state.visited[slot] = 1
        state.m += 1

    g = np.zeros(ds.p)
    for i in batch.idx:
        g += model.example_gradient(ds, int(i), state.x)
    g /= len(batch.idx)
    state.d += g - state.y[slot]
    state.y[slot] = g

    divisor = state.m if reweight else len(state.visited)
    state.x -= (alpha / divisor) * state.d
    state.k += 1
    return state


class _AdaptiveLipschitz:
    """Online per-example estimates for adaptive non-uniform sampling."""

    def __init__(self, n, l0, decay):
        self.li = np.ones(n)
        self.lglob = float(l0)
        self.decay = float(decay)
        self.sum_l = 0.0
        self.seen = np.zeros(n, dtype=np.int64)
        self.unseen = np.arange(n, dtype=np.int64)
        self.slot_of = np.arange(n, dtype=np.int64)
        self.weights = np.zeros(n)
        self._sampler = None

    def note_seen(self, i, m_new):
        self.seen[m_new - 1] = i
        last = len(self.li) - m_new
        last_id = self.unseen[last]
        pos = self.slot_of[i]
        self.unseen[pos] = last_id
        self.slot_of[last_id] = pos

    def set_weight(self, i, w):
        self.weights[i] = w
        if self._sampler is not None:
            self._sampler.update_weight(i, w)

    def weighted_draw(self, rng):
        if self._sampler is None:
            self._sampler = DiscreteSampler(self.weights)
        return self._sampler.sample(rng)


def _loss_line_search(model, u, b, value, deriv, sqnorm, lhat):
    # scalar specialization: the candidate point only moves the margin
    if not np.isfinite(value):
        raise RuntimeError("non-finite loss value in line search")
    sq = sqnorm * deriv * deriv
    move = sqnorm * deriv
    while True:
        trial = model.point_loss_deriv(u - move / lhat, b)[0]
        if trial <= value - sq / (2.0 * lhat):
            return lhat
        if lhat > 1e300:
            raise RuntimeError("line search failed to terminate")
        lhat *= 2.0


def sag_step_nonuniform(state, model, ds, policy, lips, rng,
                        reweight=False, exact_reg=False):
    """Draw the index per the sampling policy, then take the plain step.

    The memory and iterate update keep uniform 1/n weights; only the index
    distribution and the step size change.  Fixed mode uses
    alpha = 1/(2 L_max) + 1/(2 L_mean).  Adaptive mode prefers unseen
    examples with probability (n - m)/n, otherwise mixes a uniform and an
    L_i-weighted draw over the seen ones, and sets
    alpha = ((n-m)/n) alpha_max + (m/n) alpha_mean.
    """
    n = ds.n
    if policy.mode == "lipschitz_fixed":
        samp = policy._sampler
        if samp is None:
            c = policy.c if policy.c is not None else lips.l_mean
            samp = DiscreteSampler(lips.per_example + c)
            policy._sampler = samp
        i = samp.sample(rng)
        alpha = 0.5 / lips.l_max + 0.5 / lips.l_mean
        return sag_step(state, model, ds, i, alpha, reweight, exact_reg)

    if policy.mode != "lipschitz_adaptive":
        raise ValueError("policy must be lipschitz_fixed or lipschitz_adaptive")

    ad = policy._adaptive
    if ad is None:
        ad = _AdaptiveLipschitz(n, 1.0, 2.0 ** (-1.0 / n))
        policy._adaptive = ad
    lam = model.lam
    m = state.m
    if rng.next_double() < (n - m) / n:
        i = int(ad.unseen[rng.next_index(n - m)])
    elif rng.next_double() < 0.5:
        i = int(ad.seen[rng.next_index(m)])
    else:
        i = ad.weighted_draw(rng)

    first = not state.visited[i]
    if first:
        ad.note_seen(i, m + 1)

    u = ds.row_dot(i, state.x)
    b = ds.labels[i]
    value, deriv = model.point_loss_deriv(u, b)
    sqn = float(ds.sqnorms()[i])
    sq = sqn * deriv * deriv
    lglob = ad.lglob * ad.decay
    lold = float(ad.li[i])
    lnew = lold
    if sq > _SKIP_SQ:
        lglob = _loss_line_search(model, u, b, value, deriv, sqn, lglob)
        lnew = _loss_line_search(model, u, b, value, deriv, sqn, lold * 0.5)
    ad.lglob = lglob
    ad.li[i] = lnew
    ad.sum_l += lnew if first else lnew - lold
    ad.set_weight(i, lnew)

    m_post = m + 1 if first else m
    lmean = ad.sum_l / m_post
    alpha_max = 1.0 / (lglob + lam)
    alpha_mean = 0.5 / (lglob + lam) + 0.5 / (lmean + lam)
    alpha = ((n - m_post) / n) * alpha_max + (m_post / n) * alpha_mean
    return sag_step(state, model, ds, i, alpha, reweight, exact_reg)


# -- warm-start container --------------------------------------------------

def export_state(state, rng_state=0):
    """Serialize a state to the versioned little-endian binary container."""
    n = len(state.visited)
    p = len(state.x)
    flags = _FLAG_SCALAR if state.scalar_memory else 0
    head = pack(_HEAD_FMT, _BLOB_MAGIC, _BLOB_VERSION, flags,
                n, p, state.m, state.k, int(rng_state) & _MASK)
    return b"".join([
        head,
        np.ascontiguousarray(state.x, dtype="<f8").tobytes(),
        np.ascontiguousarray(state.y, dtype="<f8").tobytes(),
        np.ascontiguousarray(state.d, dtype="<f8").tobytes(),
        np.packbits(state.visited.astype(bool), bitorder="little").tobytes(),
    ])


def import_state(blob, ds=None, center=False):
    """Parse a warm-start container; returns (state, rng_state).

    With ``center`` the stored memories are shifted to mean zero over the
    seen examples and d is rebuilt from the shifted memories (scalar mode
    needs the dataset for the rebuild).  Centering keeps the memory sum
    representative of the current gradient scale after the iterate moved.
    """
    head_size = calcsize(_HEAD_FMT)
    if len(blob) < head_size:
        raise ValueError("not a warm-start blob")
    magic, version, flags, n, p, m, k, rng_state = unpack(_HEAD_FMT,
                                                          blob[:head_size])
    if magic != _BLOB_MAGIC:
        raise ValueError("not a warm-start blob")
    if version != _BLOB_VERSION:
        raise ValueError("unsupported warm-start version %d" % version)
    if n < 0 or p < 0 or not 0 <= m <= n or k < 0:
        raise ValueError("corrupt warm-start header")
    scalar = bool(flags & _FLAG_SCALAR)
    ny = n if scalar else n * p
    nbits = (n + 7) // 8
    expect = head_size + 8 * (p + ny + p) + nbits
    if len(blob) != expect:
        raise ValueError("warm-start blob has wrong length")
    off = head_size
    x = np.frombuffer(blob, dtype="<f8", count=p, offset=off).copy()
    off += 8 * p
    y = np.frombuffer(blob, dtype="<f8", count=ny, offset=off).copy()
    off += 8 * ny
    d = np.frombuffer(blob, dtype="<f8", count=p, offset=off).copy()
    off += 8 * p
    bits = np.frombuffer(blob, dtype=np.uint8, count=nbits, offset=off)
    visited = np.unpackbits(bits, count=n, bitorder="little").astype(np.uint8)
    if int(visited.sum()) != m:
        raise ValueError("visited bitmap does not match m")
    if ds is not None and (ds.n != n or ds.p != p):
        raise ValueError("warm-start dimensions (n=%d, p=%d) do not match "
                         "the problem (n=%d, p=%d)" % (n, p, ds.n, ds.p))
    if not scalar:
        y = y.reshape(n, p)
    state = SagState(x, y, d, m, visited, k)

    if center and m > 0:
        mask = visited.astype(bool)
        if scalar:
            if ds is None:
                raise ValueError("centering scalar memory needs the dataset "
                                 "to rebuild d")
            state.y[mask] -= state.y[mask].mean()
            state.d = ds.rmatvec(np.where(mask, state.y, 0.0))
        else:
            state.y[mask] -= state.d / m
            state.d = state.y[mask].sum(axis=0)
    return state, rng_state


# -- chunked driver --------------------------------------------------------

class SagDriver:
    """Runs a SAG-family configuration in chunks through the kernel lane.

    Wires the dataset views, memory arrays, and policies into the selected
    backend; one call to ``run`` advances many iterations without
    per-iteration Python overhead on the compiled lane.  Memory layout is
    picked automatically: scalar whenever the configuration permits it
    (lam = 0 or exact regularization), generic otherwise.
    """

    def __init__(self, model, ds, step, sampling=None, x0=None,
                 reweight=True, exact_reg=True, memory=None,
                 jit=False, cyclic=False, seed=0, track_average=False):
        self.model = model
        self.ds = ds
        self.step = step
        self.sampling = sampling if sampling is not None else SamplingPolicy.uniform()
        n, p = ds.n, ds.p
        if n == 0:
            raise ValueError("empty dataset")
        lam = model.lam
        self._loss_code = 0 if model.family == SQUARED else 1
        self.reweight = bool(reweight)
        self.exact_reg = bool(exact_reg)
        self._jit = bool(jit)
        self._cyclic = bool(cyclic)

        if self._jit and self._cyclic:
            raise ValueError("lazy sparse lane samples uniformly")
        if self._jit and self.sampling.mode != "uniform":
            raise ValueError("lazy sparse lane samples uniformly")
        adaptive = self.sampling.mode == "lipschitz_adaptive"
        if adaptive and (self._jit or self._cyclic):
            raise ValueError("adaptive sampling uses its own draw schedule")
        if adaptive and step.mode != "line_search":
            raise ValueError("adaptive sampling drives its own line search; "
                             "pass a line_search step policy")
        if self._jit and lam != 0.0 and not self.exact_reg:
            raise ValueError("the lazy lane implements exact regularization")

        scalar_ok = lam == 0.0 or self.exact_reg
        if memory is None:
            memory = "scalar" if scalar_ok else "generic"
        if memory not in ("scalar", "generic"):
            raise ValueError("memory must be 'scalar' or 'generic'")
        if memory == "scalar" and not scalar_ok:
            raise ValueError("scalar memory with lam > 0 requires exact_reg")
        if memory == "generic":
            if self.exact_reg and lam != 0.0:
                raise ValueError("exact_reg pairs with scalar memory")
            if self._jit:
                raise ValueError("lazy sparse lane requires scalar memory")
            if step.mode == "line_search":
                raise ValueError("line search runs on the scalar lane")
            if self.sampling.mode == "lipschitz_fixed":
                raise ValueError("weighted sampling runs on the scalar lane")
        self.memory = memory

        self._alpha_mode = 1 if step.mode == "line_search" else 0
        self._alpha = 0.0 if self._alpha_mode else step.resolve(model, ds)
        decay = 2.0 ** (-1.0 / n)
        self._ls_box = np.array([step.l0, decay]) if self._alpha_mode \
            else np.array([1.0, 1.0])
        if self._jit and self._alpha_mode == 0 and self._alpha * lam >= 1.0:
            raise ValueError("alpha * lam must stay below 1")

        rng = Rng(seed)
        self._order = np.zeros(0, dtype=np.int64)
        self._cursor = np.zeros(1, dtype=np.int64)
        if self._cyclic:
            self._order = rng.shuffle(np.arange(n, dtype=np.int64))
        self._rng_state = np.array([rng.state], dtype=np.uint64)

        self._index_mode = 1 if self._cyclic else 0
        self._ftree = np.zeros(1)
        self._ftotal = np.zeros(1)
        self._ftop = 1
        if self.sampling.mode == "lipschitz_fixed":
            lips = lipschitz_constants(model, ds)
            c = self.sampling.c if self.sampling.c is not None else lips.l_mean
            samp = DiscreteSampler(lips.per_example + c)
            self._ftree = samp.tree
            self._ftotal = samp.total_arr
            self._ftop = samp.top_bit
            self._index_mode = 2

        self._x = np.zeros(p) if x0 is None else np.array(x0, dtype=np.float64)
        if len(self._x) != p:
            raise ValueError("x0 length must equal p")
        self._d = np.zeros(p)
        self._visited = np.zeros(n, dtype=np.uint8)
        self._counters = np.zeros(4, dtype=np.int64)
        self.track_average = bool(track_average)
        if self.track_average and (self._jit or adaptive):
            raise ValueError("iterate averaging runs on the plain lanes")
        self._xsum = np.zeros(p if self.track_average else 0)

        if memory == "generic":
            self._Y = np.zeros((n, p))
            self._y = None
        else:
            self._y = np.zeros(n)
            self._Y = None

        if self._jit:
            self._z = self._x
            self._x = None
            self._kappa = np.array([1.0])
            self._S = np.zeros(1024)
            self._V = np.zeros(p, dtype=np.int64)
            self._kpos = np.zeros(1, dtype=np.int64)

        if adaptive:
            self._li = np.ones(n)
            self._lglob = np.array([step.l0, decay])
            self._ftree = np.zeros(n + 1)
            self._fweights = np.zeros(n)
            self._ftotal = np.zeros(1)
            self._ftop = 1 << (n.bit_length() - 1)
            self._seen = np.zeros(n, dtype=np.int64)
            self._unseen = np.arange(n, dtype=np.int64)
            self._slot_of = np.arange(n, dtype=np.int64)
            self._sumL = np.zeros(1)
        self._adaptive = adaptive

    # -- running -----------------------------------------------------------

    def run(self, steps):
        """Advance the recursion by ``steps`` iterations."""
        steps = int(steps)
        if steps <= 0:
            return self
        ds = self.ds
        lam = self.model.lam
        if self._jit:
            need = int(self._kpos[0]) + steps + 1
            if need > len(self._S):
                grown = np.zeros(max(need, 2 * len(self._S)))
                grown[:len(self._S)] = self._S
                self._S = grown
            _backend.sag_jit_chunk(
                ds.row_ptr, ds.col_idx, ds.values, ds.labels, ds.sqnorms(),
                self._loss_code, lam, self._z, self._kappa, self._y, self._d,
                self._visited, self._counters, self._rng_state, steps,
                self._alpha_mode, self._alpha, self._ls_box,
                self._S, self._V, self._kpos, int(self.reweight))
        elif self._adaptive:
            _backend.sag_adaptive_chunk(
                ds.row_ptr, ds.col_idx, ds.values, ds.labels, ds.sqnorms(),
                self._loss_code, lam, self._x, self._y, self._d,
                self._visited, self._counters, self._rng_state, steps,
                int(self.reweight), int(self.exact_reg),
                self._li, self._lglob, self._ftree, self._fweights,
                self._ftotal, self._ftop, self._seen, self._unseen,
                self._slot_of, self._sumL)
        elif self.memory == "generic":
            _backend.sag_dense_chunk(
                ds.row_ptr, ds.col_idx, ds.values, ds.labels,
                self._loss_code, lam, self._x, self._Y, self._d,
                self._visited, self._counters, self._rng_state, steps,
                self._alpha, int(self.reweight),
                self._index_mode, self._order, self._cursor,
                self._xsum, int(self.track_average))
        else:
            _backend.sag_scalar_chunk(
                ds.row_ptr, ds.col_idx, ds.values, ds.labels, ds.sqnorms(),
                self._loss_code, lam, self._x, self._y, self._d,
                self._visited, self._counters, self._rng_state, steps,
                self._alpha_mode, self._alpha, self._ls_box,
                int(self.reweight), int(self.exact_reg),
                self._index_mode, self._order, self._cursor,
                self._ftree, self._ftotal, self._ftop,
                self._xsum, int(self.track_average))
        return self

    # -- inspection --------------------------------------------------------

    @property
    def x(self):
        """Current iterate (materialized on the lazy lane)."""
        if self._jit:
            k = int(self._kpos[0])
            self._z -= (self._S[k] - self._S[self._V]) * self._d
            self._V[:] = k
            return self._kappa[0] * self._z
        return self._x.copy()

    @property
    def average_x(self):
        """Mean of the iterates seen before each step so far."""
        if not self.track_average:
            raise ValueError("driver was built without track_average")
        k = int(self._counters[1])
        if k == 0:
            return self.x
        return self._xsum / k

    @property
    def iterations(self):
        return int(self._counters[1])

    @property
    def evals(self):
        """Loss evaluations so far, line-search probes included."""
        return int(self._counters[2])

    @property
    def passes(self):
        return int(self._counters[2]) / self.ds.n

    @property
    def iters_per_pass(self):
        return float(self.ds.n)

    @property
    def seen(self):
        return int(self._counters[0])

    @property
    def backend(self):
        return _backend.BACKEND

    # -- warm start --------------------------------------------------------

    def to_state(self):
        y = self._y.copy() if self.memory == "scalar" else self._Y.copy()
        return SagState(self.x, y, self._d.copy(), int(self._counters[0]),
                        self._visited.copy(), int(self._counters[1]))

    def export_blob(self):
        return export_state(self.to_state(), int(self._rng_state[0]))

    def load_state(self, state, rng_state=None):
        """Adopt iterate, memories, and counters from a saved state."""
        n, p = self.ds.n, self.ds.p
        if len(state.x) != p or len(state.visited) != n:
            raise ValueError("state dimensions do not match the problem")
        if state.scalar_memory != (self.memory == "scalar"):
            raise ValueError("memory layout of the state does not match "
                             "the driver")
        if self.memory == "scalar":
            self._y[:] = state.y
        else:
            self._Y[:] = state.y
        self._d[:] = state.d
        self._visited[:] = state.visited
        self._counters[0] = state.m
        self._counters[1] = state.k
        # probe counts are not part of the container; restart the evaluation
        # counter at its floor of one evaluation per recorded iteration
        self._counters[2] = state.k
        if self._jit:
            self._z = np.array(state.x, dtype=np.float64)
            self._kappa[0] = 1.0
            self._S = np.zeros(1024)
            self._V[:] = 0
            self._kpos[0] = 0
        else:
            self._x[:] = state.x
        if self._adaptive:
            self._rebuild_adaptive()
        if rng_state is not None:
            self._rng_state[0] = int(rng_state) & _MASK
        return self

    def load_blob(self, blob, center=False):
        state, rng_state = import_state(blob, self.ds, center=center)
        return self.load_state(state, rng_state)

    def _rebuild_adaptive(self):
        # per-example estimates are not part of the container; restart them
        n = self.ds.n
        self._li[:] = 1.0
        self._fweights[:] = np.where(self._visited > 0, 1.0, 0.0)
        m = int(self._counters[0])
        if m > 0:
            samp = DiscreteSampler(self._fweights)
            self._ftree[:] = samp.tree
            self._ftotal[0] = samp.total_arr[0]
        else:
            self._ftree[:] = 0.0
            self._ftotal[0] = 0.0
        self._sumL[0] = float(self._fweights.sum())
        seen_ids = np.nonzero(self._visited)[0]
        unseen_ids = np.nonzero(self._visited == 0)[0]
        self._seen[:m] = seen_ids
        self._unseen[:len(unseen_ids)] = unseen_ids
        for pos in range(len(unseen_ids)):
            self._slot_of[unseen_ids[pos]] = pos
