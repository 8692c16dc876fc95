"""Finite-sum problem data in compressed sparse row form.

A dataset is the (a_i, b_i) pairs of a finite-sum objective: feature rows a_i
stored CSR-style and one scalar label b_i per row.  Datasets are immutable by
convention: every transformation returns a new object, and optimizer code only
ever reads them.
"""
import numpy as np

from .samplers import Rng


class SparseDataset:
    """Row-compressed feature matrix plus per-example labels.

    ``row_ptr`` has length n+1; row i occupies the half-open slice
    ``row_ptr[i]:row_ptr[i+1]`` of ``col_idx``/``values``.  Column indices are
    0-based and strictly increasing within a row.
    """

    def __init__(self, n, p, row_ptr, col_idx, values, labels, validate=True):
        self.n = int(n)
        self.p = int(p)
        self.row_ptr = np.asarray(row_ptr, dtype=np.int64)
        self.col_idx = np.asarray(col_idx, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.float64)
        self._sqnorms = None
        self._row_ids = None
        if validate:
            self.validate()

    def validate(self):
        if self.n < 0 or self.p < 0:
            raise ValueError("negative dimensions")
        if len(self.row_ptr) != self.n + 1:
            raise ValueError("row_ptr must have length n+1")
        if self.n and (self.row_ptr[0] != 0 or np.any(np.diff(self.row_ptr) < 0)):
            raise ValueError("row_ptr must start at 0 and be nondecreasing")
        if self.n == 0 and len(self.row_ptr) == 1 and self.row_ptr[0] != 0:
            raise ValueError("row_ptr must start at 0")
        if self.row_ptr[-1] != len(self.col_idx) or len(self.col_idx) != len(self.values):
            raise ValueError("row_ptr[-1] must equal the number of stored values")
        if len(self.labels) != self.n:
            raise ValueError("labels length must equal n")
        if len(self.col_idx) and (self.col_idx.min() < 0 or self.col_idx.max() >= self.p):
            raise ValueError("column index out of range")
        for i in range(self.n):
            cols = self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]
            if len(cols) > 1 and np.any(np.diff(cols) <= 0):
                raise ValueError("column indices must be strictly increasing in row %d" % i)

    # -- access helpers ----------------------------------------------------

    def row(self, i):
        """(column indices, values) of row i, as views."""
        s, e = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[s:e], self.values[s:e]

    def row_dot(self, i, x):
        cols, vals = self.row(i)
        return float(vals @ x[cols])

    def sqnorms(self):
        """Per-row squared norms ||a_i||^2 (cached)."""
        if self._sqnorms is None:
            sq = np.zeros(self.n)
            np.add.at(sq, self._rows_of_nnz(), self.values * self.values)
            self._sqnorms = sq
        return self._sqnorms

    def _rows_of_nnz(self):
        if self._row_ids is None:
            self._row_ids = np.repeat(np.arange(self.n), np.diff(self.row_ptr))
        return self._row_ids

    def matvec(self, x):
        """A @ x without densifying (empty rows give exact zeros)."""
        prod = self.values * x[self.col_idx]
        return np.bincount(self._rows_of_nnz(), weights=prod, minlength=self.n)

    def rmatvec(self, s):
        """A.T @ s without densifying."""
        prod = self.values * s[self._rows_of_nnz()]
        return np.bincount(self.col_idx, weights=prod, minlength=self.p)

    def to_dense(self):
        A = np.zeros((self.n, self.p))
        for i in range(self.n):
            cols, vals = self.row(i)
            A[i, cols] = vals
        return A

    def is_dense(self):
        """True when every row stores all p features."""
        if np.any(np.diff(self.row_ptr) != self.p):
            return False
        return bool(np.all(self.col_idx.reshape(self.n, self.p) == np.arange(self.p))) if self.n else True

    def same_as(self, other):
        return (self.n == other.n and self.p == other.p
                and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.col_idx, other.col_idx)
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.labels, other.labels))


class SynthSpec:
    """Recipe for a deterministic synthetic dataset.

    ``heterogeneity`` is the requested ratio max_i ||a_i|| / min_i ||a_i||;
    rows are drawn at unit norm and then scaled along a geometric ramp, so the
    realized ratio equals the request up to rounding.
    """

    def __init__(self, n, p, nnz_per_row=None, label_noise=0.0, heterogeneity=1.0, seed=0):
        if n < 1 or p < 1:
            raise ValueError("n and p must be at least 1")
        if heterogeneity < 1.0:
            raise ValueError("heterogeneity factor must be >= 1")
        if not 0.0 <= label_noise <= 1.0:
            raise ValueError("label_noise must be a probability")
        self.n = int(n)
        self.p = int(p)
        self.nnz_per_row = int(p if nnz_per_row is None else nnz_per_row)
        if not 0 <= self.nnz_per_row <= p:
            raise ValueError("nnz_per_row must lie in [0, p]")
        self.label_noise = float(label_noise)
        self.heterogeneity = float(heterogeneity)
        self.seed = int(seed)


def _normal_pairs(rng, count):
    """Box-Muller normals from the package Rng, for platform-stable synthesis."""
    out = np.empty(count)
    i = 0
    while i < count:
        u1 = rng.next_double()
        while u1 <= 0.0:
            u1 = rng.next_double()
        u2 = rng.next_double()
        r = np.sqrt(-2.0 * np.log(u1))
        out[i] = r * np.cos(2.0 * np.pi * u2)
        if i + 1 < count:
            out[i + 1] = r * np.sin(2.0 * np.pi * u2)
        i += 2
    return out


def _sample_columns(rng, p, k):
    """k distinct column indices from [0, p), sorted (Floyd's algorithm)."""
    chosen = set()
    for j in range(p - k, p):
        t = rng.next_index(j + 1)
        chosen.add(j if t in chosen else t)
    return np.array(sorted(chosen), dtype=np.int64)


def synth_generate(spec):
    """Build the dataset a SynthSpec describes.

    Labels come from a planted linear model: sign(a_i . x_true), flipped with
    probability ``label_noise``.  Identical specs produce identical bytes.
    """
    rng = Rng(spec.seed)
    n, p, k = spec.n, spec.p, spec.nnz_per_row
    row_ptr = np.arange(0, (n + 1) * k, k, dtype=np.int64)
    col_idx = np.empty(n * k, dtype=np.int64)
    values = np.empty(n * k)
    for i in range(n):
        cols = np.arange(p, dtype=np.int64) if k == p else _sample_columns(rng, p, k)
        vals = _normal_pairs(rng, k)
        norm = np.sqrt(vals @ vals)
        if norm > 0:
            vals /= norm
        if n > 1:
            vals *= spec.heterogeneity ** (i / (n - 1.0))
        col_idx[i * k:(i + 1) * k] = cols
        values[i * k:(i + 1) * k] = vals

    x_true = _normal_pairs(rng, p)
    labels = np.empty(n)
    for i in range(n):
        u = values[i * k:(i + 1) * k] @ x_true[col_idx[i * k:(i + 1) * k]]
        lab = 1.0 if u >= 0 else -1.0
        if spec.label_noise > 0 and rng.next_double() < spec.label_noise:
            lab = -lab
        labels[i] = lab
    return SparseDataset(n, p, row_ptr, col_idx, values, labels)


def parse_libsvm(text, p=None):
    """Parse `<label> <idx>:<val> ...` lines (1-based indices) into a dataset.

    Indices are converted to 0-based and sorted within each row; a repeated
    index in one row is an error.  ``p`` defaults to one past the largest index
    seen; pass it explicitly when shards must agree on width.
    """
    if isinstance(text, bytes):
        text = text.decode("ascii")
    labels = []
    rows = []
    max_col = -1
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        try:
            label = float(parts[0])
        except ValueError:
            raise ValueError("line %d: bad label %r" % (lineno, parts[0]))
        entries = []
        seen = set()
        for tok in parts[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ValueError("line %d: malformed token %r" % (lineno, tok))
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ValueError("line %d: malformed token %r" % (lineno, tok))
            if idx < 1:
                raise ValueError("line %d: feature index %d < 1" % (lineno, idx))
            if idx in seen:
                raise ValueError("line %d: duplicate feature index %d" % (lineno, idx))
            seen.add(idx)
            entries.append((idx - 1, val))
            max_col = max(max_col, idx - 1)
        entries.sort()
        labels.append(label)
        rows.append(entries)

    inferred_p = max_col + 1
    if p is None:
        p = inferred_p
    elif p < inferred_p:
        raise ValueError("explicit p=%d smaller than largest index %d" % (p, inferred_p))

    n = len(rows)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    for i, ent in enumerate(rows):
        row_ptr[i + 1] = row_ptr[i] + len(ent)
    col_idx = np.empty(row_ptr[-1], dtype=np.int64)
    values = np.empty(row_ptr[-1])
    at = 0
    for ent in rows:
        for c, v in ent:
            col_idx[at] = c
            values[at] = v
            at += 1
    return SparseDataset(n, p, row_ptr, col_idx, values, labels)


def serialize_libsvm(ds):
    """Emit the parse_libsvm text format (indices back to 1-based)."""
    lines = []
    for i in range(ds.n):
        lab = ds.labels[i]
        if lab == 1.0:
            parts = ["+1"]
        elif lab == -1.0:
            parts = ["-1"]
        else:
            parts = ["%.17g" % lab]
        cols, vals = ds.row(i)
        parts.extend("%d:%.17g" % (c + 1, v) for c, v in zip(cols, vals))
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def add_bias(ds):
    """Append a constant-1 feature column (regularized like any other)."""
    n, p = ds.n, ds.p
    nnz = len(ds.values)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    col_idx = np.empty(nnz + n, dtype=np.int64)
    values = np.empty(nnz + n)
    at = 0
    for i in range(n):
        s, e = ds.row_ptr[i], ds.row_ptr[i + 1]
        col_idx[at:at + e - s] = ds.col_idx[s:e]
        values[at:at + e - s] = ds.values[s:e]
        at += e - s
        col_idx[at] = p
        values[at] = 1.0
        at += 1
        row_ptr[i + 1] = at
    return SparseDataset(n, p + 1, row_ptr, col_idx, values, ds.labels.copy())


def standardize(ds):
    """Scale each column to mean 0 and variance 1 (population convention).

    Only defined for dense datasets: filling in the means would destroy
    sparsity, so sparse input is refused.  Constant columns come out all zero.
    """
    if not ds.is_dense():
        raise ValueError("standardize requires a dense dataset (every row storing all p features)")
    M = ds.values.reshape(ds.n, ds.p).copy()
    mean = M.mean(axis=0)
    std = M.std(axis=0)  # population variance: divide by n
    M -= mean
    nonconst = std > 0
    M[:, nonconst] /= std[nonconst]
    M[:, ~nonconst] = 0.0
    return SparseDataset(ds.n, ds.p, ds.row_ptr.copy(), ds.col_idx.copy(),
                         M.reshape(-1), ds.labels.copy())
