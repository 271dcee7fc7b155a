# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Count Sketch operators, matrix sketching, and recovery.

A `SketchOperator` stands for a c×d matrix H with exactly one ±1 in each
column: column j has s(j) in row h(j).  H is never built except by
`materialize`, which exists for tests and small-scale analysis.

The bucket map h and the sign map s are pure functions of (seed, j), built
from a 64-bit integer mixer so that a descriptor (d, c, seed) reproduces the
operator bit-for-bit on any platform.

"""

import struct

import numpy as np

from comfetch.exceptions import ContractViolation
from comfetch.numerics import (
    GOLDEN64, MASK64, as_matrix, as_vector, child_seed, coordinate_median, splitmix64,
    splitmix64_array,
)


# Salts separating the bucket stream from the sign stream.
BUCKET_SALT = 0x68617368_62756B74
SIGN_SALT = 0x7369676E_73616C74

# Wire format of a sketched weight: (d, c, seed) then float32 payload.
DESCRIPTOR = struct.Struct("<QQQ")
PAYLOAD_DTYPE = np.dtype("<f4")


def bucket_of(seed, c, j):
    """The bucket h(j) for an operator with `seed` and sketch length `c`."""
    base = splitmix64((seed ^ BUCKET_SALT) & MASK64)
    return splitmix64((base + j * GOLDEN64) & MASK64) % c


def sign_of(seed, j):
    """The sign s(j), +1 or -1, for an operator with `seed`."""
    base = splitmix64((seed ^ SIGN_SALT) & MASK64)
    top = splitmix64((base + j * GOLDEN64) & MASK64) >> 63
    return 1 - 2 * top


def _hash_tables(d, c, seed):
    """Compute the bucket and sign tables for all of 0..d-1 at once."""
    j = np.arange(d, dtype=np.uint64)
    with np.errstate(over="ignore"):
        steps = j * np.uint64(GOLDEN64)
        bucket_keys = np.uint64(splitmix64((seed ^ BUCKET_SALT) & MASK64)) + steps
        sign_keys = np.uint64(splitmix64((seed ^ SIGN_SALT) & MASK64)) + steps
    buckets = (splitmix64_array(bucket_keys) % np.uint64(c)).astype(np.intp)
    tops = (splitmix64_array(sign_keys) >> np.uint64(63)).astype(np.float64)
    signs = 1.0 - 2.0 * tops
    return buckets, signs


def _frozen(a):
    a.setflags(write=False)
    return a


class SketchOperator:
    """The implicit c×d Count Sketch matrix H.

    `buckets[j]` is the row holding column j's nonzero, and `signs[j]` is
    its value.  Operators are immutable.

    """

    def __init__(self, d, c, seed, buckets, signs):
        self.d = d
        self.c = c
        self.seed = seed
        self.buckets = _frozen(buckets)
        self.signs = _frozen(signs)

    def __repr__(self):
        seed = "tables" if self.seed is None else f"{self.seed:#x}"
        return f"<SketchOperator d={self.d} c={self.c} seed={seed}>"

    @property
    def descriptor(self):
        """The (d, c, seed) triple that reconstructs this operator."""
        return (self.d, self.c, self.seed)

    @property
    def hashed(self):
        """Can this operator be rebuilt from its descriptor?"""
        return self.seed is not None

    @classmethod
    def from_tables(cls, buckets, signs, c):
        """Build an operator from explicit tables, for tests and special cases.

        The result has no seed, so it can't be serialized.

        """
        buckets = np.array(buckets, dtype=np.intp)
        signs = np.array(signs, dtype=np.float64)
        if buckets.ndim != 1 or buckets.shape != signs.shape:
            raise ContractViolation("Bucket and sign tables must be 1-D and the same length")
        d = len(buckets)
        _check_dims(d, c)
        if np.any(buckets < 0) or np.any(buckets >= c):
            raise ContractViolation(f"Buckets must be in range(0, {c})")
        if not np.all(np.abs(signs) == 1.0):
            raise ContractViolation("Signs must all be +1 or -1")
        return cls(d, c, None, buckets, signs)

    def bucket_sizes(self):
        """How many source coordinates land in each bucket, as a length-c array."""
        return np.bincount(self.buckets, minlength=self.c)

    def recovery_frobenius_sq(self):
        """‖HᵀH‖_F², exactly: the sum of squared bucket sizes."""
        return int(np.sum(self.bucket_sizes().astype(np.int64) ** 2))

    def recovery_spectral_norm(self):
        """‖HᵀH‖₂, exactly: the largest bucket size."""
        return int(np.max(self.bucket_sizes()))


def sketch_length(d, ratio):
    """The sketch length for `d` rows at compression `ratio`: round(ratio·d), at least 1."""
    return max(1, min(d, int(round(ratio * d))))


def _check_dims(d, c):
    if not (1 <= c <= d):
        raise ContractViolation(f"Sketch length must satisfy 1 <= c <= d, got c={c}, d={d}")


def new_operator(d, c, seed):
    """Make the Count Sketch operator determined by (d, c, seed)."""
    _check_dims(d, c)
    seed = int(seed) & MASK64
    buckets, signs = _hash_tables(d, c, seed)
    return SketchOperator(d, c, seed, buckets, signs)


def identity_operator(d):
    """The d×d operator with h = identity and all signs +1, so HᵀH = I."""
    return SketchOperator.from_tables(np.arange(d), np.ones(d), d)


def apply(op, x):
    """Hx, for a length-d vector `x`."""
    x = as_vector(x, "sketched vector")
    if len(x) != op.d:
        raise ContractViolation(f"Operator takes length {op.d}, got {len(x)}")
    out = np.zeros(op.c)
    np.add.at(out, op.buckets, op.signs * x)
    return out


def apply_transpose(op, y):
    """Hᵀy, for a length-c vector `y`."""
    y = as_vector(y, "sketch")
    if len(y) != op.c:
        raise ContractViolation(f"Operator transpose takes length {op.c}, got {len(y)}")
    return op.signs * y[op.buckets]


def sketch_matrix(op, w):
    """HW for a d×n matrix `w`, giving c×n."""
    w = as_matrix(w, "sketched matrix")
    if w.shape[0] != op.d:
        raise ContractViolation(f"Operator takes {op.d} rows, got {w.shape[0]}")
    out = np.zeros((op.c, w.shape[1]))
    np.add.at(out, op.buckets, op.signs[:, None] * w)
    return out


def unsketch_matrix(op, s):
    """Hᵀs for a c×n matrix `s`, giving d×n."""
    s = as_matrix(s, "sketch")
    if s.shape[0] != op.c:
        raise ContractViolation(f"Operator transpose takes {op.c} rows, got {s.shape[0]}")
    return op.signs[:, None] * s[op.buckets]


def materialize(op):
    """Build H as a dense c×d matrix."""
    h = np.zeros((op.c, op.d))
    h[op.buckets, np.arange(op.d)] = op.signs
    return h


class MultiSketch:
    """k independent operators over the same (d, c)."""

    def __init__(self, ops):
        ops = tuple(ops)
        if not ops:
            raise ContractViolation("A multi-sketch needs at least one operator")
        first = ops[0]
        if any((op.d, op.c) != (first.d, first.c) for op in ops):
            raise ContractViolation("All operators in a multi-sketch must share d and c")
        self.ops = ops

    def __repr__(self):
        return f"<MultiSketch k={self.k} d={self.d} c={self.c}>"

    def __len__(self):
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)

    def __getitem__(self, i):
        return self.ops[i]

    @property
    def k(self):
        return len(self.ops)

    @property
    def d(self):
        return self.ops[0].d

    @property
    def c(self):
        return self.ops[0].c


def new_multi_sketch(d, c, seed, k):
    """Make k operators with seeds derived from `seed`."""
    if k < 1:
        raise ContractViolation(f"Sketch count must be at least 1, got {k}")
    return MultiSketch(new_operator(d, c, child_seed(seed, i)) for i in range(k))


def recover_median(ms, sketches):
    """Coordinate-wise median of Hᵢᵀ·sketchᵢ over the operators of `ms`."""
    if len(sketches) != ms.k:
        raise ContractViolation(f"Expected {ms.k} sketches, got {len(sketches)}")
    estimates = np.stack([unsketch_matrix(op, s) for op, s in zip(ms, sketches)])
    if ms.k == 1:
        return estimates[0]
    return coordinate_median(estimates).value


def two_sided_sketch(op1, op2, w):
    """H₁·w·H₂ᵀ, for a matrix with op1.d rows and op2.d columns."""
    w = as_matrix(w, "sketched matrix")
    if w.shape != (op1.d, op2.d):
        raise ContractViolation(
            f"Two-sided sketch needs a {op1.d}x{op2.d} matrix, got {w.shape[0]}x{w.shape[1]}"
        )
    left = sketch_matrix(op1, w)
    return sketch_matrix(op2, left.T).T


def two_sided_unsketch(op1, op2, s):
    """H₁ᵀ·s·H₂, the adjoint of `two_sided_sketch`."""
    s = as_matrix(s, "sketch")
    if s.shape != (op1.c, op2.c):
        raise ContractViolation(
            f"Two-sided sketch must be {op1.c}x{op2.c}, got {s.shape[0]}x{s.shape[1]}"
        )
    left = unsketch_matrix(op1, s)
    return unsketch_matrix(op2, left.T).T


def two_sided_recover(pairs, sketches):
    """Recover from two-sided sketches, taking the median over operator pairs.

    `pairs` is a sequence of (op1, op2), one per entry of `sketches`.

    """
    pairs = list(pairs)
    if not pairs or len(pairs) != len(sketches):
        raise ContractViolation(f"Expected one sketch per operator pair, got {len(sketches)}")
    estimates = np.stack([two_sided_unsketch(o1, o2, s) for (o1, o2), s in zip(pairs, sketches)])
    if len(pairs) == 1:
        return estimates[0]
    return coordinate_median(estimates).value


class SketchedWeight:
    """What a client holds for one layer: an operator and HW."""

    def __init__(self, op, payload):
        payload = as_matrix(payload, "sketch payload")
        if payload.shape[0] != op.c:
            raise ContractViolation(
                f"Payload has {payload.shape[0]} rows, operator sketches to {op.c}"
            )
        self.op = op
        self.payload = _frozen(payload)

    def __repr__(self):
        return f"<SketchedWeight {self.op!r} payload={self.payload.shape}>"

    @classmethod
    def from_weight(cls, op, w):
        """Sketch the weight matrix `w` with `op`."""
        return cls(op, sketch_matrix(op, w))

    @property
    def descriptor(self):
        return self.op.descriptor

    @property
    def cols(self):
        return self.payload.shape[1]

    def recover(self):
        """HᵀHW, the recovered weight."""
        return unsketch_matrix(self.op, self.payload)

    def to_bytes(self):
        """Serialize to the wire format: descriptor, then float32 payload."""
        if not self.op.hashed:
            raise ContractViolation("Only seeded operators can be serialized")
        head = DESCRIPTOR.pack(*self.op.descriptor)
        return head + self.payload.astype(PAYLOAD_DTYPE).tobytes()

    @classmethod
    def from_bytes(cls, data):
        """Deserialize `to_bytes` output.  The payload comes back as float32 values."""
        if len(data) < DESCRIPTOR.size:
            raise ContractViolation(f"Sketched weight needs at least {DESCRIPTOR.size} bytes")
        d, c, seed = DESCRIPTOR.unpack_from(data)
        body = np.frombuffer(data, dtype=PAYLOAD_DTYPE, offset=DESCRIPTOR.size)
        if c == 0 or len(body) % c:
            raise ContractViolation(f"Payload of {len(body)} values doesn't fit {c} rows")
        payload = body.astype(np.float64).reshape(c, len(body) // c)
        return cls(new_operator(d, c, seed), payload)


def wire_size(c, n):
    """Bytes on the wire for one sketched c×n weight."""
    return DESCRIPTOR.size + PAYLOAD_DTYPE.itemsize * c * n
