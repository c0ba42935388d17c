"""Dense tensors, tensor-ring / CP factors, and conversions between models.

Index conventions (stated once, applied everywhere): tensors are stored as
0-based, row-major (last index fastest) numpy arrays.  Mathematical 1-based
index notation maps to storage by subtracting one from every coordinate.

A tensor-ring (TR) representation of a d-way tensor is a list of d cores,
core i of shape ``r_i x N_i x r_{i+1}`` with the wrap-around convention
``r_{d+1} = r_1``.  The tensor entry at multi-index x is the trace of the
product of the d lateral core slices::

    u[x] = trace( Z_1[:, x_1, :] @ Z_2[:, x_2, :] @ ... @ Z_d[:, x_d, :] )

A CP representation is d factor matrices of shape ``N_i x r``; entry x is
``sum_l  prod_i  A_i[x_i, l]``.  CP embeds into TR with all ranks equal to r
and diagonal core slices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng

__all__ = [
    "Shape",
    "RankVector",
    "DenseTensor",
    "TRFactors",
    "CPFactors",
    "tr_contract",
    "tr_full",
    "cp_evaluate",
    "cp_full",
    "cp_to_tr",
    "tt_to_tr",
    "tucker_to_tr",
    "random_tr",
    "random_cp",
    "save_tensor_txt",
    "load_tensor_txt",
    "save_tr_factors_txt",
    "load_tr_factors_txt",
]


class TensorTextError(ValueError):
    """Malformed tensor text file; message carries the offending line."""


@dataclass(frozen=True)
class Shape:
    """Sizes N_1..N_d of a d-way tensor, d >= 2."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) < 2:
            raise ValueError(f"need at least 2 modes, got {len(dims)}")
        if any(n < 1 for n in dims):
            raise ValueError(f"all dims must be >= 1, got {dims}")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def total(self) -> int:
        return int(np.prod(self.dims))

    def check_index(self, index) -> tuple[int, ...]:
        """Validate a 0-based multi-index against this shape."""
        x = tuple(int(i) for i in index)
        if len(x) != self.ndim:
            raise IndexError(f"index has {len(x)} coords, tensor has {self.ndim} modes")
        for i, (xi, ni) in enumerate(zip(x, self.dims)):
            if not 0 <= xi < ni:
                raise IndexError(f"coordinate {i} out of range: {xi} not in [0, {ni})")
        return x


@dataclass(frozen=True)
class RankVector:
    """TR-ranks r_1..r_d with the implicit wrap-around r_{d+1} = r_1."""

    ranks: tuple[int, ...]

    def __post_init__(self):
        ranks = tuple(int(r) for r in self.ranks)
        object.__setattr__(self, "ranks", ranks)
        if any(r < 1 for r in ranks):
            raise ValueError(f"all ranks must be >= 1, got {ranks}")

    def __len__(self) -> int:
        return len(self.ranks)

    def pair(self, i: int) -> tuple[int, int]:
        """(r_i, r_{i+1}) for core i, wrap-around included."""
        d = len(self.ranks)
        return self.ranks[i % d], self.ranks[(i + 1) % d]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DenseTensor:
    """Dense d-way tensor: a shape plus a flat row-major value array."""

    shape: Shape
    data: np.ndarray

    def __post_init__(self):
        data = _frozen(np.asarray(self.data, dtype=np.float64).ravel())
        object.__setattr__(self, "data", data)
        if data.size != self.shape.total:
            raise ValueError(
                f"data length {data.size} != shape total {self.shape.total}"
            )

    @classmethod
    def from_array(cls, arr) -> "DenseTensor":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(Shape(arr.shape), arr.ravel())

    @property
    def array(self) -> np.ndarray:
        """Read-only d-way view of the data."""
        return self.data.reshape(self.shape.dims)

    def __getitem__(self, index) -> float:
        x = self.shape.check_index(index)
        return float(self.array[x])


@dataclass(frozen=True)
class TRFactors:
    """Tensor-ring cores, core i of shape r_i x N_i x r_{i+1}."""

    cores: tuple[np.ndarray, ...]

    def __post_init__(self):
        cores = tuple(_frozen(c) for c in self.cores)
        object.__setattr__(self, "cores", cores)
        d = len(cores)
        if d < 2:
            raise ValueError("need at least 2 cores")
        for i, c in enumerate(cores):
            if c.ndim != 3:
                raise ValueError(f"core {i} must be 3-way, got ndim={c.ndim}")
            nxt = cores[(i + 1) % d]
            if c.shape[2] != nxt.shape[0]:
                raise ValueError(
                    f"rank mismatch between core {i} (last rank {c.shape[2]}) "
                    f"and core {(i + 1) % d} (first rank {nxt.shape[0]})"
                )

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> Shape:
        return Shape(tuple(c.shape[1] for c in self.cores))

    @property
    def ranks(self) -> RankVector:
        return RankVector(tuple(c.shape[0] for c in self.cores))


@dataclass(frozen=True)
class CPFactors:
    """CP factor matrices, matrix i of shape N_i x r (column l is the l-th
    rank-one component along mode i)."""

    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        factors = tuple(_frozen(f) for f in self.factors)
        object.__setattr__(self, "factors", factors)
        if len(factors) < 2:
            raise ValueError("need at least 2 factor matrices")
        r = factors[0].shape[1] if factors[0].ndim == 2 else -1
        for i, f in enumerate(factors):
            if f.ndim != 2:
                raise ValueError(f"factor {i} must be a matrix, got ndim={f.ndim}")
            if f.shape[1] != r:
                raise ValueError(
                    f"factor {i} has rank {f.shape[1]}, factor 0 has rank {r}"
                )

    @property
    def ndim(self) -> int:
        return len(self.factors)

    @property
    def rank(self) -> int:
        return int(self.factors[0].shape[1])

    @property
    def shape(self) -> Shape:
        return Shape(tuple(f.shape[0] for f in self.factors))


# ---------------------------------------------------------------------------
# evaluation


def tr_contract(factors: TRFactors, index) -> float:
    """Tensor entry at a multi-index: trace of the product of core slices.

    Computed by left-to-right matrix accumulation, cost sum_i r_i*r_{i+1}
    per index.  Equals the explicit multi-sum over all rank tuples up to
    floating-point rounding; the multi-sum lives in the test suite as an
    oracle only.
    """
    x = factors.shape.check_index(index)
    m = factors.cores[0][:, x[0], :]
    for i in range(1, factors.ndim):
        m = m @ factors.cores[i][:, x[i], :]
    return float(np.trace(m))


def tr_full(factors: TRFactors) -> DenseTensor:
    """Materialize the full tensor, entry by entry via :func:`tr_contract`."""
    dims = factors.shape.dims
    out = np.empty(dims, dtype=np.float64)
    for x in np.ndindex(*dims):
        m = factors.cores[0][:, x[0], :]
        for i in range(1, factors.ndim):
            m = m @ factors.cores[i][:, x[i], :]
        out[x] = np.trace(m)
    return DenseTensor.from_array(out)


def cp_evaluate(factors: CPFactors, index) -> float:
    """Tensor entry at a multi-index: sum over components of mode products."""
    x = factors.shape.check_index(index)
    prod = np.ones(factors.rank, dtype=np.float64)
    for i, f in enumerate(factors.factors):
        prod = prod * f[x[i], :]
    return float(prod.sum())


def cp_full(factors: CPFactors) -> DenseTensor:
    """Materialize the full CP tensor (sum of rank-one outer products)."""
    dims = factors.shape.dims
    out = np.zeros(dims, dtype=np.float64)
    for l in range(factors.rank):
        comp = factors.factors[0][:, l]
        for f in factors.factors[1:]:
            comp = np.multiply.outer(comp, f[:, l])
        out += comp
    return DenseTensor.from_array(out)


# ---------------------------------------------------------------------------
# conversions into the TR representation


def cp_to_tr(factors: CPFactors) -> TRFactors:
    """Embed CP factors as TR cores with all ranks r and diagonal slices.

    Slice i at coordinate x_i is diag(A_i[x_i, 1], ..., A_i[x_i, r]), so the
    trace of the slice product recovers the CP sum exactly.
    """
    r = factors.rank
    cores = []
    for f in factors.factors:
        n = f.shape[0]
        c = np.zeros((r, n, r), dtype=np.float64)
        idx = np.arange(r)
        c[idx, :, idx] = f.T
        cores.append(c)
    return TRFactors(tuple(cores))


def tt_to_tr(first: np.ndarray, mids, last: np.ndarray) -> TRFactors:
    """Wrap a tensor-train (boundary rank 1) into the ring representation.

    ``first`` is N_1 x r_2, ``mids`` are interior 3-way cores, ``last`` is
    r_d x N_d.  The result has wrap rank 1, and its full tensor equals the
    train product row(first) @ mid slices @ column(last).
    """
    first = np.asarray(first, dtype=np.float64)
    last = np.asarray(last, dtype=np.float64)
    if first.ndim != 2 or last.ndim != 2:
        raise ValueError("boundary cores must be matrices")
    cores = [first[None, :, :]]  # 1 x N_1 x r_2
    for m in mids:
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 3:
            raise ValueError("interior cores must be 3-way")
        cores.append(m)
    cores.append(last[:, :, None])  # r_d x N_d x 1
    try:
        return TRFactors(tuple(cores))
    except ValueError as e:
        raise ValueError(f"tensor-train ranks are incompatible: {e}") from e


def tucker_to_tr(core_tr: TRFactors, factor_mats) -> TRFactors:
    """Contract a ring-format Tucker core with per-mode factor matrices.

    Output core i is the mode-2 contraction of core_tr's core i with the
    N_i x s_i matrix M_i:  Z_i[a, n, b] = sum_s Y_i[a, s, b] * M_i[n, s].
    The full tensor of the result equals the Tucker product of the ring
    core with the factors.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in factor_mats]
    if len(mats) != core_tr.ndim:
        raise ValueError(
            f"got {len(mats)} factor matrices for {core_tr.ndim} cores"
        )
    cores = []
    for i, (y, m) in enumerate(zip(core_tr.cores, mats)):
        if m.ndim != 2 or m.shape[1] != y.shape[1]:
            raise ValueError(
                f"factor matrix {i} must be N_{i} x {y.shape[1]}, got {m.shape}"
            )
        cores.append(np.einsum("asb,ns->anb", y, m))
    return TRFactors(tuple(cores))


# ---------------------------------------------------------------------------
# random factors


def random_tr(shape: Shape, ranks: RankVector, seed: int) -> TRFactors:
    """TR cores with i.i.d. standard normal entries from the package RNG."""
    if len(ranks) != shape.ndim:
        raise ValueError(f"{len(ranks)} ranks for {shape.ndim} modes")
    sizes = [
        ranks.pair(i)[0] * n * ranks.pair(i)[1] for i, n in enumerate(shape.dims)
    ]
    vals = rng.normals(seed, int(sum(sizes)))
    cores, pos = [], 0
    for i, n in enumerate(shape.dims):
        ri, rj = ranks.pair(i)
        cores.append(vals[pos : pos + ri * n * rj].reshape(ri, n, rj))
        pos += ri * n * rj
    return TRFactors(tuple(cores))


def random_cp(shape: Shape, rank: int, seed: int) -> CPFactors:
    """CP factors with i.i.d. standard normal entries from the package RNG."""
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    sizes = [n * rank for n in shape.dims]
    vals = rng.normals(seed, int(sum(sizes)))
    mats, pos = [], 0
    for n in shape.dims:
        mats.append(vals[pos : pos + n * rank].reshape(n, rank))
        pos += n * rank
    return CPFactors(tuple(mats))


# ---------------------------------------------------------------------------
# text serialization
#
# Format: first line "dims: N1 N2 ... Nd", then one row-major value per line
# printed with 17 significant digits (lossless for float64).


def save_tensor_txt(t: DenseTensor, path) -> None:
    with open(path, "w") as fh:
        fh.write(_tensor_block(t.array))


def _tensor_block(arr: np.ndarray) -> str:
    lines = ["dims: " + " ".join(str(n) for n in arr.shape)]
    lines += [f"{v:.17g}" for v in arr.ravel()]
    return "\n".join(lines) + "\n"


def load_tensor_txt(path) -> DenseTensor:
    with open(path) as fh:
        lines = fh.read().splitlines()
    arr, used = _parse_tensor_block(lines, 0, path)
    if used != len([ln for ln in lines if ln.strip()]):
        raise TensorTextError(f"{path}: trailing content after tensor values")
    return DenseTensor.from_array(arr)


def _parse_tensor_block(lines, start, path):
    """Parse one dims+values block; returns (array, next_nonblank_line_count).

    Line numbers in errors are 1-based over the whole file.
    """
    idx = [i for i, ln in enumerate(lines) if ln.strip()]
    if start >= len(idx):
        raise TensorTextError(f"{path}: expected 'dims:' header, found end of file")
    header = lines[idx[start]].strip()
    if not header.startswith("dims:"):
        raise TensorTextError(
            f"{path}: line {idx[start] + 1}: expected 'dims:' header, got {header!r}"
        )
    try:
        dims = tuple(int(tok) for tok in header[len("dims:"):].split())
    except ValueError:
        raise TensorTextError(
            f"{path}: line {idx[start] + 1}: malformed dims header {header!r}"
        ) from None
    total = int(np.prod(dims)) if dims else 0
    if not dims or total <= 0:
        raise TensorTextError(f"{path}: line {idx[start] + 1}: empty dims")
    vals = np.empty(total, dtype=np.float64)
    for k in range(total):
        pos = start + 1 + k
        if pos >= len(idx):
            raise TensorTextError(
                f"{path}: expected {total} values after line {idx[start] + 1}, "
                f"got {k}"
            )
        tok = lines[idx[pos]].strip()
        try:
            vals[k] = float(tok)
        except ValueError:
            raise TensorTextError(
                f"{path}: line {idx[pos] + 1}: not a number: {tok!r}"
            ) from None
    return vals.reshape(dims), start + 1 + total


def save_tr_factors_txt(factors: TRFactors, path) -> None:
    """Cores written back to back, each as a dims+values block."""
    with open(path, "w") as fh:
        fh.write(f"cores: {factors.ndim}\n")
        for c in factors.cores:
            fh.write(_tensor_block(c))


def load_tr_factors_txt(path) -> TRFactors:
    with open(path) as fh:
        lines = fh.read().splitlines()
    nonblank = [ln for ln in lines if ln.strip()]
    if not nonblank or not nonblank[0].strip().startswith("cores:"):
        raise TensorTextError(f"{path}: expected 'cores:' header on first line")
    try:
        d = int(nonblank[0].split(":", 1)[1])
    except ValueError:
        raise TensorTextError(f"{path}: malformed 'cores:' header") from None
    # Re-parse skipping the header line.
    body = [ln for ln in lines if ln.strip()][1:]
    cores, start = [], 0
    for _ in range(d):
        arr, start = _parse_tensor_block(body, start, path)
        if arr.ndim != 3:
            raise TensorTextError(f"{path}: core block is not 3-way")
        cores.append(arr)
    return TRFactors(tuple(cores))
