"""Dense density operators and classical-quantum states.

Classical registers are never embedded as diagonal matrices unless a caller
asks for the joint operator (:func:`assemble_cq`).  A :class:`CqState` keeps
the probability table and the conditional quantum states separately, which
keeps conditioning exact and avoids the ``d_X`` blow-up.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TOL = 1e-10


class StateError(ValueError):
    """Raised when an operator or table violates a state invariant."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def check_density(matrix: np.ndarray, tol: float = TOL) -> None:
    """Raise :class:`StateError` unless ``matrix`` is a density matrix."""
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise StateError(f"expected a square matrix, got shape {matrix.shape}")
    herm = np.max(np.abs(matrix - matrix.conj().T)) if matrix.size else 0.0
    if herm > tol:
        raise StateError(f"not Hermitian (deviation {herm:.3g})")
    tr = np.trace(matrix).real
    if abs(tr - 1.0) > tol:
        raise StateError(f"trace {tr!r} differs from 1")
    lo = np.linalg.eigvalsh(0.5 * (matrix + matrix.conj().T))[0]
    if lo < -tol:
        raise StateError(f"negative eigenvalue {lo:.3g}")


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Hermitian, positive semidefinite, unit-trace matrix with subsystem dims."""

    matrix: np.ndarray
    dims: tuple[int, ...]

    def __init__(self, matrix, dims: Sequence[int] | None = None, validate: bool = True):
        m = np.asarray(matrix, dtype=np.complex128)
        if dims is None:
            dims = (m.shape[0],)
        dims = tuple(int(d) for d in dims)
        if any(d < 1 for d in dims):
            raise StateError(f"subsystem dimensions must be positive: {dims}")
        if m.ndim != 2 or m.shape[0] != m.shape[1] or int(np.prod(dims)) != m.shape[0]:
            raise StateError(f"dims {dims} do not match matrix shape {m.shape}")
        if validate:
            check_density(m)
        object.__setattr__(self, "matrix", _frozen(m))
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    @classmethod
    def pure(cls, vec, dims=None) -> "DensityOperator":
        v = np.asarray(vec, dtype=np.complex128).ravel()
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()), dims)

    @classmethod
    def maximally_mixed(cls, dims: Sequence[int]) -> "DensityOperator":
        d = int(np.prod(dims))
        return cls(np.eye(d) / d, dims)

    @classmethod
    def basis(cls, index: int, dim: int) -> "DensityOperator":
        m = np.zeros((dim, dim))
        m[index, index] = 1.0
        return cls(m, (dim,))

    def __repr__(self) -> str:
        return f"DensityOperator(dims={self.dims})"


def tensor(a: DensityOperator, b: DensityOperator) -> DensityOperator:
    return DensityOperator(np.kron(a.matrix, b.matrix), a.dims + b.dims, validate=False)


def tensor_all(ops: Iterable[DensityOperator]) -> DensityOperator:
    ops = list(ops)
    out = ops[0]
    for op in ops[1:]:
        out = tensor(out, op)
    return out


def partial_trace_matrix(matrix: np.ndarray, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Partial trace of a raw matrix, keeping subsystems ``keep`` in their original order."""
    dims = tuple(dims)
    n = len(dims)
    keep = sorted(set(keep))
    if any(k < 0 or k >= n for k in keep):
        raise StateError(f"subsystem index out of range in {keep} for dims {dims}")
    traced = [i for i in range(n) if i not in keep]
    t = matrix.reshape(dims + dims)
    # trace pairs from the highest index down so lower axis numbers stay valid
    cur = n
    for i in sorted(traced, reverse=True):
        t = np.trace(t, axis1=i, axis2=i + cur)
        cur -= 1
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    return t.reshape(dk, dk)


def partial_trace(rho: DensityOperator, keep: Iterable[int]) -> DensityOperator:
    keep = sorted(set(keep))
    if not keep:
        raise StateError("keep must name at least one subsystem")
    m = partial_trace_matrix(rho.matrix, rho.dims, keep)
    return DensityOperator(m, tuple(rho.dims[i] for i in keep), validate=False)


def permute_subsystems(matrix: np.ndarray, dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors so that new factor ``k`` is old factor ``order[k]``."""
    dims = tuple(dims)
    n = len(dims)
    t = matrix.reshape(dims + dims)
    t = t.transpose(list(order) + [n + i for i in order])
    d = int(np.prod(dims))
    return t.reshape(d, d)


# ---------------------------------------------------------------------------
# classical-quantum states
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CqState:
    """``sum_x p(x) |x><x| (x) rho_B^(x)`` stored as a table.

    ``dist`` has one axis per classical label; ``family`` has the same leading
    axes followed by the ``(d_B, d_B)`` matrix axes.
    """

    labels: tuple[str, ...]
    dist: np.ndarray
    family: np.ndarray
    dims: tuple[int, ...]

    def __init__(self, labels, dist, family, dims=None, validate: bool = True):
        labels = tuple(str(l) for l in labels)
        if len(set(labels)) != len(labels):
            raise StateError(f"duplicate labels {labels}")
        dist = np.asarray(dist, dtype=np.float64)
        family = np.asarray(family, dtype=np.complex128)
        if dist.ndim != len(labels):
            raise StateError(f"dist has {dist.ndim} axes for {len(labels)} labels")
        if family.shape[: dist.ndim] != dist.shape or family.ndim != dist.ndim + 2:
            raise StateError(
                f"family shape {family.shape} incompatible with dist shape {dist.shape}"
            )
        d = family.shape[-1]
        if family.shape[-2] != d:
            raise StateError("family matrices must be square")
        dims = (d,) if dims is None else tuple(int(x) for x in dims)
        if int(np.prod(dims)) != d:
            raise StateError(f"dims {dims} do not match family matrix size {d}")
        if validate:
            if np.any(dist < -TOL):
                raise StateError("negative probability")
            if abs(dist.sum() - 1.0) > TOL:
                raise StateError(f"distribution sums to {dist.sum()!r}")
            for x in np.ndindex(dist.shape):
                try:
                    check_density(family[x])
                except StateError as exc:
                    raise StateError(f"family entry {x}: {exc}") from None
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dist", _frozen(np.clip(dist, 0.0, None)))
        object.__setattr__(self, "family", _frozen(family))
        object.__setattr__(self, "dims", dims)

    @property
    def sizes(self) -> tuple[int, ...]:
        return self.dist.shape

    @property
    def d_b(self) -> int:
        return self.family.shape[-1]

    def axes(self, labels: Iterable[str]) -> list[int]:
        out = []
        for l in labels:
            if l not in self.labels:
                raise StateError(f"unknown label {l!r}; state has {self.labels}")
            out.append(self.labels.index(l))
        return out

    def state(self, x) -> DensityOperator:
        return DensityOperator(self.family[tuple(x)], self.dims, validate=False)

    def average_b(self) -> np.ndarray:
        """The B marginal ``sum_x p(x) rho^(x)``."""
        return np.tensordot(self.dist, self.family, axes=self.dist.ndim)

    def __repr__(self) -> str:
        return f"CqState(labels={self.labels}, sizes={self.sizes}, dims={self.dims})"


def average_family(dist: np.ndarray, family: np.ndarray, axes: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Sum out classical ``axes``: returns the marginal table and the
    conditionally averaged states (zero-weight cells hold the plain average)."""
    axes = tuple(sorted(axes))
    if not axes:
        return dist, family
    marg = dist.sum(axis=axes)
    weighted = (dist[(...,) + (None, None)] * family).sum(axis=axes)
    safe = np.where(marg > 0, marg, 1.0)
    cond = weighted / safe[(...,) + (None, None)]
    empty = marg <= 0
    if np.any(empty):
        flat = family.mean(axis=axes)
        cond = np.where(empty[(...,) + (None, None)], flat, cond)
    return marg, cond


def marginalize(state: CqState, keep: Sequence[str]) -> CqState:
    """Trace out every classical label not in ``keep`` (result follows ``keep`` order)."""
    keep_axes = state.axes(keep)
    drop = [i for i in range(len(state.labels)) if i not in keep_axes]
    marg, fam = average_family(state.dist, state.family, drop)
    remaining = [i for i in range(len(state.labels)) if i in keep_axes]
    perm = [remaining.index(a) for a in keep_axes]
    marg = np.transpose(marg, perm)
    fam = np.transpose(fam, perm + [len(perm), len(perm) + 1])
    return CqState(tuple(keep), marg, fam, state.dims, validate=False)


def reduce_quantum(state: CqState, keep: Iterable[int]) -> CqState:
    """Partial trace of every conditional state onto quantum subsystems ``keep``."""
    keep = sorted(set(keep))
    shape = state.dist.shape
    fam = state.family.reshape((-1,) + state.family.shape[-2:])
    red = np.stack([partial_trace_matrix(m, state.dims, keep) for m in fam])
    d = red.shape[-1]
    return CqState(
        state.labels,
        state.dist,
        red.reshape(shape + (d, d)),
        tuple(state.dims[i] for i in keep),
        validate=False,
    )


def assemble_cq(state: CqState) -> DensityOperator:
    """Block-diagonal joint operator ``sum_x p(x)|x><x| (x) rho^(x)``."""
    nx = int(np.prod(state.sizes))
    d = state.d_b
    out = np.zeros((nx * d, nx * d), dtype=np.complex128)
    p = state.dist.ravel()
    fam = state.family.reshape(nx, d, d)
    for i in range(nx):
        out[i * d:(i + 1) * d, i * d:(i + 1) * d] = p[i] * fam[i]
    return DensityOperator(out, tuple(state.sizes) + tuple(state.dims), validate=False)


@dataclass(frozen=True)
class ConditionalDecomposition:
    """``x_cond -> (p(x_cond), rho^(x_cond)_{X_S B})`` with zero weights omitted."""

    conditioned_labels: tuple[str, ...]
    free_labels: tuple[str, ...]
    table: dict = field(default_factory=dict)

    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.table.values()])

    def reassemble(self, like: CqState) -> CqState:
        """Rebuild the joint state in the label order of ``like``."""
        dist = np.zeros(like.sizes)
        fam = np.zeros(like.family.shape, dtype=np.complex128)
        cond_axes = like.axes(self.conditioned_labels)
        free_axes = like.axes(self.free_labels)
        for xc, (w, sub) in self.table.items():
            for xf in np.ndindex(sub.sizes):
                idx = [0] * len(like.labels)
                for a, v in zip(cond_axes, xc):
                    idx[a] = v
                for a, v in zip(free_axes, xf):
                    idx[a] = v
                dist[tuple(idx)] = w * sub.dist[xf]
                fam[tuple(idx)] = sub.family[xf]
        return CqState(like.labels, dist, fam, like.dims, validate=False)


def condition_on(state: CqState, conditioned: Sequence[str]) -> ConditionalDecomposition:
    conditioned = tuple(conditioned)
    cond_axes = state.axes(conditioned)
    free = tuple(l for l in state.labels if l not in conditioned)
    free_axes = state.axes(free)
    # bring conditioned axes to the front
    perm = cond_axes + free_axes
    dist = np.transpose(state.dist, perm)
    fam = np.transpose(state.family, perm + [len(perm), len(perm) + 1])
    csizes = dist.shape[: len(cond_axes)]
    table = {}
    for xc in itertools.product(*(range(s) for s in csizes)):
        w = float(dist[xc].sum())
        if w <= 0.0:
            continue
        sub = CqState(free, dist[xc] / w, fam[xc], state.dims, validate=False)
        table[xc] = (w, sub)
    return ConditionalDecomposition(conditioned, free, table)


def conditional_b_states(state: CqState, severed: Sequence[str]) -> np.ndarray:
    """Family ``x -> rho_B^(x_{not severed})``: the B state averaged over the
    severed labels given the rest, broadcast back to the full alphabet."""
    s_axes = state.axes(severed)
    _, cond = average_family(state.dist, state.family, s_axes)
    cond = np.expand_dims(cond, tuple(sorted(s_axes)))
    return np.broadcast_to(cond, state.family.shape)


def marginal_product(state: CqState, S: Sequence[str]) -> DensityOperator:
    """Joint operator with ``rho^(x)`` replaced by ``rho^(x_{V minus S})``."""
    fam = conditional_b_states(state, S)
    surrogate = CqState(state.labels, state.dist, fam, state.dims, validate=False)
    return assemble_cq(surrogate)


def marginal_product_cq(state: CqState, S: Sequence[str]) -> CqState:
    """Same surrogate as :func:`marginal_product`, kept in table form."""
    fam = np.array(conditional_b_states(state, S))
    return CqState(state.labels, state.dist, fam, state.dims, validate=False)


def product_dist(*marginals) -> np.ndarray:
    out = np.asarray(marginals[0], dtype=float)
    for m in marginals[1:]:
        out = np.multiply.outer(out, np.asarray(m, dtype=float))
    return out


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density matrix from a complex Ginibre ensemble."""
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    m = g @ g.conj().T
    return m / np.trace(m).real


def random_cq_state(rng: np.random.Generator, sizes: Sequence[int], d_b: int, labels=None) -> CqState:
    sizes = tuple(sizes)
    labels = labels or tuple(f"X{i + 1}" for i in range(len(sizes)))
    dist = rng.dirichlet(np.ones(int(np.prod(sizes)))).reshape(sizes)
    fam = np.stack([random_density(d_b, rng) for _ in range(int(np.prod(sizes)))])
    return CqState(labels, dist, fam.reshape(sizes + (d_b, d_b)))
