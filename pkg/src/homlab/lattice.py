"""Lattice domains (torus / Dirichlet box) and discrete vector calculus.

Conventions used throughout the package:

* Nodes are indexed lexicographically (C order) over their coordinate grid.
  A torus of side ``L`` has node grid ``(L,)*d``; a Dirichlet box of side
  ``L`` has the closure grid ``(L+1,)*d`` with coordinates ``0..L`` and the
  Dirichlet layer on the faces ``x_k in {0, L}``.
* An edge field is a tuple of ``d`` arrays, one per axis.  Entry ``F[k][x]``
  lives on the oriented edge from ``x`` to ``x + e_k`` (wrapping on the
  torus). Flattening axis 0 array first, then axis 1, ... gives the
  canonical "axis-major, node-lexicographic" edge order used by file I/O.
* ``gradient`` is the forward difference per edge and ``divergence`` its
  exact negative adjoint, so summation by parts holds to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

EdgeField = tuple  # tuple of d ndarrays, one per axis
NodeField = np.ndarray

MAX_NODES = 2**28  # index-space guard


class SizeError(ValueError):
    pass


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class DomainGrid:
    """A periodic torus or a Dirichlet box on the unit lattice."""

    kind: str  # "torus" | "box"
    L: int
    d: int

    @property
    def node_shape(self) -> tuple:
        if self.kind == "torus":
            return (self.L,) * self.d
        return (self.L + 1,) * self.d

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    def edge_shape(self, k: int) -> tuple:
        if self.kind == "torus":
            return self.node_shape
        shape = list(self.node_shape)
        shape[k] = self.L
        return tuple(shape)

    @property
    def n_edges(self) -> int:
        return sum(int(np.prod(self.edge_shape(k))) for k in range(self.d))

    def zeros_nodes(self) -> NodeField:
        return np.zeros(self.node_shape)

    def zeros_edges(self) -> EdgeField:
        return tuple(np.zeros(self.edge_shape(k)) for k in range(self.d))

    # --- box-only geometry ------------------------------------------------

    def boundary_distance(self) -> NodeField:
        """Per-node distance to the Dirichlet layer (box only).

        This is the l-infinity graph distance: delta = 0 exactly on the
        layer, >= 1 in the interior.
        """
        if self.kind != "box":
            raise ValueError("boundary_distance is defined for boxes only")
        axes = np.indices(self.node_shape)
        return np.minimum.reduce([np.minimum(c, self.L - c) for c in axes])

    def interior_mask(self) -> np.ndarray:
        if self.kind != "box":
            raise ValueError("interior_mask is defined for boxes only")
        return self.boundary_distance() >= 1

    def corner_tie_mask(self) -> np.ndarray:
        """Nodes whose nearest-face distance is attained by >= 2 faces.

        Excluded from boundary-profile statistics: the smooth-boundary
        estimates have no corner analog.
        """
        axes = np.indices(self.node_shape)
        dists = np.stack([c for ax in axes for c in (ax, self.L - ax)])
        dmin = dists.min(axis=0)
        return (dists == dmin).sum(axis=0) >= 2


def build_torus(L: int, d: int) -> DomainGrid:
    if L < 2:
        raise SizeError(f"torus side must be >= 2, got {L}")
    if L**d > MAX_NODES:
        raise SizeError(f"torus {L}^{d} exceeds index space")
    return DomainGrid("torus", L, d)


def build_box(L: int, d: int) -> DomainGrid:
    if L < 3:
        raise SizeError(f"box side must be >= 3, got {L}")
    if (L + 1) ** d > MAX_NODES:
        raise SizeError(f"box {L}^{d} exceeds index space")
    return DomainGrid("box", L, d)


def _axis_slice(d: int, k: int, sl) -> tuple:
    out = [slice(None)] * d
    out[k] = sl
    return tuple(out)


def gradient(domain: DomainGrid, u: NodeField) -> EdgeField:
    """Forward difference per edge: (grad u)(x, k) = u(x + e_k) - u(x)."""
    if u.shape != domain.node_shape:
        raise ShapeMismatchError(f"node field shape {u.shape} != {domain.node_shape}")
    if domain.kind == "torus":
        return tuple(np.roll(u, -1, axis=k) - u for k in range(domain.d))
    out = []
    for k in range(domain.d):
        head = u[_axis_slice(domain.d, k, slice(1, None))]
        tail = u[_axis_slice(domain.d, k, slice(None, -1))]
        out.append(head - tail)
    return tuple(out)


def divergence(domain: DomainGrid, F: Sequence[np.ndarray]) -> NodeField:
    """Backward difference per node; exact negative adjoint of `gradient`."""
    if len(F) != domain.d:
        raise ShapeMismatchError(f"expected {domain.d} edge arrays, got {len(F)}")
    for k in range(domain.d):
        if F[k].shape != domain.edge_shape(k):
            raise ShapeMismatchError(
                f"axis {k} edge shape {F[k].shape} != {domain.edge_shape(k)}"
            )
    out = np.zeros(domain.node_shape)
    for k in range(domain.d):
        if domain.kind == "torus":
            out += F[k] - np.roll(F[k], 1, axis=k)
        else:
            out[_axis_slice(domain.d, k, slice(None, -1))] += F[k]
            out[_axis_slice(domain.d, k, slice(1, None))] -= F[k]
    return out


def edge_dot(F: Sequence[np.ndarray], G: Sequence[np.ndarray]) -> float:
    return float(sum(np.vdot(f, g) for f, g in zip(F, G)))


def node_dot(u: NodeField, v: NodeField) -> float:
    return float(np.vdot(u, v))


def _edge_endpoints(domain: DomainGrid, k: int) -> tuple:
    """(tail, head) flat node indices of axis-k edges, lexicographic order."""
    shape = domain.node_shape
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    if domain.kind == "torus":
        tails = idx.ravel()
        heads = np.roll(idx, -1, axis=k).ravel()
    else:
        tails = idx[_axis_slice(domain.d, k, slice(None, -1))].ravel()
        heads = idx[_axis_slice(domain.d, k, slice(1, None))].ravel()
    return tails, heads


@dataclass
class LinearSystem:
    """Sparse operator A = -div(a grad .) with boundary handling.

    For a torus, ``matrix`` acts on all nodes (symmetric PSD, constants in
    the kernel).  For a box, ``matrix`` is the interior block after
    eliminating the Dirichlet layer and ``lift`` maps boundary data into the
    interior right-hand side (rhs_int -= lift @ u_boundary).
    """

    matrix: sp.csr_matrix
    kind: str
    domain: DomainGrid
    interior_idx: np.ndarray | None = None
    boundary_idx: np.ndarray | None = None
    lift: sp.csr_matrix | None = None
    diag: np.ndarray = field(init=False)

    def __post_init__(self):
        self.diag = self.matrix.diagonal()

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def restrict(self, u: NodeField) -> np.ndarray:
        """Closure node field -> unknown vector."""
        flat = np.asarray(u).reshape(-1)
        if self.kind == "torus":
            return flat.copy()
        return flat[self.interior_idx]

    def embed(self, x: np.ndarray, boundary_values: NodeField | None = None) -> NodeField:
        """Unknown vector -> closure node field (boundary filled, default 0)."""
        if self.kind == "torus":
            return x.reshape(self.domain.node_shape).copy()
        out = np.zeros(self.domain.n_nodes)
        out[self.interior_idx] = x
        if boundary_values is not None:
            bv = np.asarray(boundary_values).reshape(-1)
            out[self.boundary_idx] = bv[self.boundary_idx]
        return out.reshape(self.domain.node_shape)

def _operator_coo(domain: DomainGrid, edges: Sequence[np.ndarray]) -> sp.csr_matrix:
    n = domain.n_nodes
    rows, cols, vals = [], [], []
    for k in range(domain.d):
        a = np.asarray(edges[k]).ravel()
        t, h = _edge_endpoints(domain, k)
        rows += [t, h, t, h]
        cols += [t, h, h, t]
        vals += [a, a, -a, -a]
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return A.tocsr()


def assemble(fld, domain: DomainGrid | None = None) -> LinearSystem:
    """Assemble the divergence-form operator A u = -div(a grad u).

    ``fld`` is a CoefficientField (its per-axis conductance arrays are used);
    the quadratic form is <u, A u> = sum_e a(e) |grad u(e)|^2.
    """
    if domain is None:
        domain = fld.domain
    if fld.domain is not domain and fld.domain != domain:
        raise ShapeMismatchError("field and domain disagree")
    for k in range(domain.d):
        if fld.edges[k].shape != domain.edge_shape(k):
            raise ShapeMismatchError("field edge arrays do not match domain")
    A = _operator_coo(domain, fld.edges)
    if domain.kind == "torus":
        return LinearSystem(matrix=A, kind="torus", domain=domain)
    mask = domain.interior_mask().ravel()
    interior = np.flatnonzero(mask)
    boundary = np.flatnonzero(~mask)
    A_int = A[interior][:, interior].tocsr()
    lift = A[interior][:, boundary].tocsr()
    return LinearSystem(
        matrix=A_int,
        kind="box",
        domain=domain,
        interior_idx=interior,
        boundary_idx=boundary,
        lift=lift,
    )


def apply_operator(fld, domain: DomainGrid, u: NodeField) -> NodeField:
    """Matrix-free action -div(a grad u) on a closure/torus node field."""
    g = gradient(domain, u)
    ag = tuple(fld.edges[k] * g[k] for k in range(domain.d))
    return -divergence(domain, ag)


def constant_tensor_system(abar: np.ndarray, domain: DomainGrid) -> LinearSystem:
    """Operator -div(abar grad .) for a constant symmetric tensor on a box.

    Diagonal entries use the standard per-axis two-point stencil; an
    off-diagonal entry abar[k,m] contributes the symmetric centered cross
    stencil -2 abar[k,m] DkDm (9-point in d=2).
    """
    if domain.kind != "box":
        raise ValueError("constant-tensor operator is built on boxes")
    d = domain.d
    abar = np.asarray(abar, dtype=float)
    if abar.shape != (d, d):
        raise ShapeMismatchError(f"tensor shape {abar.shape} != ({d},{d})")
    if not np.allclose(abar, abar.T, atol=1e-12):
        raise ValueError("tensor must be symmetric")
    edges = tuple(np.full(domain.edge_shape(k), abar[k, k]) for k in range(d))
    A = _operator_coo(domain, edges)
    n = domain.n_nodes
    if d > 1:
        shape = domain.node_shape
        idx = np.arange(n).reshape(shape)

        def centered(k):
            # (D_k u)(x) = (u(x+e_k) - u(x-e_k)) / 2 at nodes 1..L-1
            rows_ = idx[_axis_slice(d, k, slice(1, -1))].ravel()
            plus = idx[_axis_slice(d, k, slice(2, None))].ravel()
            minus = idx[_axis_slice(d, k, slice(None, -2))].ravel()
            return sp.coo_matrix(
                (
                    np.concatenate([np.full(rows_.size, 0.5), np.full(rows_.size, -0.5)]),
                    (np.concatenate([rows_, rows_]), np.concatenate([plus, minus])),
                ),
                shape=(n, n),
            ).tocsr()

        D = [centered(k) for k in range(d)]
        for k in range(d):
            for m in range(k + 1, d):
                if abar[k, m] != 0.0:
                    A = A - 2.0 * abar[k, m] * (D[k] @ D[m])
    A = A.tocsr()
    mask = domain.interior_mask().ravel()
    interior = np.flatnonzero(mask)
    boundary = np.flatnonzero(~mask)
    return LinearSystem(
        matrix=A[interior][:, interior].tocsr(),
        kind="box",
        domain=domain,
        interior_idx=interior,
        boundary_idx=boundary,
        lift=A[interior][:, boundary].tocsr(),
    )
