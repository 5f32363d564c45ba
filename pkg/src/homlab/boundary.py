"""Dirichlet boundary correctors and boundary-estimate experiments.

Scaling convention: the continuum results live on a fixed domain with
coefficients a(./eps); we work in blown-up lattice coordinates on a box of
side L = R0/eps, so eps = 1/L.  Under Psi(y) := corrector(eps y)/eps the
gradients coincide, and the sup / layer / CLT statements tested here read

    sup_x <|Psi(x)|^p>^(1/p)        <~  mu_d(L)
    <|grad Q(z)|^p>^(1/p)           <~  mu_d(L) min{1, 1/delta(z)}
    <|avg_interior grad Psi|^p>^(1/p) <~ L^(-d/2)

with Q = Psi - phi (phi computed on an enclosing torus of side 2L and
restricted, which reduces periodization bias near the box).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import CoefficientField
from .lattice import (
    DomainGrid,
    NodeField,
    ShapeMismatchError,
    assemble,
    divergence,
    gradient,
)
from .solver import SolveOptions, make_solver


@dataclass
class BoundaryCorrector:
    """One direction's boundary corrector on a box (zero trace)."""

    psi: NodeField  # closure field, 0 on the Dirichlet layer
    direction: int
    residual: float
    formulation_gap: float  # max-norm difference of the two solve paths

    def grad(self, domain: DomainGrid):
        return gradient(domain, self.psi)


def direction_rhs_box(fld: CoefficientField, i: int) -> NodeField:
    F = list(fld.domain.zeros_edges())
    F[i] = fld.edges[i]
    return divergence(fld.domain, F)


def coordinate_field(domain: DomainGrid, i: int) -> NodeField:
    return np.indices(domain.node_shape)[i].astype(float)


def solve_boundary_corrector(
    fld: CoefficientField,
    i: int,
    opts: SolveOptions | None = None,
    solver=None,
    system=None,
    verify: bool = True,
) -> BoundaryCorrector:
    """Solve -div(a grad Psi_i) = div(a e_i), Psi_i = 0 on the layer.

    When ``verify`` is set, the equivalent harmonic-extension formulation
    (solve -div(a grad Phi_i) = 0 with boundary data x_i, then subtract x_i)
    is also solved and the max-norm gap recorded; the two paths assemble
    their right-hand sides independently.
    """
    domain = fld.domain
    if domain.kind != "box":
        raise ValueError("boundary correctors live on a Dirichlet box")
    if system is None:
        system = assemble(fld)
    if solver is None:
        solver = make_solver(system, opts)
    rhs = direction_rhs_box(fld, i).ravel()[system.interior_idx]
    x_int = solver.solve(rhs)
    psi = system.embed(x_int)
    nb = np.linalg.norm(rhs)
    res = float(np.linalg.norm(system.matrix @ x_int - rhs) / nb) if nb > 0 else 0.0
    gap = 0.0
    if verify:
        coord = coordinate_field(domain, i).ravel()
        rhs9 = -system.lift @ coord[system.boundary_idx]
        phi_int = solver.solve(rhs9)
        psi9 = phi_int - coord[system.interior_idx]
        gap = float(np.max(np.abs(psi9 - x_int)))
    return BoundaryCorrector(psi, i, res, gap)


def error_field(psi: NodeField, phi_box: NodeField, domain: DomainGrid):
    """Q = Psi - phi and its gradient (phi restricted to the box closure)."""
    if psi.shape != phi_box.shape:
        raise ShapeMismatchError(f"psi {psi.shape} vs phi {phi_box.shape}")
    Q = psi - phi_box
    return Q, gradient(domain, Q)


def node_gradient_magnitude(domain: DomainGrid, g) -> NodeField:
    """sqrt(sum_k (forward difference)^2) at nodes owning all forward edges."""
    if domain.kind == "box":
        L = domain.L
        out2 = np.zeros((L,) * domain.d)
        for k in range(domain.d):
            sl = tuple(slice(0, L) for _ in range(domain.d))
            out2 += g[k][sl] ** 2
        return np.sqrt(out2)
    out2 = np.zeros(domain.node_shape)
    for k in range(domain.d):
        out2 += g[k] ** 2
    return np.sqrt(out2)


def layer_values(domain: DomainGrid, grad_mag: NodeField, bins) -> dict:
    """Per-dyadic-delta shells of a node quantity, corner ties excluded."""
    if domain.kind != "box":
        raise ValueError("layer statistics require a box")
    L = domain.L
    delta = domain.boundary_distance()[(slice(0, L),) * domain.d]
    ties = domain.corner_tie_mask()[(slice(0, L),) * domain.d]
    out = {}
    for b in bins:
        mask = (delta == b) & ~ties
        if not mask.any():
            raise ValueError(f"empty delta shell {b} on box L={L}")
        out[b] = grad_mag[mask]
    return out


def dyadic_bins(L: int, top=None) -> list:
    top = top if top is not None else L // 2
    out, b = [], 1
    while b <= top:
        out.append(b)
        b *= 2
    return out


def interior_edge_average(domain: DomainGrid, g) -> np.ndarray:
    """Spatial average of an edge field over interior-to-interior edges.

    The average over all box edges telescopes to zero exactly for zero-trace
    fields, so the lattice realization of the domain average keeps only
    edges with both endpoints interior.
    """
    if domain.kind != "box":
        raise ValueError("interior edge average is a box functional")
    L, d = domain.L, domain.d
    out = np.empty(d)
    for k in range(d):
        sl = tuple(
            slice(1, L - 1) if ax == k else slice(1, L) for ax in range(d)
        )
        out[k] = float(np.mean(g[k][sl]))
    return out


def interior_edge_indicator(domain: DomainGrid, axis: int):
    """Edge field g realizing the interior-average functional F = <grad., g>."""
    g = list(domain.zeros_edges())
    L, d = domain.L, domain.d
    sl = tuple(slice(1, L - 1) if ax == axis else slice(1, L) for ax in range(d))
    g[axis][sl] = 1.0
    g[axis] /= g[axis].sum()
    return tuple(g)


# --- large-scale regularity probe --------------------------------------------


def face_data_field(domain: DomainGrid, rng: np.random.Generator) -> NodeField:
    """Dirichlet data: zero everywhere except iid uniform[-1,1] on the far face."""
    data = np.zeros(domain.node_shape)
    face = tuple([slice(domain.L, domain.L + 1)] + [slice(1, domain.L)] * (domain.d - 1))
    data[face] = rng.uniform(-1.0, 1.0, size=data[face].shape)
    return data


def solve_with_boundary_data(system, data: NodeField, solver=None, opts=None) -> NodeField:
    if solver is None:
        solver = make_solver(system, opts)
    flat = data.ravel()
    rhs = -system.lift @ flat[system.boundary_idx]
    u_int = solver.solve(rhs)
    return system.embed(u_int, boundary_values=data)


def boundary_energy_curve(domain: DomainGrid, u: NodeField, radii, base=None) -> dict:
    """(mean_{D_r} |grad u|^2)^(1/2) over half-balls at a boundary base point.

    D_r is the l-infinity ball of radius r around the base (default: center
    of the zero-data face) intersected with the nodes owning forward edges.
    """
    L, d = domain.L, domain.d
    base = tuple(base) if base is not None else (0,) + (L // 2,) * (d - 1)
    g = gradient(domain, u)
    mag2 = np.zeros((L,) * d)
    for k in range(d):
        mag2 += g[k][(slice(0, L),) * d] ** 2
    coords = np.indices((L,) * d)
    dist = np.maximum.reduce([np.abs(coords[ax] - base[ax]) for ax in range(d)])
    out = {}
    for r in radii:
        mask = dist <= r
        out[r] = float(np.sqrt(mag2[mask].mean()))
    return out
