"""Correctors, fluxes, flux correctors, effective tensor, minimal radii.

The cell problems are periodized: the whole-space corrector equations are
solved on a torus of side L, which is the standard representative-volume
approximation; the finite-L bias is precisely what the fluctuation and
minimal-radius experiments quantify.

Per direction i the corrector phi_i solves   div(a (grad phi_i + e_i)) = 0,
mean zero.  The flux is q_i = a (grad phi_i + e_i), the effective tensor
column is abar e_i = <q_i> (per-axis edge average), and the flux corrector
components sigma_ijk solve   -Lap sigma_ijk = d_j qn_ik - d_k qn_ij  with qn
the edge-to-node averaged flux and centered differences; sigma is stored
skew-symmetric in (j, k) by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import CoefficientField, constant_field, save_field, load_field
from .lattice import DomainGrid, EdgeField, NodeField, assemble, divergence, gradient
from .solver import SolveOptions, make_solver

PAIRS = {1: [], 2: [(0, 1)], 3: [(0, 1), (0, 2), (1, 2)]}


def direction_rhs(fld: CoefficientField, i: int) -> NodeField:
    """div(a e_i): the corrector right-hand side, mean zero on a torus."""
    F = list(fld.domain.zeros_edges())
    F[i] = fld.edges[i]
    return divergence(fld.domain, F)


def solve_corrector(
    fld: CoefficientField, i: int, opts: SolveOptions | None = None, solver=None
):
    """Periodized corrector and flux in direction i.

    Returns (phi, q, residual): phi mean-zero on the torus, q_i the flux edge
    field, residual the relative norm of div(q_i) (the corrector equation
    restated on the flux).
    """
    domain = fld.domain
    if domain.kind != "torus":
        raise ValueError("correctors are periodized: torus domain required")
    if solver is None:
        solver = make_solver(assemble(fld), opts)
    b = direction_rhs(fld, i)
    phi = solver.solve(b.ravel()).reshape(domain.node_shape)
    g = gradient(domain, phi)
    q = tuple(
        fld.edges[k] * (g[k] + (1.0 if k == i else 0.0)) for k in range(domain.d)
    )
    nb = np.linalg.norm(b)
    residual = float(np.linalg.norm(divergence(domain, q)) / nb) if nb > 0 else 0.0
    return phi, q, residual


def flux_average(q: EdgeField) -> np.ndarray:
    """Column of the effective tensor: component k is the axis-k edge mean."""
    return np.array([float(np.mean(qk)) for qk in q])


def edge_to_node(domain: DomainGrid, F: EdgeField) -> np.ndarray:
    """Average the two incident same-axis edges onto each node (torus)."""
    return np.stack([0.5 * (F[k] + np.roll(F[k], 1, axis=k)) for k in range(domain.d)])


def _centered(f: np.ndarray, k: int) -> np.ndarray:
    return 0.5 * (np.roll(f, -1, axis=k) - np.roll(f, 1, axis=k))


def solve_sigma(
    q: EdgeField,
    abar_col: np.ndarray,
    domain: DomainGrid,
    opts: SolveOptions | None = None,
    laplace_solver=None,
):
    """Flux-corrector components for one direction.

    Solves -Lap sigma_jk = d_j qn_k - d_k qn_j on the torus for each pair
    j < k (qn = node-averaged flux); the (k, j) component is the exact
    negation.  Returns (sigma dict keyed by (j, k), divergence-identity
    relative residual).  The identity div(sigma)_j ~ q_j - abar_col_j holds
    only up to an O(1) stencil-commutation residual, which is measured and
    returned, not assumed zero.
    """
    if domain.kind != "torus":
        raise ValueError("flux correctors are periodized: torus domain required")
    d = domain.d
    qn = edge_to_node(domain, q)
    sigma = {}
    if laplace_solver is None:
        laplace_solver = make_solver(assemble(constant_field(domain, 1.0)), opts)
    for (j, k) in PAIRS[d]:
        rhs = _centered(qn[k], j) - _centered(qn[j], k)
        s = laplace_solver.solve(rhs.ravel()).reshape(domain.node_shape)
        sigma[(j, k)] = s
    # divergence identity residual, evaluated at nodes with the same stencil
    num = 0.0
    den = 0.0
    for j in range(d):
        target = qn[j] - abar_col[j]
        approx = np.zeros(domain.node_shape)
        for k in range(d):
            if j == k:
                continue
            s_jk = sigma[(j, k)] if j < k else -sigma[(k, j)]
            approx += _centered(s_jk, k)
        num += float(np.sum((approx - target) ** 2))
        den += float(np.sum(target**2))
    residual = math.sqrt(num / den) if den > 0 else 0.0
    return sigma, residual


@dataclass
class CorrectorSet:
    """All correctors of one sample: phi_i, q_i, sigma_ijk, abar."""

    field: CoefficientField
    phi: np.ndarray  # (d, *node_shape)
    q: tuple  # d tuples of edge arrays
    sigma: dict  # (i, j, k) with j < k -> node array
    abar: np.ndarray  # (d, d), column i = <q_i>
    residuals: dict

    @property
    def domain(self) -> DomainGrid:
        return self.field.domain

    def sigma_component(self, i: int, j: int, k: int) -> np.ndarray:
        if j == k:
            return np.zeros(self.domain.node_shape)
        if j < k:
            return self.sigma[(i, j, k)]
        return -self.sigma[(i, k, j)]

    def phi_sigma_stack(self) -> np.ndarray:
        """(phi, sigma) components stacked for oscillation functionals."""
        comps = [self.phi[i] for i in range(self.domain.d)]
        comps += [self.sigma[key] for key in sorted(self.sigma)]
        return np.stack(comps)


def corrector_set(
    fld: CoefficientField, opts: SolveOptions | None = None, with_sigma: bool = True
) -> CorrectorSet:
    domain = fld.domain
    solver = make_solver(assemble(fld), opts)
    laplace_solver = None
    if with_sigma and domain.d > 1:
        laplace_solver = make_solver(assemble(constant_field(domain, 1.0)), opts)
    phis, qs, cols, residuals = [], [], [], {}
    sigma = {}
    for i in range(domain.d):
        phi, q, res = solve_corrector(fld, i, opts, solver=solver)
        phis.append(phi)
        qs.append(q)
        cols.append(flux_average(q))
        residuals[f"flux_div_{i}"] = res
        if with_sigma and domain.d > 1:
            sig_i, sres = solve_sigma(q, cols[-1], domain, opts, laplace_solver)
            for (j, k), s in sig_i.items():
                sigma[(i, j, k)] = s
            residuals[f"sigma_identity_{i}"] = sres
    abar = np.column_stack(cols)
    return CorrectorSet(fld, np.stack(phis), tuple(qs), sigma, abar, residuals)


def homogenized_tensor(abar_samples) -> tuple:
    """Symmetrized Monte Carlo estimate of abar with componentwise standard error."""
    mats = [0.5 * (np.asarray(a) + np.asarray(a).T) for a in abar_samples]
    if not mats:
        raise ValueError("homogenized_tensor needs at least one sample")
    stack = np.stack(mats)
    mean = stack.mean(axis=0)
    if len(mats) > 1:
        se = stack.std(axis=0, ddof=1) / math.sqrt(len(mats))
    else:
        se = np.zeros_like(mean)
    return mean, se


def voigt_reuss_bounds(fld: CoefficientField) -> tuple:
    """Per-sample (harmonic mean, arithmetic mean) of all edge conductances."""
    vals = fld.flat()
    return float(1.0 / np.mean(1.0 / vals)), float(np.mean(vals))


# --- corrector fluctuations -------------------------------------------------


def mu_d(d: int, r) -> np.ndarray:
    """Dimension-dependent log factor: sqrt(log(2+r)) in d=2, constant above."""
    r = np.asarray(r, dtype=float)
    if d == 2:
        return np.sqrt(np.log(2.0 + r))
    return np.ones_like(r)


def fluctuation_profile(
    phi_samples, domain: DomainGrid, p: float, radii, base_stride: int | None = None
) -> dict:
    """Empirical <|phi(x) - phi(0)|^p>^(1/p) per separation radius.

    Averages over samples, axis directions (both signs) and a subgrid of
    base points.  Radii beyond L/4 are rejected (periodization guard).
    """
    L = domain.L
    radii = [int(r) for r in radii]
    if any(r < 1 or r > L // 4 for r in radii):
        raise ValueError(f"radii must lie in [1, L/4] = [1, {L // 4}]")
    stride = base_stride if base_stride is not None else max(L // 8, 1)
    picks = tuple(slice(None, None, stride) for _ in range(domain.d))
    out = {}
    for r in radii:
        acc = []
        for phi in phi_samples:
            for k in range(domain.d):
                for shift in (-r, r):
                    diff = np.roll(phi, shift, axis=k) - phi
                    acc.append(np.abs(diff[picks]).ravel() ** p)
        out[r] = float(np.mean(np.concatenate(acc)) ** (1.0 / p))
    return out


# --- minimal radius fields ----------------------------------------------------


@dataclass(frozen=True)
class MinimalRadiusParams:
    """Calibration knobs for the regularity length scales (not paper claims)."""

    p: float = 2.0
    gamma: float = 2.0
    theta: float = 0.1
    c_theta: float = 1.0

    @property
    def p_prime(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def gamma_prime(self) -> float:
        return self.gamma / (self.gamma - 1.0) if self.gamma > 1.0 else math.inf

    @property
    def sigma0(self) -> float:
        return 1.0 / (4.0 * self.gamma * self.p_prime)

    def validate(self) -> "MinimalRadiusParams":
        if self.p <= 1.0:
            raise ValueError("moment exponent p must exceed 1")
        if self.gamma < 1.0:
            raise ValueError("gamma must be >= 1")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0,1)")
        if self.gamma <= 1.0 / (4.0 * (self.p_prime - 1.0)):
            raise ValueError("need gamma > 1 / (4 (p' - 1)) for the sup field")
        if not 0.0 < self.sigma0 <= 0.25:
            raise ValueError("derived sigma0 outside (0, 1/4]")
        return self


@dataclass
class MinimalRadius:
    chi_star: float
    c_star: float
    chi_star_star: float
    censored: bool
    radii: list = field(default_factory=list)
    oscillation: list = field(default_factory=list)


def oscillation_curve(comps: np.ndarray, domain: DomainGrid, p: float, base, radii) -> list:
    """(mean_{B_2R} |(phi,sigma) - ball mean|^(2p))^(1/p) over l-inf balls at base."""
    L = domain.L
    out = []
    for R in radii:
        ix = np.ix_(*[(base[ax] + np.arange(-2 * R, 2 * R + 1)) % L for ax in range(domain.d)])
        win = comps[(slice(None),) + ix]
        dev = win - win.mean(axis=tuple(range(1, win.ndim)), keepdims=True)
        norm2 = np.sum(dev * dev, axis=0)
        out.append(float(np.mean(norm2**p) ** (1.0 / p)))
    return out


def minimal_radius(
    cset: CorrectorSet, params: MinimalRadiusParams, base=None
) -> MinimalRadius:
    """Regularity length scales of one sample from (phi, sigma) oscillations.

    chi_star  = inf{ l >= 1 : R^(-1/(gamma p')) osc(R) <= theta  for all R >= l } v theta^(-p)
    c_star    = sup_R R^(-2 sigma0) osc(R) v 1
    chi_star_star = (4 C_theta c_star)^(1/sigma0)

    Radii run over dyadic R in [1, L/4]; when the defining inf is not
    attained within the torus the cap L/4 is reported with censored=True.
    """
    params.validate()
    domain = cset.domain
    L = domain.L
    if L < 8:
        raise ValueError("torus too small for minimal-radius statistics")
    base = tuple(base) if base is not None else (0,) * domain.d
    radii = []
    R = 1
    while R <= L // 4:
        radii.append(R)
        R *= 2
    comps = cset.phi_sigma_stack()
    osc = oscillation_curve(comps, domain, params.p, base, radii)
    decayed = [
        o * R ** (-1.0 / (params.gamma * params.p_prime)) for o, R in zip(osc, radii)
    ]
    chi_raw, censored = None, False
    for idx in range(len(radii)):
        if all(g <= params.theta for g in decayed[idx:]):
            chi_raw = float(radii[idx])
            break
    if chi_raw is None:
        chi_raw, censored = float(L // 4), True
    chi_star = max(chi_raw, params.theta ** (-params.p))
    c_star = max(1.0, max(o * R ** (-2.0 * params.sigma0) for o, R in zip(osc, radii)))
    chi_ss = (4.0 * params.c_theta * c_star) ** (1.0 / params.sigma0)
    return MinimalRadius(chi_star, c_star, chi_ss, censored, radii, osc)


# --- persistence -------------------------------------------------------------


def save_corrector_set(cset: CorrectorSet, prefix) -> None:
    """Write field (.hgf), arrays (.npz) and a JSON sidecar of abar/residuals."""
    prefix = str(prefix)
    save_field(cset.field, prefix + ".hgf")
    arrays = {"phi": cset.phi}
    for (i, j, k), s in cset.sigma.items():
        arrays[f"sigma_{i}_{j}_{k}"] = s
    for i, q in enumerate(cset.q):
        for k in range(cset.domain.d):
            arrays[f"q_{i}_{k}"] = q[k]
    np.savez_compressed(prefix + ".npz", **arrays)
    with open(prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump(
            {"abar": cset.abar.tolist(), "residuals": cset.residuals, "L": cset.domain.L,
             "d": cset.domain.d},
            fh,
            indent=1,
        )


def load_corrector_set(prefix, lam: float = 0.25) -> CorrectorSet:
    prefix = str(prefix)
    fld = load_field(prefix + ".hgf", lam=lam)
    data = np.load(prefix + ".npz")
    with open(prefix + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    d = fld.domain.d
    sigma = {}
    for key in data.files:
        if key.startswith("sigma_"):
            i, j, k = (int(t) for t in key.split("_")[1:])
            sigma[(i, j, k)] = data[key]
    q = tuple(
        tuple(data[f"q_{i}_{k}"] for k in range(d)) for i in range(d)
    )
    return CorrectorSet(
        fld, data["phi"], q, sigma, np.asarray(meta["abar"]), meta["residuals"]
    )
