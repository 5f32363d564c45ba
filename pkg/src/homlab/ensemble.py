"""Random conductance ensembles on lattice edges.

Each edge carries an iid scalar conductance in [lam, 1/lam]; iid edge values
are shift-invariant in law and have range-1 dependence, so correlations are
trivially integrable.  Sampling is pure in (spec, sample_index): each sample
gets its own generator seeded from the pair, so fields are bit-identical
across reruns and worker layouts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .lattice import DomainGrid, ShapeMismatchError, build_box, build_torus

MAGIC = b"HGF1"


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleSpec:
    """Edge-conductance law: 'two-phase' (alpha, beta, p) or 'log-uniform'."""

    d: int = 2
    lam: float = 0.25
    law: str = "two-phase"
    alpha: float = 0.25
    beta: float = 4.0
    p: float = 0.5
    seed: int = 0

    def validate(self) -> "EnsembleSpec":
        if self.d not in (1, 2, 3):
            raise ConfigurationError(f"dimension must be 1, 2 or 3, got {self.d}")
        if not 0.0 < self.lam < 1.0:
            raise ConfigurationError(f"ellipticity lam must lie in (0,1), got {self.lam}")
        if self.law == "two-phase":
            lo, hi = self.lam, 1.0 / self.lam
            for name, v in (("alpha", self.alpha), ("beta", self.beta)):
                if not lo <= v <= hi:
                    raise ConfigurationError(
                        f"{name}={v} outside ellipticity range [{lo}, {hi}]"
                    )
            if not 0.0 <= self.p <= 1.0:
                raise ConfigurationError(f"phase probability p must be in [0,1], got {self.p}")
        elif self.law == "log-uniform":
            pass  # supported on [lam, 1/lam] by construction
        else:
            raise ConfigurationError(f"unknown law {self.law!r}")
        if not -(2**63) <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must fit in 64 bits")
        return self

    def is_deterministic(self) -> bool:
        """True when the law has zero variance (two-phase with alpha == beta or p in {0,1})."""
        if self.law == "two-phase":
            return self.alpha == self.beta or self.p in (0.0, 1.0)
        return self.lam == 1.0

    def value_range(self) -> tuple:
        if self.law == "two-phase":
            lo, hi = sorted((self.alpha, self.beta))
            return lo, hi
        return self.lam, 1.0 / self.lam


@dataclass
class CoefficientField:
    """One sampled conductance field: a tuple of per-axis edge arrays."""

    domain: DomainGrid
    edges: tuple
    lam: float

    @property
    def n_edges(self) -> int:
        return self.domain.n_edges

    def flat(self) -> np.ndarray:
        """Axis-major, node-lexicographic flattening (file order)."""
        return np.concatenate([e.ravel() for e in self.edges])

    def copy(self) -> "CoefficientField":
        return CoefficientField(self.domain, tuple(e.copy() for e in self.edges), self.lam)


def _rng_for(spec: EnsembleSpec, sample_index: int) -> np.random.Generator:
    # fan-out: independent stream per (base seed, sample index), no shared state
    ss = np.random.SeedSequence([int(spec.seed) & (2**64 - 1), int(sample_index)])
    return np.random.Generator(np.random.PCG64(ss))


def sample_field(spec: EnsembleSpec, domain: DomainGrid, sample_index: int) -> CoefficientField:
    """Draw one iid edge-conductance field, deterministic in (spec, index)."""
    spec.validate()
    if spec.d != domain.d:
        raise ConfigurationError(
            f"spec dimension {spec.d} does not match domain dimension {domain.d}"
        )
    rng = _rng_for(spec, sample_index)
    edges = []
    for k in range(domain.d):
        shape = domain.edge_shape(k)
        if spec.law == "two-phase":
            u = rng.random(shape)
            vals = np.where(u < spec.p, spec.beta, spec.alpha)
        else:
            lo, hi = np.log(spec.lam), np.log(1.0 / spec.lam)
            vals = np.exp(lo + (hi - lo) * rng.random(shape))
        edges.append(vals)
    return CoefficientField(domain, tuple(edges), spec.lam)


def constant_field(domain: DomainGrid, value: float = 1.0, lam: float | None = None) -> CoefficientField:
    lam = lam if lam is not None else min(value, 1.0 / value, 0.999)
    return CoefficientField(
        domain, tuple(np.full(domain.edge_shape(k), float(value)) for k in range(domain.d)), lam
    )


def perturb(field: CoefficientField, delta, clamp: bool = False) -> CoefficientField:
    """Return field + delta per edge, optionally re-projected into [lam, 1/lam]."""
    if len(delta) != field.domain.d:
        raise ShapeMismatchError("delta has wrong number of axis arrays")
    out = []
    for k in range(field.domain.d):
        dk = np.asarray(delta[k])
        if dk.shape != field.edges[k].shape:
            raise ShapeMismatchError(
                f"axis {k} delta shape {dk.shape} != {field.edges[k].shape}"
            )
        v = field.edges[k] + dk
        if clamp:
            v = np.clip(v, field.lam, 1.0 / field.lam)
        out.append(v)
    return CoefficientField(field.domain, tuple(out), field.lam)


def single_edge_delta(domain: DomainGrid, axis: int, node_index: tuple, h: float):
    delta = domain.zeros_edges()
    delta[axis][node_index] = h
    return delta


def restrict_to_box(field: CoefficientField, box: DomainGrid) -> CoefficientField:
    """Restrict a torus field to the box [0, L]^d (torus side must exceed L).

    Used by the boundary experiments: the box sees exactly the coefficients of
    the enclosing torus, so whole-space correctors and boundary correctors
    refer to the same realization.
    """
    if field.domain.kind != "torus" or box.kind != "box":
        raise ShapeMismatchError("restrict_to_box maps a torus field onto a box")
    if field.domain.d != box.d or field.domain.L <= box.L:
        raise ShapeMismatchError("torus side must exceed box side")
    edges = []
    for k in range(box.d):
        sl = tuple(
            slice(0, box.L) if ax == k else slice(0, box.L + 1) for ax in range(box.d)
        )
        edges.append(field.edges[k][sl].copy())
    return CoefficientField(box, tuple(edges), field.lam)


def correlation_probe(
    spec: EnsembleSpec, n_samples: int, lag: int, L: int = 32
) -> float:
    """Mean Pearson correlation between edge values at lattice distance lag.

    Pairs every edge with the same-axis edge shifted by ``lag`` along axis 0
    on an L-torus.  Zero-variance laws return 0 by convention.
    """
    if n_samples < 2:
        raise ConfigurationError("correlation probe needs n_samples >= 2")
    if lag < 0:
        raise ConfigurationError("lag must be >= 0")
    spec.validate()
    domain = build_torus(L, spec.d)
    corrs = []
    for i in range(n_samples):
        f = sample_field(spec, domain, i)
        a = np.concatenate([e.ravel() for e in f.edges])
        b = np.concatenate([np.roll(e, -lag, axis=0).ravel() for e in f.edges])
        va, vb = a.var(), b.var()
        if va == 0.0 or vb == 0.0:
            corrs.append(0.0)
            continue
        corrs.append(float(np.mean((a - a.mean()) * (b - b.mean())) / np.sqrt(va * vb)))
    return float(np.mean(corrs))


# --- field file format ------------------------------------------------------
#
# magic "HGF1" | u32 d | u32 dims[d] (node counts per axis) | u8 kind
# (0 = torus, 1 = box) | f64 little-endian edge values, axis-major,
# node-lexicographic.


def save_field(field: CoefficientField, path) -> None:
    domain = field.domain
    kind = 0 if domain.kind == "torus" else 1
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", domain.d))
        for n in domain.node_shape:
            fh.write(struct.pack("<I", n))
        fh.write(struct.pack("<B", kind))
        fh.write(field.flat().astype("<f8").tobytes())


def load_field(path, lam: float = 0.25) -> CoefficientField:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ConfigurationError(f"{path}: not a field file (bad magic)")
        (d,) = struct.unpack("<I", fh.read(4))
        dims = [struct.unpack("<I", fh.read(4))[0] for _ in range(d)]
        (kind,) = struct.unpack("<B", fh.read(1))
        if len(set(dims)) != 1:
            raise ConfigurationError(f"{path}: anisotropic grids unsupported, dims={dims}")
        if kind == 0:
            domain = build_torus(dims[0], d)
        elif kind == 1:
            domain = build_box(dims[0] - 1, d)
        else:
            raise ConfigurationError(f"{path}: unknown domain kind {kind}")
        raw = np.frombuffer(fh.read(), dtype="<f8")
    if raw.size != domain.n_edges:
        raise ConfigurationError(
            f"{path}: expected {domain.n_edges} edge values, found {raw.size}"
        )
    edges, off = [], 0
    for k in range(d):
        n = int(np.prod(domain.edge_shape(k)))
        edges.append(raw[off : off + n].reshape(domain.edge_shape(k)).copy())
        off += n
    return CoefficientField(domain, tuple(edges), lam)


def with_seed(spec: EnsembleSpec, seed: int) -> EnsembleSpec:
    return replace(spec, seed=seed)
