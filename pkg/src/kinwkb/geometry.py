"""Metrics in a local chart and their derivative jets.

Conventions
-----------
Derivative indices always come last: ``dg[i, j, k] = d g_ij / d x_k`` and
``d2G[i, j, k, l] = d^2 G^ij / d x_k d x_l``.  ``G`` is the inverse metric.

The quadratic normal-coordinate model is

    g_ij(x) = delta_ij + 1/2 T[i, j, k, l] x_k x_l

and it is treated as an exact metric, so every jet below is exact for it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonPositiveDefinite, OutOfChart, UnsupportedVariant

__all__ = [
    "MetricJet",
    "MetricModel",
    "FlatMetric",
    "QuadraticNormalMetric",
    "ExtensionMetric",
    "ValidationReport",
    "kappa_model",
    "metric_jet",
    "validate_normal_coords",
    "scalar_curvature",
    "tensor_from_triplets",
]


@dataclass(frozen=True)
class MetricJet:
    """Metric, inverse metric and their derivatives at one point."""

    g: np.ndarray
    G: np.ndarray
    dg: np.ndarray
    dG: np.ndarray
    d2g: np.ndarray
    d2G: np.ndarray
    d3g: Optional[np.ndarray] = None
    d3G: Optional[np.ndarray] = None


def _inverse_jets(g, dg, d2g, d3g=None):
    """Derivatives of G = g^{-1} from derivatives of g."""
    G = np.linalg.inv(g)
    G = 0.5 * (G + G.T)
    dG = -np.einsum("ai,ijm,jb->abm", G, dg, G)
    # d2G_kl = -(dG_l g_k G + G g_kl G + G g_k dG_l)
    t1 = np.einsum("ail,ijk,jb->abkl", dG, dg, G)
    t2 = np.einsum("ai,ijkl,jb->abkl", G, d2g, G)
    d2G = -(t1 + t2 + np.swapaxes(t1, 0, 1))
    if d3g is None:
        return G, dG, d2G, None
    # differentiate the three terms above once more in x_m
    s = np.einsum("ailm,ijk,jb->abklm", d2G, dg, G)
    s += np.einsum("ail,ijkm,jb->abklm", dG, d2g, G)
    s += np.einsum("ail,ijk,jbm->abklm", dG, dg, dG)
    s += np.einsum("aim,ijkl,jb->abklm", dG, d2g, G)
    s += 0.5 * np.einsum("ai,ijklm,jb->abklm", G, d3g, G)
    d3G = -(s + np.swapaxes(s, 0, 1))
    return G, dG, d2G, d3G


class MetricModel:
    """Base class.  Subclasses supply ``_raw_jet`` returning g, dg, d2g, d3g."""

    kind = "abstract"
    dim: int
    validity_radius: float

    def _raw_jet(self, x: np.ndarray, order: int):
        raise NotImplementedError

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        r = float(np.linalg.norm(x))
        if r > self.validity_radius:
            raise OutOfChart(
                f"|x| = {r:.6g} exceeds validity radius {self.validity_radius:.6g}"
            )
        return x

    def metric_at(self, x) -> np.ndarray:
        x = self._check_point(x)
        g = self._raw_jet(x, 0)[0]
        return g

    def jet(self, x, order: int = 2) -> MetricJet:
        x = self._check_point(x)
        g, dg, d2g, d3g = self._raw_jet(x, order)
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError as exc:
            raise NonPositiveDefinite(f"g(x) not positive definite at x={x}") from exc
        G, dG, d2G, d3G = _inverse_jets(g, dg, d2g, d3g if order >= 3 else None)
        return MetricJet(g, G, dg, dG, d2g, d2G, d3g if order >= 3 else None, d3G)


class QuadraticNormalMetric(MetricModel):
    """Truncated normal-coordinate metric ``g = I + 1/2 T(x, x)``.

    Parameters
    ----------
    tensor : array_like, shape (d, d, d, d)
        ``T[i, j, k, l]``; must be symmetric in (i, j) and in (k, l).
    strict : bool
        Reject tensors that break the pair symmetries.
    """

    kind = "quadratic"

    def __init__(self, tensor, strict: bool = True):
        T = np.array(tensor, dtype=float)
        if T.ndim != 4 or len(set(T.shape)) != 1:
            raise ValueError("tensor must have shape (d, d, d, d)")
        if strict:
            if np.max(np.abs(T - T.transpose(1, 0, 2, 3)), initial=0.0) > 1e-12:
                raise ValueError("tensor not symmetric in (i, j)")
            if np.max(np.abs(T - T.transpose(0, 1, 3, 2)), initial=0.0) > 1e-12:
                raise ValueError("tensor not symmetric in (k, l)")
        T.setflags(write=False)
        self.tensor = T
        self.dim = T.shape[0]
        d = self.dim
        norm = float(np.linalg.norm(T.reshape(d * d, d * d), 2)) if T.size else 0.0
        self.validity_radius = float(np.sqrt(2.0 / norm)) if norm > 0 else float("inf")

    def _raw_jet(self, x, order):
        T = self.tensor
        d = self.dim
        dg = np.einsum("ijkl,l->ijk", T, x)
        g = np.eye(d) + 0.5 * np.einsum("ijk,k->ij", dg, x)
        d2g = np.array(T)
        d3g = np.zeros((d,) * 5) if order >= 3 else None
        return g, dg, d2g, d3g

    def tensor_exact(self) -> np.ndarray:
        """The tensor as an object array of exact Fractions."""
        out = np.empty(self.tensor.shape, dtype=object)
        for idx, v in np.ndenumerate(self.tensor):
            out[idx] = Fraction(float(v))
        return out

    def scaled(self, s: float) -> "QuadraticNormalMetric":
        return QuadraticNormalMetric(s * self.tensor)

    def __repr__(self):
        return f"QuadraticNormalMetric(dim={self.dim}, |T|={np.abs(self.tensor).max():.3g})"


class FlatMetric(QuadraticNormalMetric):
    """Euclidean metric, implemented as the quadratic model with zero tensor."""

    kind = "flat"

    def __init__(self, dim: int):
        super().__init__(np.zeros((dim,) * 4))

    def __repr__(self):
        return f"FlatMetric(dim={self.dim})"


class ExtensionMetric(MetricModel):
    """Metric given by a user jet supplier.

    Parameters
    ----------
    dim : int
    supplier : callable
        ``supplier(x) -> (g, dg, d2g)`` or ``(g, dg, d2g, d3g)`` with the
        index conventions of this module.  Third derivatives are needed only
        for the analytic variational equations.
    validity_radius : float
    """

    kind = "extension"

    def __init__(self, dim: int, supplier: Callable, validity_radius: float = float("inf")):
        self.dim = int(dim)
        self.supplier = supplier
        self.validity_radius = float(validity_radius)

    def _raw_jet(self, x, order):
        out = self.supplier(np.array(x))
        g, dg, d2g = (np.asarray(a, dtype=float) for a in out[:3])
        d3g = None
        if order >= 3:
            if len(out) < 4 or out[3] is None:
                raise UnsupportedVariant("jet supplier does not provide third derivatives")
            d3g = np.asarray(out[3], dtype=float)
        return g, dg, d2g, d3g


def tensor_from_triplets(dim: int, entries: Sequence[Sequence[float]]) -> np.ndarray:
    """Build ``T`` from sparse ``(i, j, k, l, value)`` rows (0-based).

    Symmetric partners under i<->j and k<->l are filled in.
    """
    T = np.zeros((dim,) * 4)
    for row in entries:
        i, j, k, l = (int(v) for v in row[:4])
        v = float(row[4])
        for a, b in ((i, j), (j, i)):
            for c, e in ((k, l), (l, k)):
                T[a, b, c, e] = v
    return T


def kappa_model(kappa: float = 0.25) -> QuadraticNormalMetric:
    """Two-dimensional constant-curvature test model (R = -4 kappa)."""
    T = tensor_from_triplets(
        2,
        [
            (0, 0, 1, 1, 2 * kappa),
            (1, 1, 1, 1, -2 * kappa),
            (0, 0, 0, 0, -2 * kappa),
            (1, 1, 0, 0, 2 * kappa),
        ],
    )
    return QuadraticNormalMetric(T)


def metric_jet(m: MetricModel, x, order: int = 2) -> MetricJet:
    return m.jet(x, order)


@dataclass
class ValidationReport:
    symmetry_ij: float
    symmetry_kl: float
    trace_free: float
    det_radii: np.ndarray = field(repr=False)
    det_deviation: np.ndarray = field(repr=False)
    det_exponent: float = float("inf")

    @property
    def ok(self) -> bool:
        return (
            max(self.symmetry_ij, self.symmetry_kl, self.trace_free) < 1e-12
            and self.det_exponent >= 3.5
        )


def validate_normal_coords(m: QuadraticNormalMetric, n_radii: int = 8) -> ValidationReport:
    """Report gauge residuals of a quadratic normal-coordinate model."""
    if not isinstance(m, QuadraticNormalMetric):
        raise UnsupportedVariant("validation needs a quadratic normal-coordinate model")
    T = m.tensor
    d = m.dim
    sym_ij = float(np.max(np.abs(T - T.transpose(1, 0, 2, 3))))
    sym_kl = float(np.max(np.abs(T - T.transpose(0, 1, 3, 2))))
    trace_free = float(np.max(np.abs(np.einsum("iikl->kl", T))))
    rmax = min(0.5, 0.25 * m.validity_radius)
    radii = rmax * 0.5 ** np.arange(n_radii)
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((16, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dev = np.empty(n_radii)
    for n, r in enumerate(radii):
        dev[n] = max(abs(np.linalg.det(m._raw_jet(r * u, 0)[0]) - 1.0) for u in dirs)
    good = dev > 1e-300
    if good.sum() >= 2:
        slope = float(np.polyfit(np.log(radii[good]), np.log(dev[good]), 1)[0])
    else:
        slope = float("inf")
    return ValidationReport(sym_ij, sym_kl, trace_free, radii, dev, slope)


def scalar_curvature(m: MetricModel) -> float:
    """Double contraction ``sum_{i,k} T[i, k, i, k]``."""
    if isinstance(m, FlatMetric):
        return 0.0
    if isinstance(m, QuadraticNormalMetric):
        return float(np.einsum("ikik->", m.tensor))
    raise UnsupportedVariant(f"scalar curvature not available for {m.kind} metrics")
