"""Level-set differential geometry: normals, shape operator, curvatures,
tangential calculus and pointwise residuals of the classical identities.

Sign convention: φ < 0 inside, φ > 0 outside, so the normal points outward and
a sphere of radius R has H = +2/R.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGradient, NotDistanceFunction
from .fields import (
    GridSpec,
    MatrixField3,
    ScalarField3,
    VectorField3,
    divergence_array,
    gradient_array,
    trace_array,
    trace_cofactor_array,
    vector_gradient_array,
)

log = logging.getLogger(__name__)


G_MIN: float = 1e-6
DIST_TOL: float = 0.05
# ε = 3h plus a two-cell stencil halo
DEFAULT_BAND_CELLS: float = 5.0


def _safe_norm(g: np.ndarray) -> np.ndarray:
    return np.maximum(np.linalg.norm(g, axis=-1), G_MIN)


def distance_estimate(phi: np.ndarray, norm_grad: np.ndarray) -> np.ndarray:
    """First-order distance to {φ=0}: |φ|/|∇φ|."""
    return np.abs(phi) / np.maximum(norm_grad, G_MIN)


@dataclass(frozen=True, slots=True, eq=False)
class LevelSet:
    phi: ScalarField3
    is_distance: bool = False
    band_width: float | None = None
    _grad: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        h = self.phi.spec.h
        bw = DEFAULT_BAND_CELLS * h if self.band_width is None else float(self.band_width)
        if bw <= 0:
            raise ValueError("band_width must be > 0")
        object.__setattr__(self, "band_width", bw)
        g = gradient_array(self.phi.data, h)
        g.setflags(write=False)
        object.__setattr__(self, "_grad", g)
        norm = np.linalg.norm(g, axis=-1)
        band = distance_estimate(self.phi.data, norm) <= bw
        if np.any(norm[band] < G_MIN):
            raise DegenerateGradient(f"|grad phi| < {G_MIN:g} inside the band")
        if self.is_distance:
            defect = distance_defect(self)
            if defect > DIST_TOL:
                raise NotDistanceFunction(
                    f"max band ||grad phi| - 1| = {defect:.3g} exceeds {DIST_TOL}"
                )

    @classmethod
    def from_array(cls, spec: GridSpec, data, **kwargs) -> LevelSet:
        return cls(ScalarField3(spec, data), **kwargs)

    @property
    def spec(self) -> GridSpec:
        return self.phi.spec

    @property
    def h(self) -> float:
        return self.phi.spec.h

    @property
    def grad_phi(self) -> np.ndarray:
        return self._grad

    def norm_grad(self) -> np.ndarray:
        return np.linalg.norm(self._grad, axis=-1)

    def band_mask(self) -> np.ndarray:
        return distance_estimate(self.phi.data, self.norm_grad()) <= self.band_width

    def with_phi(self, data, is_distance: bool = False) -> LevelSet:
        return LevelSet(
            ScalarField3(self.spec, data), is_distance=is_distance, band_width=self.band_width
        )


def distance_defect(ls: LevelSet) -> float:
    """max over the band of ||∇φ| − 1|."""
    norm = ls.norm_grad()
    band = distance_estimate(ls.phi.data, norm) <= ls.band_width
    if not band.any():
        return 0.0
    return float(np.max(np.abs(norm[band] - 1.0)))


@dataclass(frozen=True, slots=True, eq=False)
class GeometryBundle:
    n: VectorField3
    grad_n: MatrixField3
    H: ScalarField3
    G: ScalarField3
    norm_grad_phi: ScalarField3
    band: np.ndarray

    @property
    def spec(self) -> GridSpec:
        return self.n.spec

    @property
    def h(self) -> float:
        return self.n.spec.h

    def tangential_shape_operator(self) -> np.ndarray:
        """[∇_∂Ω n] = [∇n](I − n⊗n)."""
        return project_right(self.grad_n.data, self.n.data)


def project_right(m: np.ndarray, n: np.ndarray) -> np.ndarray:
    mn = np.einsum("...ij,...j->...i", m, n)
    return m - mn[..., :, None] * n[..., None, :]


def _check_band(ls: LevelSet) -> None:
    norm = ls.norm_grad()
    band = distance_estimate(ls.phi.data, norm) <= ls.band_width
    if np.any(norm[band] < G_MIN):
        raise DegenerateGradient(f"|grad phi| < {G_MIN:g} inside the band")


def normal(ls: LevelSet) -> VectorField3:
    _check_band(ls)
    g = ls.grad_phi
    return VectorField3(ls.spec, g / _safe_norm(g)[..., None])


def geometry_bundle(ls: LevelSet) -> GeometryBundle:
    n = normal(ls)
    h = ls.h
    grad_n = vector_gradient_array(n.data, h)
    H = trace_array(grad_n)
    G = trace_cofactor_array(grad_n)
    spec = ls.spec
    return GeometryBundle(
        n=n,
        grad_n=MatrixField3(spec, grad_n),
        H=ScalarField3(spec, H),
        G=ScalarField3(spec, G),
        norm_grad_phi=ScalarField3(spec, ls.norm_grad()),
        band=ls.band_mask(),
    )


def _normal_data(n: VectorField3 | GeometryBundle) -> np.ndarray:
    return n.n.data if isinstance(n, GeometryBundle) else n.data


def tangential_gradient_array(f: np.ndarray, n: np.ndarray, h: float) -> np.ndarray:
    g = gradient_array(f, h)
    gn = np.einsum("...i,...i->...", g, n)
    return g - gn[..., None] * n


def tangential_divergence_array(v: np.ndarray, n: np.ndarray, h: float) -> np.ndarray:
    div = divergence_array(v, h)
    gv = vector_gradient_array(v, h)
    gvn = np.einsum("...ij,...j->...i", gv, n)
    return div - np.einsum("...i,...i->...", gvn, n)


def laplace_beltrami_array(f: np.ndarray, n: np.ndarray, h: float) -> np.ndarray:
    return tangential_divergence_array(tangential_gradient_array(f, n, h), n, h)


def tangential_gradient(f: ScalarField3, n: VectorField3 | GeometryBundle) -> VectorField3:
    return VectorField3(f.spec, tangential_gradient_array(f.data, _normal_data(n), f.spec.h))


def tangential_divergence(v: VectorField3, bundle: GeometryBundle) -> ScalarField3:
    return ScalarField3(v.spec, tangential_divergence_array(v.data, bundle.n.data, bundle.h))


def laplace_beltrami(f: ScalarField3, bundle: GeometryBundle) -> ScalarField3:
    return ScalarField3(f.spec, laplace_beltrami_array(f.data, bundle.n.data, bundle.h))


def default_test_scalar(spec: GridSpec) -> ScalarField3:
    return ScalarField3.from_function(spec, lambda x, y, z: np.sin(x) * np.cos(y) + z)


@dataclass(frozen=True, slots=True)
class ResidualStats:
    max: float
    mean: float


def band_stats(values: np.ndarray, band: np.ndarray) -> ResidualStats:
    if not band.any():
        return ResidualStats(0.0, 0.0)
    v = values[band]
    return ResidualStats(float(np.max(v)), float(np.mean(v)))


@dataclass(frozen=True, slots=True, eq=False)
class LemmaResiduals:
    """Pointwise residuals of the three normal-field identities and of [∇n]ᵀn = 0, ([∇n]n)·n = 0."""

    normal_flux: ScalarField3
    tangential_hessian: ScalarField3
    normal_drift: ScalarField3
    grad_n_transpose: ScalarField3
    grad_n_normal: ScalarField3
    band: np.ndarray

    def fields(self) -> dict[str, ScalarField3]:
        return {
            "normal_flux": self.normal_flux,
            "tangential_hessian": self.tangential_hessian,
            "normal_drift": self.normal_drift,
            "grad_n_transpose": self.grad_n_transpose,
            "grad_n_normal": self.grad_n_normal,
        }

    def summary(self) -> dict[str, ResidualStats]:
        return {name: band_stats(f.data, self.band) for name, f in self.fields().items()}


def lemma_residuals(ls: LevelSet, test_scalar: ScalarField3 | None = None) -> LemmaResiduals:
    b = geometry_bundle(ls)
    h = ls.h
    n = b.n.data
    gn = b.grad_n.data
    H = b.H.data
    G = b.G.data
    gnn = np.einsum("...ij,...j->...i", gn, n)

    # div([∇n]n) = ∇H·n + H² − 2G
    lhs1 = divergence_array(gnn, h)
    rhs1 = np.einsum("...i,...i->...", gradient_array(H, h), n) + H * H - 2.0 * G

    # (∇(∇_∂Ω f)n)·n = −∇f·([∇n]n)
    f = default_test_scalar(ls.spec).data if test_scalar is None else test_scalar.data
    tg = tangential_gradient_array(f, n, h)
    m2 = vector_gradient_array(tg, h)
    lhs2 = np.einsum("...i,...ij,...j->...", n, m2, n)
    rhs2 = -np.einsum("...i,...i->...", gradient_array(f, h), gnn)

    # (∇([∇n]n)n)·n = −|[∇n]n|²
    m3 = vector_gradient_array(gnn, h)
    lhs3 = np.einsum("...i,...ij,...j->...", n, m3, n)
    rhs3 = -np.einsum("...i,...i->...", gnn, gnn)

    gnt = np.linalg.norm(np.einsum("...ji,...j->...i", gn, n), axis=-1)
    gnn_n = np.abs(np.einsum("...i,...i->...", gnn, n))

    spec = ls.spec
    return LemmaResiduals(
        normal_flux=ScalarField3(spec, np.abs(lhs1 - rhs1)),
        tangential_hessian=ScalarField3(spec, np.abs(lhs2 - rhs2)),
        normal_drift=ScalarField3(spec, np.abs(lhs3 - rhs3)),
        grad_n_transpose=ScalarField3(spec, gnt),
        grad_n_normal=ScalarField3(spec, gnn_n),
        band=b.band,
    )


@dataclass(frozen=True, slots=True, eq=False)
class NsnuCheck:
    residual: ScalarField3
    normal_variation: ScalarField3
    band: np.ndarray
    is_distance: bool

    def residual_stats(self) -> ResidualStats:
        return band_stats(self.residual.data, self.band)

    def variation_stats(self) -> ResidualStats:
        """Statistics of |[∇n]n|, which vanishes for distance functions."""
        return band_stats(self.normal_variation.data, self.band)


def nsnu_check(ls: LevelSet) -> NsnuCheck:
    """Residual of [∇n]n = ∇_∂Ω|∇φ| / |∇φ|."""
    b = geometry_bundle(ls)
    h = ls.h
    n = b.n.data
    gnn = np.einsum("...ij,...j->...i", b.grad_n.data, n)
    norm = b.norm_grad_phi.data
    rhs = tangential_gradient_array(norm, n, h) / np.maximum(norm, G_MIN)[..., None]
    spec = ls.spec
    check = NsnuCheck(
        residual=ScalarField3(spec, np.linalg.norm(gnn - rhs, axis=-1)),
        normal_variation=ScalarField3(spec, np.linalg.norm(gnn, axis=-1)),
        band=b.band,
        is_distance=ls.is_distance,
    )
    log.debug(
        "法向变化: 残差最大值=%.3g, |[grad n]n| 最大值=%.3g",
        check.residual_stats().max,
        check.variation_stats().max,
    )
    return check


def shape_operator_asymmetry(ls: LevelSet) -> ResidualStats:
    """max/mean over the band of |[∇n] − [∇n]ᵀ| (Frobenius)."""
    b = geometry_bundle(ls)
    gn = b.grad_n.data
    asym = np.linalg.norm(gn - np.swapaxes(gn, -1, -2), axis=(-2, -1))
    return band_stats(asym, b.band)
