"""Quadrature, mean values, projections, and real harmonic analysis on S^{n-1}.

All integrals over the sphere are *mean values*: rule weights sum to one, so
``sphere_mean`` of the constant 1 is exactly 1.  Dimensions 2 and 3 are
supported.  The circle uses an equispaced (trapezoid) rule; the 2-sphere uses
a Gauss-Legendre x equispaced-azimuth product rule.  Node counts are the
minimum needed for exactness on harmonics up to the requested degree, times
a safety factor of two.

Real orthonormal bases of spherical harmonics are tabulated at the rule
nodes together with their tangential gradients, which is what the radial
mode solvers downstream need for assembling Cartesian gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import assoc_legendre_p_all, roots_legendre

SUPPORTED_DIMENSIONS = (2, 3)


@dataclass(frozen=True)
class SphereRule:
    """Quadrature rule on S^{n-1} normalized to mean value.

    Attributes
    ----------
    dimension : int
        Ambient dimension n (2 or 3); nodes live on S^{n-1}.
    nodes : ndarray, shape (N, n)
        Unit vectors.
    weights : ndarray, shape (N,)
        Positive weights with sum exactly 1 (up to rounding).
    exact_degree : int
        Spherical harmonics up to this degree integrate exactly.
    """

    dimension: int
    nodes: np.ndarray
    weights: np.ndarray
    exact_degree: int

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]


@dataclass(frozen=True)
class SphereSamples:
    """Values of a scalar or vector function at the nodes of a rule."""

    rule: SphereRule
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] != self.rule.node_count:
            raise ValueError(
                f"value count {self.values.shape[0]} does not match "
                f"node count {self.rule.node_count}"
            )


def build_sphere_rule(n: int, K: int = 8) -> SphereRule:
    """Build a mean-value quadrature rule exact on harmonics of degree <= 2K.

    Parameters
    ----------
    n : int
        Dimension, 2 or 3.
    K : int
        Target working degree; products of two degree-K harmonics (degree
        2K) must integrate exactly, which is what discrete orthonormality
        of a degree-K basis requires.

    Returns
    -------
    SphereRule

    Raises
    ------
    ValueError
        If the dimension is not 2 or 3, or K < 1.
    """
    if n not in SUPPORTED_DIMENSIONS:
        raise ValueError(f"unsupported dimension {n}; expected one of {SUPPORTED_DIMENSIONS}")
    if K < 1:
        raise ValueError(f"degree K must be >= 1, got {K}")
    if n == 2:
        # Trapezoid on the circle integrates e^{i m phi} exactly for
        # 0 < m < N; need N > 2K, doubled for safety.
        count = 2 * (2 * K + 1)
        phi = 2.0 * np.pi * np.arange(count) / count
        nodes = np.column_stack([np.cos(phi), np.sin(phi)])
        weights = np.full(count, 1.0 / count)
        return SphereRule(2, nodes, weights, exact_degree=2 * K)
    # n == 3: Gauss-Legendre in cos(polar) x trapezoid in azimuth.
    n_polar = 2 * (K + 1)
    n_az = 2 * (2 * K + 1)
    x, w = roots_legendre(n_polar)
    phi = 2.0 * np.pi * np.arange(n_az) / n_az
    sin_th = np.sqrt(1.0 - x**2)
    nodes = np.empty((n_polar * n_az, 3))
    nodes[:, 0] = np.outer(sin_th, np.cos(phi)).ravel()
    nodes[:, 1] = np.outer(sin_th, np.sin(phi)).ravel()
    nodes[:, 2] = np.outer(x, np.ones(n_az)).ravel()
    weights = np.outer(w / 2.0, np.full(n_az, 1.0 / n_az)).ravel()
    return SphereRule(3, nodes, weights, exact_degree=2 * K)


def sphere_mean(f: SphereSamples) -> float | np.ndarray:
    """Mean value of the sampled function over the sphere.

    Scalar samples give a float; (N, m) samples give the componentwise
    mean, an array of shape (m,).
    """
    w = f.rule.weights
    if f.values.ndim == 1:
        return float(w @ f.values)
    return w @ f.values


def first_moment(f: SphereSamples) -> np.ndarray:
    """Vector of angular first moments: component k is mean of f(theta) theta_k."""
    if f.values.ndim != 1:
        raise ValueError("first_moment expects scalar samples")
    return (f.rule.weights * f.values) @ f.rule.nodes


def project_affine(f: SphereSamples) -> SphereSamples:
    """Project onto the span of {1, theta_1, ..., theta_n} restricted to the sphere.

    Uses mean(theta_k theta_l) = delta_kl / n, so the projection is
    ``mean(f) + n * theta . first_moment(f)`` evaluated at the nodes.
    Idempotent on any samples.
    """
    if f.values.ndim != 1:
        raise ValueError("project_affine expects scalar samples")
    n = f.rule.dimension
    mean = sphere_mean(f)
    moment = first_moment(f)
    proj = mean + n * f.rule.nodes @ moment
    return SphereSamples(f.rule, proj)


def affine_complement(f: SphereSamples) -> SphereSamples:
    """Remainder after removing the affine projection; annihilated by project_affine."""
    return SphereSamples(f.rule, f.values - project_affine(f).values)


def harmonic_space_dimension(n: int, k: int) -> int:
    """Dimension of the space of degree-k spherical harmonics on S^{n-1}."""
    if k == 0:
        return 1
    if n == 2:
        return 2
    if n == 3:
        return 2 * k + 1
    raise ValueError(f"unsupported dimension {n}")


class HarmonicBasis:
    """Real orthonormal spherical harmonics tabulated at rule nodes.

    Orthonormality is with respect to the rule's mean-value inner product
    ``<f, g> = sum_i w_i f_i g_i``.  Tangential gradients and the
    Laplace-Beltrami eigenvalues ``k (k + n - 2)`` are tabulated alongside
    the values so that callers can assemble Cartesian derivatives of modal
    fields without any angular finite differencing.

    Attributes
    ----------
    rule : SphereRule
    max_degree : int
    degrees : ndarray, shape (M,)
        Degree of each basis function.
    table : ndarray, shape (M, N)
        Basis values at the nodes.
    grad_table : ndarray, shape (M, N, n)
        Tangential (surface) gradient of each basis function at each node.
    """

    def __init__(self, rule: SphereRule, max_degree: int):
        if 2 * max_degree > rule.exact_degree:
            raise ValueError(
                f"rule exact to degree {rule.exact_degree} cannot hold an "
                f"orthonormal basis of degree {max_degree}"
            )
        self.rule = rule
        self.max_degree = max_degree
        if rule.dimension == 2:
            degrees, table, grad = _circle_basis(rule, max_degree)
        else:
            degrees, table, grad = _sphere3_basis(rule, max_degree)
        self.degrees = degrees
        self.table = table
        self.grad_table = grad
        self.beltrami = -degrees * (degrees + rule.dimension - 2.0)

    @property
    def size(self) -> int:
        return self.table.shape[0]

    def degree_slice(self, k: int) -> np.ndarray:
        """Indices of the basis functions of degree k."""
        return np.nonzero(self.degrees == k)[0]


def _circle_basis(rule: SphereRule, max_degree: int):
    phi = np.arctan2(rule.nodes[:, 1], rule.nodes[:, 0])
    tangent = np.column_stack([-np.sin(phi), np.cos(phi)])
    rows, grads, degrees = [], [], []
    rows.append(np.ones_like(phi))
    grads.append(np.zeros_like(tangent))
    degrees.append(0)
    root2 = np.sqrt(2.0)
    for k in range(1, max_degree + 1):
        c, s = np.cos(k * phi), np.sin(k * phi)
        rows.append(root2 * c)
        grads.append((-root2 * k * s)[:, None] * tangent)
        degrees.append(k)
        rows.append(root2 * s)
        grads.append((root2 * k * c)[:, None] * tangent)
        degrees.append(k)
    return np.array(degrees), np.array(rows), np.array(grads)


def _sphere3_basis(rule: SphereRule, max_degree: int):
    x, y, z = rule.nodes.T
    ct = np.clip(z, -1.0, 1.0)
    st = np.sqrt(np.maximum(1.0 - ct**2, 0.0))
    phi = np.arctan2(y, x)
    # Unit vectors of the polar / azimuthal directions at each node.
    e_theta = np.column_stack([ct * np.cos(phi), ct * np.sin(phi), -st])
    e_phi = np.column_stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)])

    L = max_degree
    # (2, L+1, 2L+1, N): values and d/dx of Ferrers P_l^m at x = cos(theta).
    p_all = np.asarray(assoc_legendre_p_all(L, L, ct, diff_n=1))
    p_val, p_dx = p_all[0], p_all[1]

    rows, grads, degrees = [], [], []
    for l in range(L + 1):
        for m in range(0, l + 1):
            # Mean-normalized: sqrt(4 pi) times the unit-L2(S^2) harmonic.
            norm = np.sqrt(
                (2 * l + 1.0)
                * np.exp(_log_factorial(l - m) - _log_factorial(l + m))
            )
            if m > 0:
                norm *= np.sqrt(2.0)
            pv = p_val[l, m]
            # d/dtheta P_l^m(cos theta) = -sin(theta) P'_l^m(cos theta)
            pth = -st * p_dx[l, m]
            if m == 0:
                rows.append(norm * pv)
                grads.append((norm * pth)[:, None] * e_theta)
                degrees.append(l)
                continue
            cm, sm = np.cos(m * phi), np.sin(m * phi)
            # azimuthal derivative carries 1/sin(theta); P_l^m ~ sin^m covers it
            pv_over_st = _pm_over_sin(p_val[l, m], st, p_dx[l, m], ct, l, m)
            for trig, dtrig in ((cm, -m * sm), (sm, m * cm)):
                rows.append(norm * pv * trig)
                grads.append(
                    (norm * pth * trig)[:, None] * e_theta
                    + (norm * pv_over_st * dtrig)[:, None] * e_phi
                )
                degrees.append(l)
    return np.array(degrees), np.array(rows), np.array(grads)


def _log_factorial(k: int) -> float:
    return float(np.sum(np.log(np.arange(1, k + 1)))) if k > 1 else 0.0


def _pm_over_sin(pv, st, pdx, ct, l, m):
    # Gauss-Legendre nodes exclude the poles, so plain division is safe;
    # the guard only matters if someone tabulates at a pole by hand.
    safe = st > 1e-12
    out = np.zeros_like(pv)
    out[safe] = pv[safe] / st[safe]
    return out


def build_harmonic_basis(rule: SphereRule, max_degree: int = 8) -> HarmonicBasis:
    """Tabulate the real orthonormal harmonic basis up to ``max_degree``."""
    return HarmonicBasis(rule, max_degree)


def harmonic_analyze(f: SphereSamples, basis: HarmonicBasis) -> np.ndarray:
    """Coefficients <f, phi_j> with respect to the rule inner product.

    Exact (to rounding) whenever f is band-limited within the rule's
    exactness degree.
    """
    if f.rule is not basis.rule:
        raise ValueError("samples and basis must share the same rule")
    return basis.table @ (basis.rule.weights * f.values)


def harmonic_synthesize(coeffs: np.ndarray, basis: HarmonicBasis) -> SphereSamples:
    """Evaluate sum_j c_j phi_j at the rule nodes; inverse of harmonic_analyze."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.size,):
        raise ValueError(f"expected {basis.size} coefficients, got {coeffs.shape}")
    return SphereSamples(basis.rule, coeffs @ basis.table)


def truncation_residual(f: SphereSamples, basis: HarmonicBasis) -> float:
    """Relative L2 mass of f not captured by the basis (aliasing monitor)."""
    c = harmonic_analyze(f, basis)
    recon = harmonic_synthesize(c, basis)
    num = sphere_mean(SphereSamples(f.rule, (f.values - recon.values) ** 2))
    den = sphere_mean(SphereSamples(f.rule, f.values**2))
    return float(np.sqrt(num / den)) if den > 0 else 0.0
