"""Sphere-reduced matrix, growth-rate functional, and the envelope E(r).

For a coefficient field A the reduced matrix is the mean over the unit
sphere of ``A(r theta) - n A(r theta) theta (x) theta``.  Its symmetrized
top eigenvalue ``mu[-R(r)]`` is the instantaneous logarithmic growth rate
of the associated radial dynamics, and

    E(r) = exp( int_r^1 mu[-R(rho)] drho / rho )

is the sharp envelope for annulus means of gradients of weak solutions.
Curves are tabulated on dyadic-refined log-radial grids r_j = 2^(-j/m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gradest.coeffs import CoefficientField
from gradest.sphere import SphereRule

LOG2 = math.log(2.0)


def reduced_matrix(field: CoefficientField, r: float, rule: SphereRule) -> np.ndarray:
    """Sphere mean of A(r theta) - n (A theta) (x) theta at radius r.

    Identically zero for r > 1 because of the identity extension.
    """
    n = field.dimension
    if r > 1.0:
        return np.zeros((n, n))
    a = field.at_radius(r, rule.nodes)                     # (N, n, n)
    a_theta = np.einsum("qij,qj->qi", a, rule.nodes)       # (N, n)
    outer = np.einsum("qi,qj->qij", a_theta, rule.nodes)   # (A theta) (x) theta
    w = rule.weights
    return np.einsum("q,qij->ij", w, a) - n * np.einsum("q,qij->ij", w, outer)


def growth_rate(M: np.ndarray) -> float:
    """Largest eigenvalue of the symmetrization (M + M^T) / 2.

    Uses cyclic Jacobi sweeps, which are exact to rounding for the 2x2 and
    3x3 matrices this library produces and keep the functional dependency
    free of LAPACK nondeterminism.
    """
    M = np.asarray(M, dtype=float)
    a = 0.5 * (M + M.T)
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    a = a.copy()
    for _ in range(60):
        off = math.sqrt(sum(a[p, q] ** 2 for p in range(n) for q in range(n) if p != q))
        if off <= 1e-15 * max(1.0, float(np.max(np.abs(a)))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return float(np.max(np.diag(a)))


@dataclass
class ReducedCurve:
    """R(r_j) and mu[-R(r_j)] on a log-radial grid (radii descending from 1)."""

    radii: np.ndarray        # (J,), r_0 = 1
    matrices: np.ndarray     # (J, n, n)
    mu: np.ndarray           # (J,)
    dimension: int

    @property
    def times(self) -> np.ndarray:
        return -np.log(self.radii)

    def envelope_bound_constant(self, modulus) -> float:
        """Fitted c in |R(r)| <= c omega(r) (spectral norm over the grid)."""
        norms = np.linalg.norm(self.matrices, ord=2, axis=(1, 2))
        omega = np.asarray(modulus(self.radii))
        return float(np.max(norms / np.maximum(omega, 1e-300)))


def build_reduced_curve(field: CoefficientField, rule: SphereRule,
                        min_octave: int = -20, points_per_octave: int = 16) -> ReducedCurve:
    """Tabulate the reduced matrix on r_j = 2^(-j/m) down to 2^min_octave."""
    m = points_per_octave
    count = -min_octave * m + 1
    j = np.arange(count)
    radii = np.power(2.0, -j / m)
    mats = np.empty((count, field.dimension, field.dimension))
    mu = np.empty(count)
    for idx, r in enumerate(radii):
        mats[idx] = reduced_matrix(field, float(r), rule)
        mu[idx] = growth_rate(-mats[idx])
    return ReducedCurve(radii, mats, mu, field.dimension)


@dataclass
class EnvelopeCurve:
    """Tabulated E(r) = exp int_r^1 mu[-R] drho/rho with log-linear interpolation.

    Beyond the deepest grid radius the envelope is continued with the last
    mu value; ``extrapolated`` tells whether a query relied on that.
    """

    radii: np.ndarray      # descending, radii[0] = 1
    values: np.ndarray     # E(r_j), values[0] = 1
    mu: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return -np.log(self.radii)

    @property
    def log_values(self) -> np.ndarray:
        return np.log(self.values)

    def at_time(self, t):
        """E(e^-t); vectorized, t <= 0 gives exactly 1."""
        t = np.asarray(t, dtype=float)
        tv = self.times
        lv = self.log_values
        out = np.interp(t, tv, lv)
        deep = t > tv[-1]
        if np.any(deep):
            out = np.where(deep, lv[-1] + self.mu[-1] * (t - tv[-1]), out)
        out = np.where(t <= 0.0, 0.0, out)
        result = np.exp(out)
        return result if result.shape else float(result)

    def at_radius(self, r):
        r = np.asarray(r, dtype=float)
        return self.at_time(-np.log(r))

    def extrapolated(self, r) -> bool:
        return bool(np.any(np.asarray(r) < self.radii[-1]))

    def ratio(self, r_small: float, r_big: float) -> float:
        """E(r_small) / E(r_big), exact on grid points by construction."""
        return float(self.at_radius(r_small) / self.at_radius(r_big))


def build_envelope(rc: ReducedCurve) -> EnvelopeCurve:
    """Integrate mu in log-radius by the trapezoid rule; E(1) = 1 exactly."""
    t = rc.times
    log_e = np.concatenate([[0.0], np.cumsum(0.5 * (rc.mu[1:] + rc.mu[:-1]) * np.diff(t))])
    return EnvelopeCurve(rc.radii.copy(), np.exp(log_e), rc.mu.copy())


@dataclass
class RegularityReport:
    """Outcome of the two-sided monotonicity check on E r^(-lambda), E r^lambda."""

    r0: float              # largest radius below which both conditions hold
    lam: float
    holds_everywhere: bool
    decreasing_ok: bool    # E r^-lambda decreasing on (0, r0)
    increasing_ok: bool    # E r^+lambda increasing on (0, r0)


def check_regularity(ec: EnvelopeCurve, lam: float, rtol: float = 1e-12) -> RegularityReport:
    """Largest r0 such that E r^(-lam) decreases and E r^(+lam) increases below r0.

    Both conditions together say |dlogE/dt| <= lam between consecutive grid
    points; the scan walks from the deep end toward r = 1 and stops at the
    first violated pair.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    t = ec.times
    dlog = np.diff(ec.log_values)    # log E(r_{j+1}) - log E(r_j), t increasing
    dt = np.diff(t)
    ok = np.abs(dlog) <= lam * dt * (1.0 + rtol) + 1e-14
    if np.all(ok):
        return RegularityReport(float(ec.radii[0]), lam, True, True, True)
    last_bad = int(np.nonzero(~ok)[0][-1])
    r0 = float(ec.radii[last_bad + 1])
    below = slice(last_bad + 1, None)
    dec_ok = bool(np.all(dlog[below] >= -lam * dt[below] * (1 + rtol) - 1e-14))
    inc_ok = bool(np.all(dlog[below] <= lam * dt[below] * (1 + rtol) + 1e-14))
    return RegularityReport(r0, lam, False, dec_ok, inc_ok)


def curve_rows(rc: ReducedCurve, ec: EnvelopeCurve):
    """Yield (r, R entries..., mu, E) rows for CSV export."""
    for j in range(len(rc.radii)):
        yield (float(rc.radii[j]), *[float(v) for v in rc.matrices[j].ravel()],
               float(rc.mu[j]), float(ec.values[j]))
