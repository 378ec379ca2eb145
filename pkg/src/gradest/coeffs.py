"""Coefficient fields A(x), moduli of continuity, and the square-Dini test.

A coefficient field is a symmetric uniformly elliptic matrix field that
deviates from the identity by at most ``omega(|x|)`` on each sphere and is
extended by the identity outside the unit ball.  The square-Dini condition
``int_0^1 omega(r)^2 / r dr < infinity`` is what the whole toolkit assumes;
the classifier here decides it numerically from dyadic partial sums.

The Gilbarg-Serrin family ``A = I + g(|x|) theta theta^T`` is built in: it
is the family on which the sphere-reduced dynamics is exactly scalar and
the gradient-growth envelope is attained.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.integrate import quad

# Budget used across the toolkit for "omega is small" assumptions; fixed
# point solvers report the measured contraction instead of trusting it.
DEFAULT_SMALLNESS = 0.1


class Modulus:
    """Modulus of continuity r -> omega(r), flat beyond r = 1.

    Parameters
    ----------
    fn : callable
        Vectorized evaluation on radii in (0, 1]; values for r > 1 are
        clamped to fn(1.0) automatically.
    kappa : float
        Exponent in (0, 1] for which omega(r) r^(kappa-1) is expected to be
        nonincreasing; validated by ``check_modulus`` rather than trusted.
    delta : float
        Smallness budget for downstream contraction arguments.
    """

    def __init__(self, fn, kappa: float = 0.5, delta: float = DEFAULT_SMALLNESS):
        if not 0.0 < kappa <= 1.0:
            raise ValueError(f"kappa must lie in (0, 1], got {kappa}")
        self._fn = fn
        self.kappa = float(kappa)
        self.delta = float(delta)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        clipped = np.minimum(r, 1.0)
        out = np.asarray(self._fn(clipped), dtype=float)
        return out if out.shape else float(out)


def constant_modulus(value: float = 1e-15, delta: float = DEFAULT_SMALLNESS) -> Modulus:
    """Tiny constant modulus, the stand-in for exactly constant coefficients."""
    return Modulus(lambda r: np.full_like(np.asarray(r, dtype=float), value), kappa=1.0, delta=delta)


def log_power_modulus(amplitude: float, s: float, kappa: float | None = None,
                      delta: float = DEFAULT_SMALLNESS) -> Modulus:
    """omega(r) = |amplitude| (log(e/r))^(-s), the canonical square-Dini family.

    Square-Dini holds iff s > 1/2.  The monotonicity exponent kappa is
    chosen so that omega(r) r^(kappa-1) is nonincreasing on all of (0, 1):
    that requires kappa <= 1 - s / log(e/r), whose infimum over r < 1 is
    1 - s.  For s >= 1 no global kappa exists and a small default is used;
    ``check_modulus`` then reports the radius below which it holds.
    """
    amp = abs(float(amplitude))
    if kappa is None:
        kappa = min(0.5, 0.5 * (1.0 - s)) if s < 1.0 else 0.05
        kappa = max(kappa, 0.01)

    def fn(r):
        t = 1.0 - np.log(r)  # log(e/r)
        return amp * t ** (-s)

    return Modulus(fn, kappa=kappa, delta=delta)


@dataclass
class ModulusReport:
    monotone: bool
    positive: bool
    kappa_radius: float      # largest radius below which omega r^(kappa-1) is nonincreasing
    flat_beyond_one: bool

    @property
    def ok(self) -> bool:
        return self.monotone and self.positive and self.flat_beyond_one


def check_modulus(m: Modulus, radii: np.ndarray | None = None) -> ModulusReport:
    """Sample the modulus invariants on a log grid and report them."""
    if radii is None:
        radii = np.exp(np.linspace(np.log(1e-8), 0.0, 400))
    radii = np.sort(np.asarray(radii, dtype=float))
    w = np.asarray(m(radii))
    monotone = bool(np.all(np.diff(w) >= -1e-13 * np.maximum(w[1:], 1e-300)))
    positive = bool(np.all(w > 0))
    scaled = w * radii ** (m.kappa - 1.0)
    ok = np.diff(scaled) <= 1e-12 * np.abs(scaled[1:])  # nonincreasing step by step
    kappa_radius = radii[-1]
    bad = np.nonzero(~ok)[0]
    if bad.size:
        kappa_radius = radii[bad[0]]
    flat = bool(abs(float(m(2.0)) - float(m(1.0))) <= 1e-14 * max(1.0, float(m(1.0))))
    return ModulusReport(monotone, positive, float(kappa_radius), flat)


@dataclass
class SquareDiniResult:
    integral_above: float    # quadrature of omega^2/r over [r0, 1]
    tail_estimate: float     # extrapolated contribution below r0 (inf if divergent)
    convergent: bool
    fitted_exponent: float   # decay exponent of dyadic octave sums

    @property
    def total(self) -> float:
        return self.integral_above + self.tail_estimate


def square_dini_integral(m: Modulus, r0: float, octaves: int = 800) -> SquareDiniResult:
    """Evaluate int_{r0}^1 omega^2(r)/r dr and classify the full integral.

    The integral over [r0, 1] uses adaptive quadrature in t = log(1/r).
    The tail below r0 is summed octave by octave; convergence is decided
    by a Cauchy-type test on the dyadic partial sums: the octave sums
    a_j must decay like j^(-p) with p > 1, where p is fitted on the deep
    octaves.  Divergent inputs get an infinite tail estimate.

    Raises
    ------
    ValueError
        If r0 is outside (0, 1) or the modulus is not nondecreasing.
    """
    if not 0.0 < r0 < 1.0:
        raise ValueError(f"r0 must lie in (0, 1), got {r0}")
    probe = np.exp(np.linspace(np.log(r0) - 3, 0.0, 200))
    vals = np.asarray(m(probe))
    if np.any(np.diff(vals) < -1e-12 * np.maximum(vals[1:], 1e-300)):
        raise ValueError("modulus must be nondecreasing in r")

    t0 = math.log(1.0 / r0)
    integral_above, _ = quad(lambda t: float(m(math.exp(-t))) ** 2, 0.0, t0, limit=200)

    # Octave sums a_j over r in [2^-(j+1), 2^-j], evaluated from the first
    # octave fully below r0.  Five-point Gauss per octave in t.
    j_start = max(0, math.ceil(t0 / math.log(2.0)))
    gauss_x, gauss_w = np.polynomial.legendre.leggauss(5)
    js = np.arange(j_start, j_start + octaves)
    t_lo = js * math.log(2.0)
    t_mid = t_lo + 0.5 * math.log(2.0)
    half = 0.5 * math.log(2.0)
    tt = t_mid[:, None] + half * gauss_x[None, :]
    w2 = np.asarray(m(np.exp(-tt))) ** 2
    a = (w2 @ gauss_w) * half

    # Fit the decay exponent on the second half of the octave range.
    sel = js >= max(j_start + 4, js[len(js) // 2])
    a_sel = a[sel]
    j_sel = js[sel].astype(float)
    if np.all(a_sel <= 0):
        return SquareDiniResult(integral_above, 0.0, True, math.inf)
    good = a_sel > 0
    slope, _ = np.polyfit(np.log(j_sel[good] + 1.0), np.log(a_sel[good]), 1)
    p = -float(slope)
    convergent = p > 1.02

    partial = float(np.sum(a))
    if not convergent:
        return SquareDiniResult(integral_above, math.inf, False, p)
    # power-law remainder beyond the deepest octave
    j_end = float(js[-1] + 1)
    remainder = float(a[-1]) * j_end / (p - 1.0) if a[-1] > 0 else 0.0
    # sliver between r0 and the first full octave below it
    gap = 0.0
    if j_start * math.log(2.0) - t0 > 1e-15:
        gap, _ = quad(lambda t: float(m(math.exp(-t))) ** 2, t0, j_start * math.log(2.0), limit=100)
    tail = gap + partial + remainder
    return SquareDiniResult(integral_above, max(tail, 0.0), True, p)


class CoefficientField:
    """Symmetric elliptic matrix field with identity extension beyond r = 1.

    Built-in families supply a vectorized ``at_radius``; arbitrary fields
    can wrap a pointwise callable.
    """

    def __init__(self, dimension: int, entry_fn, modulus: Modulus,
                 lam_min: float, lam_max: float, label: str = "custom"):
        if dimension not in (2, 3):
            raise ValueError(f"unsupported dimension {dimension}")
        self.dimension = dimension
        self._entry_fn = entry_fn   # (r: float, nodes: (N,n)) -> (N,n,n), r <= 1
        self.modulus = modulus
        self.lam_min = float(lam_min)
        self.lam_max = float(lam_max)
        self.label = label

    def at_radius(self, r: float, nodes: np.ndarray) -> np.ndarray:
        """Matrices A(r * theta) for each row theta of ``nodes``; shape (N, n, n)."""
        nodes = np.atleast_2d(nodes)
        if r > 1.0:
            eye = np.eye(self.dimension)
            return np.broadcast_to(eye, (nodes.shape[0],) + eye.shape).copy()
        return self._entry_fn(float(r), nodes)

    def matrix(self, x: np.ndarray) -> np.ndarray:
        """Matrix A(x) at a single point."""
        x = np.asarray(x, dtype=float)
        r = float(np.linalg.norm(x))
        if r == 0.0:
            return np.eye(self.dimension)
        return self.at_radius(r, (x / r)[None, :])[0]

    def deviation(self, r: float, nodes: np.ndarray) -> float:
        """sup over nodes of the max-entry deviation |A - I|."""
        a = self.at_radius(r, nodes)
        return float(np.max(np.abs(a - np.eye(self.dimension))))


def make_identity_field(n: int) -> CoefficientField:
    """The Laplacian's field A = I, with a tiny stand-in modulus."""
    eye = np.eye(n)

    def entries(r, nodes):
        return np.broadcast_to(eye, (nodes.shape[0], n, n)).copy()

    return CoefficientField(n, entries, constant_modulus(), 1.0, 1.0, label="identity")


@dataclass(frozen=True)
class GSProfile:
    """Radial profile g(r) = kappa_amp (log(e/r))^(-s) for the GS family.

    ``ellipticity_margin`` is the epsilon in the requirement
    g > -1 + epsilon; construction fails when the profile violates it.
    """

    kappa_amp: float
    s: float = 0.75
    ellipticity_margin: float = 0.05

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        t = 1.0 - np.log(np.minimum(r, 1.0))
        out = np.where(r <= 1.0, self.kappa_amp * t ** (-self.s), 0.0)
        return out if out.shape else float(out)

    def bound(self) -> float:
        """sup over (0, 1] of |g|; attained at r = 1."""
        return abs(self.kappa_amp)


def make_gs_field(n: int, profile: GSProfile) -> CoefficientField:
    """Gilbarg-Serrin field A(x) = I + g(|x|) theta theta^T.

    Eigenvalues at radius r are 1 (multiplicity n - 1) and 1 + g(r), so
    ellipticity requires g > -1 + margin everywhere.
    """
    g_min = min(0.0, profile.kappa_amp)  # |g| decreases toward the origin
    if 1.0 + g_min <= profile.ellipticity_margin:
        raise ValueError(
            f"profile violates uniform ellipticity: 1 + g reaches {1.0 + g_min:.3g}, "
            f"margin {profile.ellipticity_margin}"
        )
    eye = np.eye(n)

    def entries(r, nodes):
        g = float(profile(r))
        return eye[None, :, :] + g * np.einsum("ik,il->ikl", nodes, nodes)

    modulus = log_power_modulus(abs(profile.kappa_amp), profile.s)
    if profile.kappa_amp == 0.0:
        modulus = constant_modulus()
    lam_min = min(1.0, 1.0 + g_min)
    lam_max = max(1.0, 1.0 + max(0.0, profile.kappa_amp))
    return CoefficientField(n, entries, modulus, lam_min, lam_max, label="gilbarg-serrin")


@dataclass
class FieldReport:
    symmetry_defect: float
    ellipticity_min: float
    ellipticity_max: float
    deviation_margin: float      # min over r of omega(r) - sup|A - I|; >= 0 passes
    identity_beyond_one: bool
    modulus: ModulusReport
    failures: list = dataclass_field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def check_field(field: CoefficientField, radii: np.ndarray, rule) -> FieldReport:
    """Verify the field invariants by sampling on radii x rule nodes.

    Failures are collected in the report rather than raised, so a single
    run surfaces every violated property.
    """
    failures = []
    sym_defect = 0.0
    lam_lo, lam_hi = math.inf, -math.inf
    margin = math.inf
    eye = np.eye(field.dimension)
    for r in np.asarray(radii, dtype=float):
        a = field.at_radius(r, rule.nodes)
        sym_defect = max(sym_defect, float(np.max(np.abs(a - np.transpose(a, (0, 2, 1))))))
        eigs = np.linalg.eigvalsh(0.5 * (a + np.transpose(a, (0, 2, 1))))
        lam_lo = min(lam_lo, float(eigs.min()))
        lam_hi = max(lam_hi, float(eigs.max()))
        if r < 1.0:
            dev = float(np.max(np.abs(a - eye)))
            margin = min(margin, float(field.modulus(r)) - dev)
    if sym_defect > 1e-12:
        failures.append(f"asymmetry {sym_defect:.3g}")
    if lam_lo < field.lam_min - 1e-10 or lam_hi > field.lam_max + 1e-10:
        failures.append(f"ellipticity outside [{field.lam_min}, {field.lam_max}]: "
                        f"observed [{lam_lo:.6g}, {lam_hi:.6g}]")
    if lam_lo <= 0.0:
        failures.append(f"ellipticity lost: min eigenvalue {lam_lo:.3g}")
    if margin < -1e-12:
        failures.append(f"deviation exceeds modulus by {-margin:.3g}")
    outside = field.at_radius(1.5, rule.nodes)
    identity_out = bool(np.max(np.abs(outside - eye)) == 0.0)
    if not identity_out:
        failures.append("field is not the identity beyond r = 1")
    mod_report = check_modulus(field.modulus)
    return FieldReport(sym_defect, lam_lo, lam_hi, margin, identity_out, mod_report, failures)


# ---------------------------------------------------------------------------
# Scenario configuration (structured text consumed by the pipeline and CLI)

_SCENARIO_KEYS = {
    "dimension", "field", "grid", "degree", "delta", "lambda_reg",
    "boundary_modes", "ratio_levels", "seed",
}
_FIELD_KEYS = {"family", "kappa_amp", "s", "ellipticity_margin"}
_GRID_KEYS = {"min_octave", "max_octave", "points_per_octave"}


@dataclass
class ScenarioConfig:
    dimension: int = 2
    family: str = "identity"
    kappa_amp: float = 0.0
    s: float = 0.75
    ellipticity_margin: float = 0.05
    min_octave: int = -20
    max_octave: int = 4
    points_per_octave: int = 16
    degree: int = 8
    delta: float = DEFAULT_SMALLNESS
    lambda_reg: float = 0.5
    boundary_modes: dict | None = None   # {"1": amp, ...} degree -> amplitude
    ratio_levels: tuple = (6, 14)
    seed: int = 0

    def build_field(self) -> CoefficientField:
        if self.family == "identity":
            return make_identity_field(self.dimension)
        if self.family == "gs":
            profile = GSProfile(self.kappa_amp, self.s, self.ellipticity_margin)
            return make_gs_field(self.dimension, profile)
        raise ValueError(f"unknown field family {self.family!r}")


def scenario_from_dict(raw: dict) -> ScenarioConfig:
    """Validate a parsed scenario dictionary; unknown keys are rejected."""
    unknown = set(raw) - _SCENARIO_KEYS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    cfg = ScenarioConfig()
    if "dimension" in raw:
        cfg.dimension = int(raw["dimension"])
        if cfg.dimension not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {cfg.dimension}")
    if "field" in raw:
        fraw = raw["field"]
        unknown = set(fraw) - _FIELD_KEYS
        if unknown:
            raise ValueError(f"unknown field keys: {sorted(unknown)}")
        cfg.family = fraw.get("family", "identity")
        if cfg.family not in ("identity", "gs"):
            raise ValueError(f"field family must be 'identity' or 'gs', got {cfg.family!r}")
        cfg.kappa_amp = float(fraw.get("kappa_amp", 0.0))
        cfg.s = float(fraw.get("s", 0.75))
        if not 0.0 < cfg.s <= 2.0:
            raise ValueError(f"profile exponent s must lie in (0, 2], got {cfg.s}")
        cfg.ellipticity_margin = float(fraw.get("ellipticity_margin", 0.05))
    if "grid" in raw:
        graw = raw["grid"]
        unknown = set(graw) - _GRID_KEYS
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        cfg.min_octave = int(graw.get("min_octave", cfg.min_octave))
        cfg.max_octave = int(graw.get("max_octave", cfg.max_octave))
        cfg.points_per_octave = int(graw.get("points_per_octave", cfg.points_per_octave))
        if cfg.min_octave >= cfg.max_octave:
            raise ValueError("grid min_octave must be below max_octave")
        if not 4 <= cfg.points_per_octave <= 256:
            raise ValueError("points_per_octave must lie in [4, 256]")
    if "degree" in raw:
        cfg.degree = int(raw["degree"])
        if not 1 <= cfg.degree <= 16:
            raise ValueError("degree must lie in [1, 16]")
    if "delta" in raw:
        cfg.delta = float(raw["delta"])
        if not 0.0 < cfg.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
    if "lambda_reg" in raw:
        cfg.lambda_reg = float(raw["lambda_reg"])
        if not 0.0 < cfg.lambda_reg < 1.0:
            raise ValueError("lambda_reg must lie in (0, 1)")
    if "boundary_modes" in raw:
        cfg.boundary_modes = {str(k): float(v) for k, v in raw["boundary_modes"].items()}
    if "ratio_levels" in raw:
        lo, hi = raw["ratio_levels"]
        cfg.ratio_levels = (int(lo), int(hi))
    if "seed" in raw:
        cfg.seed = int(raw["seed"])
    return cfg


def load_scenario(path) -> ScenarioConfig:
    """Read a JSON scenario file."""
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))
