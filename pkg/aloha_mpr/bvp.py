import logging
from dataclasses import dataclass, field

import numpy as np

from aloha_mpr import config
from aloha_mpr.conformal import SchwarzSeries, solve_theodorsen
from aloha_mpr.errors import (
    DegenerateError,
    InconsistentParametersError,
    InstabilityError,
    InvalidParameterError,
    NumericalFailureError,
    RiemannHilbertIndexError,
    StandingAssumptionError,
)
from aloha_mpr.kernel import KernelCoeffs, contour_M, kernel_roots_in_y
from aloha_mpr.report import DelayReport, delay_from_length

logger = logging.getLogger(__name__)

BALANCED = "balanced"
UNBALANCED = "unbalanced"
DEGENERATE = "degenerate"


def _rates(lams):
    lam1, lam2 = (float(v) for v in lams)
    if lam1 < 0 or lam2 < 0:
        raise InvalidParameterError("arrival rates must be >= 0")
    return lam1, lam2


def indicator(k):
    return k.s1 / k.e1 + k.s2 / k.e2


def regime_of(k, tol=config.CONVEXITY_TOL):
    if k.lam1 == 0 or k.lam2 == 0:
        return DEGENERATE
    return BALANCED if abs(indicator(k) - 1.0) <= tol else UNBALANCED


def _check_kernel(k):
    for user, d in ((1, k.d1), (2, k.d2)):
        if d >= 0:
            raise StandingAssumptionError(user, d)


def _kernel_status(k):
    """Stability of a capture pair straight from its kernel coefficients."""
    def below(lam, bound):
        return lam < bound or (lam == 0 and bound >= 0)

    r1 = k.s2 > 0 and below(k.lam2, k.s2) and below(k.lam1, k.e1 + k.d1 * k.lam2 / k.s2)
    r2 = k.s1 > 0 and below(k.lam1, k.s1) and below(k.lam2, k.e2 + k.d2 * k.lam1 / k.s1)
    return r1 or r2


def _require_solvable(k):
    if not _kernel_status(k):
        raise InstabilityError(f"rates ({k.lam1:.6g}, {k.lam2:.6g}) are outside the stability region")


def _anchored(k):
    """Which sides pair 1 with 1 on the kernel: (Y0(1) = 1, X0(1) = 1).

    A stable pair always keeps at least one of them; the other side's slope at 1
    then comes from kernel_slope.
    """
    return k.lam2 < k.s2, k.lam1 < k.s1


def kernel_slope(k, h10, h01, h00, other_slope):
    """dH(x,0)/dx at x = 1 from dH(0,y)/dy at y = 1.

    Along the branch x = X(y) of R = 0 through (1, 1), A H(x,0) + B H(0,y) + C H(0,0)
    vanishes identically; its first order is the flow balance, its second order fixes
    the slope. Returns (slope, first-order gap).
    """
    rx, ry = k.s1 - k.lam1, k.s2 - k.lam2
    if abs(rx) < 1e-12 or abs(ry) < 1e-12:
        raise DegenerateError("kernel branch through (1, 1) is singular at lambda = s")
    x1 = -ry / rx
    x2 = 2 * (k.s1 * x1 * x1 - k.lam1 * k.lam2 * x1 + k.s2) / rx
    curv = x2 - 2 * x1 * x1   # second derivative of 1 - 1/X(y) at y = 1
    a1, a2 = k.s2 + k.d1 * x1, -2 * k.s2 + k.d1 * curv
    b1, b2 = k.s1 * x1 + k.d2, k.s1 * curv - 2 * k.d2
    c1, c2 = -k.d1 * x1 - k.d2, -k.d1 * curv + 2 * k.d2
    if abs(a1 * x1) < 1e-12:
        raise DegenerateError("A(X(y), y) is flat at y = 1; slope of H(x,0) is not fixed")
    gap = abs(a1 * h10 + b1 * h01 + c1 * h00)
    slope = -(a2 * h10 + b2 * h01 + c2 * h00 + 2 * b1 * other_slope) / (2 * a1 * x1)
    return float(slope), float(gap)


def _kernel(ch, pol, lams):
    lam1, lam2 = _rates(lams)
    k = KernelCoeffs.from_params(ch, pol, lam1, lam2)
    _check_kernel(k)
    return k


# --- Conservation of flow ---

@dataclass(frozen=True)
class FlowConstants:
    """H(1,0) = p[0] + q[0] H(0,0) and H(0,1) = p[1] + q[1] H(0,0).

    In the balanced regime the pair is singular and h00 = 1 - rho instead.
    """
    rho: float
    regime: str
    determinant: float
    p: tuple = (np.nan, np.nan)
    q: tuple = (np.nan, np.nan)
    h00: float = None

    @property
    def kappa(self):
        return (-self.q[0], -self.q[1])

    def resolve(self, h00):
        return self.p[0] + self.q[0] * h00, self.p[1] + self.q[1] * h00


def _flow(k):
    rho = k.lam1 / k.e1 + k.lam2 / k.e2
    det = k.d1 * k.d2 - k.s1 * k.s2
    regime = regime_of(k)
    if regime == BALANCED:
        return FlowConstants(rho=rho, regime=regime, determinant=det, h00=1.0 - rho)
    if abs(det) < 1e-15:
        if regime == DEGENERATE:
            return FlowConstants(rho=rho, regime=regime, determinant=det, h00=1.0 - rho)
        raise DegenerateError("flow equations are singular")
    p = ((k.s1 * (k.lam2 - k.e2) - k.lam1 * k.d2) / det,
         (k.s2 * (k.lam1 - k.e1) - k.lam2 * k.d1) / det)
    q = (-k.e1 * k.d2 / det, -k.e2 * k.d1 / det)
    h00 = 1.0 - rho if regime == DEGENERATE else None
    return FlowConstants(rho=rho, regime=regime, determinant=det, p=p, q=q, h00=h00)


def flow_residual(k, h00, h10, h01):
    """Distance of (H(0,0), H(1,0), H(0,1)) from the two conservation-of-flow relations."""
    r1 = k.s1 * (1 - h01) - k.d1 * (h10 - h00) - k.lam1
    r2 = k.s2 * (1 - h10) - k.d2 * (h01 - h00) - k.lam2
    return max(abs(r1), abs(r2))


def flow_constants(ch, pol, lams):
    k = _kernel(ch, pol, lams)
    if not _kernel_status(k):
        raise InstabilityError(f"rates {tuple(lams)} are outside the stability region")
    return _flow(k)


# --- Index ---

@dataclass(frozen=True)
class IndexConditions:
    dA_dx: float   # d A(x, Y0(x)) / dx at x = 1
    dB_dy: float   # d B(X0(y), y) / dy at y = 1
    chi_zero: bool


def _index_conditions(k):
    with np.errstate(divide="ignore", invalid="ignore"):
        da = np.float64(k.s2 * (k.s1 - k.lam1)) / (k.lam2 - k.s2) + k.d1
        db = np.float64(k.s1 * (k.s2 - k.lam2)) / (k.lam1 - k.s1) + k.d2
    if k.lam2 < k.s2:
        ok = bool(da < 0 and db < 0)
    else:
        ok = bool(db < 0)
    return IndexConditions(dA_dx=float(da), dB_dy=float(db), chi_zero=ok)


def index_conditions(ch, pol, lams):
    return _index_conditions(_kernel(ch, pol, lams))


def _winding(values):
    steps = np.angle(np.roll(values, -1) / values)
    return int(round(steps.sum() / (2 * np.pi)))


def _boundary_pairs(contour, x):
    """Exact kernel pairs (x, Y0(x)) on M at the real parts of the given points."""
    beta0, beta1 = contour.extreme
    delta = np.clip(x.real, beta1, beta0)
    y = np.array([contour.preimage(v) for v in delta])
    m = np.array([contour.modulus(v) for v in delta])
    height = np.sqrt(np.maximum(m - delta ** 2, 0.0))
    return delta + 1j * np.where(x.imag < 0, -height, height), y


def _coefficient_U(k, x, y, x_bar, r):
    a = k.A(x, y)
    b = k.B(x, y)
    if np.min(np.abs(b)) < 1e-14:
        raise InconsistentParametersError("B(x, Y0(x)) vanishes on the contour")
    u = a / b
    if r:
        u = u / (x - x_bar)
    return u


def winding_index(ch, pol, lams, n_samples=config.CONTOUR_SAMPLES):
    """Numerical index chi = -2 * winding of U around M; needs no stability."""
    k = _kernel(ch, pol, lams)
    return _kernel_winding(k, n_samples)


def _kernel_winding(k, n_samples=config.CONTOUR_SAMPLES):
    contour = contour_M(k, n_samples)
    x_bar, r, _ = _locate_pole(k, contour)
    x, y = _boundary_pairs(contour, contour.points)
    return -2 * _winding(_coefficient_U(k, x, y, x_bar, r))


# --- Poles ---

@dataclass(frozen=True)
class PoleAnalysis:
    """Resultant quadratics (highest power first) and the pole of H(x,0) (and H(0,y))."""
    Q: np.ndarray
    Z: np.ndarray
    S: np.ndarray
    x_bar: float
    r: int
    branch: str
    y_bar: float
    r_y: int
    signs: dict = field(default_factory=dict)
    w_ok: bool = True
    threshold: float = np.nan  # e1 below this selects the x_star branch
    anchored: tuple = (True, True)

    @property
    def consistent(self):
        required = [key for side, keys in zip(self.anchored, SIDE_CHECKS) if side for key in keys]
        return all(self.signs.get(key, False) for key in required) and self.w_ok


def _resultants(k):
    lam, l1, l2 = k.lam, k.lam1, k.lam2
    s1, s2, e1, d1 = k.s1, k.s2, k.e1, k.d1
    z = np.array([-l1 * (s2 + (1 + l2) * d1), (lam + l1 * l2) * d1 + (s2 + d1) * e1, -e1 * d1])
    q = np.array([-l2 * d1 * (d1 + (1 + l1) * s2), s2 * (d1 * (lam + l1 * l2) - e1 * (d1 + s2)), s2 ** 2 * e1])
    return q, z


def _pole_threshold(k):
    return (k.s2 + (1 + k.lam2) * k.s1) / (1 + k.lam2)


def _locate_pole(k, contour):
    """(x_bar, r, branch) for the zero of A(x, Y0(x)) that can sit inside M beyond |x| = 1."""
    _, z = _resultants(k)
    roots = np.roots(z)
    if len(roots) == 0:
        return np.nan, 0, "none"
    if np.any(np.abs(roots.imag) > 1e-12 * np.maximum(1.0, np.abs(roots))):
        return np.nan, 0, "complex"
    real = np.sort(roots.real)
    if z[0] < 0:
        x_bar, branch = real[-1], "x_star"
    else:
        above = real[real > 1]
        x_bar, branch = (above[0] if len(above) else np.nan), "x_tilde_star"
    if not np.isfinite(x_bar) or x_bar <= 1 or not contour.contains(x_bar):
        return float(x_bar), 0, branch
    y0, _ = kernel_roots_in_y(k, x_bar)
    if abs(y0) > 1:
        return float(x_bar), 0, branch
    scale = (k.s2 + abs(k.d1)) * max(1.0, 1.0 / abs(y0))
    r = int(abs(k.A(x_bar, y0)) <= config.KERNEL_ZERO_TOL * scale)
    return float(x_bar), r, branch


def _w_positive(k, samples=999):
    """B(X0(y), y) != 0 on the cut: W(y) keeps one sign on (0, 1)."""
    ks = k.swapped()
    _, s_poly = _resultants(ks)
    y = np.linspace(0.0, 1.0, samples + 2)[1:-1]
    denom = y * (k.s1 * y + k.d2 * (y - 1))
    keep = np.abs(denom) > 1e-12
    w = (y[keep] - 1) * np.polyval(s_poly, y[keep]) / denom[keep]
    return bool(np.all(w < 0) or np.all(w > 0))


SIDE_CHECKS = (("Q(0)", "Q(1)", "Z(0)", "Z(1)"), ("S(0)", "S(1)"))


def _pole_analysis(k, contour_x=None, contour_y=None, anchored=(True, True)):
    q, z = _resultants(k)
    _, s = _resultants(k.swapped())
    signs = {
        "Q(0)": np.polyval(q, 0.0) > 0, "Q(1)": np.polyval(q, 1.0) > 0,
        "Z(0)": np.polyval(z, 0.0) > 0, "Z(1)": np.polyval(z, 1.0) > 0,
        "S(0)": np.polyval(s, 0.0) > 0, "S(1)": np.polyval(s, 1.0) > 0,
    }
    signs = {key: bool(v) for key, v in signs.items()}
    required = [key for side, keys in zip(anchored, SIDE_CHECKS) if side for key in keys]
    failed = [key for key in required if not signs[key]]
    if failed:
        raise InconsistentParametersError(f"resultant sign checks failed: {', '.join(failed)}")
    skipped = [key for key, ok in signs.items() if not ok and key not in required]
    if skipped:
        logger.debug(f"[BVP] sign checks {', '.join(skipped)} belong to a side that is not solved")
    # W keeping its sign on (0, 1) is sufficient, not necessary; one-sided solutions skip it
    w_ok = _w_positive(k)
    if not w_ok and all(anchored):
        raise InconsistentParametersError("W(y) changes sign on (0, 1); B vanishes on M")
    x_bar, r, branch = np.nan, 0, "skipped"
    y_bar, r_y = np.nan, 0
    if anchored[0]:
        x_bar, r, branch = _locate_pole(k, contour_x or contour_M(k))
    if anchored[1]:
        y_bar, r_y, _ = _locate_pole(k.swapped(), contour_y or contour_M(k.swapped()))
    logger.debug(f"[BVP] poles x_bar={x_bar:.6g} (r={r}, {branch}) y_bar={y_bar:.6g} (r={r_y})")
    return PoleAnalysis(Q=q, Z=z, S=s, x_bar=x_bar, r=r, branch=branch, y_bar=y_bar, r_y=r_y,
                        signs=signs, w_ok=w_ok or not all(anchored), threshold=_pole_threshold(k),
                        anchored=tuple(anchored))


def pole_analysis(ch, pol, lams):
    k = _kernel(ch, pol, lams)
    _require_solvable(k)
    return _pole_analysis(k, anchored=_anchored(k))


# --- Side solutions ---

@dataclass
class SideSolution:
    """H(x,0) on the closure of G_M; the mirrored kernel gives H(0,y) on G_L.

    Unbalanced: H = scale * ((1 - x_bar)/(x - x_bar))^r * exp(series(z) - series(z1)) - kappa * h00.
    Balanced: H = h00 * (1 + i series(z)) + kappa * w(z), w with its pole at gamma(x_bar).
    """
    kernel: KernelCoeffs
    cmap: object
    regime: str
    h00: float
    series: SchwarzSeries
    scale: float
    kappa: float
    r: int
    x_bar: float
    chi: int = 0
    boundary: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.z1 = self.cmap.gamma(1.0)
        self.a = self.cmap.gamma(self.x_bar).real if self.r else np.nan

    def _weight(self, z):
        return z / ((z - self.a) * (1 - self.a * z))

    def _weight_prime(self, z):
        return self.a * (z * z - 1) / ((z - self.a) * (1 - self.a * z)) ** 2

    def _g(self, x, z):
        out = self.scale * np.exp(self.series(z) - self.series(self.z1))
        if self.r:
            out = out * (1 - self.x_bar) / (x - self.x_bar)
        return out

    def on_disk(self, z, x):
        if self.regime == UNBALANCED:
            return self._g(x, z) - self.kappa * self.h00
        out = self.h00 * (1 + 1j * self.series(z))
        if self.r:
            out = out + self.kappa * self._weight(z)
        return out

    def value(self, x):
        return complex(self.on_disk(self.cmap.gamma(x), x))

    def derivative(self, x):
        z = self.cmap.gamma(x)
        gp = self.cmap.gamma_prime(x)
        if self.regime == UNBALANCED:
            slope = self.series.derivative(z) * gp
            if self.r:
                slope = slope - 1.0 / (x - self.x_bar)
            return complex(self._g(x, z) * slope)
        out = 1j * self.h00 * self.series.derivative(z)
        if self.r:
            out = out + self.kappa * self._weight_prime(z)
        return complex(out * gp)


class GeometricSide:
    """Single-queue answer for a pair with one silent user.

    With user 1 active, H(x,0) = (e - lam)/(e - lam x); with user 1 silent, H(x,0) = P(other empty).
    """
    def __init__(self, lam, e, constant=None):
        self.lam, self.e, self.constant = lam, e, constant

    def value(self, x):
        if self.constant is not None:
            return complex(self.constant)
        return complex((self.e - self.lam) / (self.e - self.lam * x))

    def derivative(self, x):
        if self.constant is not None:
            return 0j
        return complex(self.lam * (self.e - self.lam) / (self.e - self.lam * x) ** 2)


def _side_map(k, n_grid, cmap=None):
    if cmap is None:
        return solve_theodorsen(contour_M(k), n_grid=n_grid)
    if cmap.contour.preimage is None:
        raise InvalidParameterError("conformal map was not built on a kernel contour")
    return cmap


def _rh_side(k, cmap, flow):
    x_bar, r, _ = _locate_pole(k, cmap.contour)
    x, y = _boundary_pairs(cmap.contour, cmap.boundary())
    u = _coefficient_U(k, x, y, x_bar, r)
    chi = -2 * _winding(u)
    if chi != 0:
        logger.error(f"[BVP] index chi = {chi} at lambda = ({k.lam1:.6g}, {k.lam2:.6g})")
        raise RiemannHilbertIndexError(chi)
    j = np.conj(u) / u
    j_err = float(np.max(np.abs(np.abs(j) - 1.0)))
    if j_err > config.BVP_INDEX_TOL:
        raise NumericalFailureError("|J(t)| departs from 1", j_error=j_err)

    theta = np.unwrap(np.angle(u))
    theta = theta - theta[0]
    series = SchwarzSeries.from_boundary(theta).scaled(-1j)
    kappa1 = -flow.q[0]
    if abs(1 + kappa1) < 1e-15:
        raise DegenerateError("H(0,0) cannot be fixed: 1 + kappa = 0")
    side = SideSolution(kernel=k, cmap=cmap, regime=UNBALANCED, h00=np.nan, series=series,
                        scale=flow.p[0], kappa=kappa1, r=r, x_bar=x_bar, chi=chi)
    side.h00 = float((side._g(0.0, 0.0) / (1 + kappa1)).real)

    t = np.exp(1j * cmap.phi)
    boundary = side.on_disk(t, x)
    tilde = boundary + kappa1 * side.h00
    if r:
        tilde = tilde * (x - x_bar)
    bc = float(np.max(np.abs((u * tilde).imag)) / max(np.max(np.abs(u * tilde)), 1e-300))
    if bc > 1e-7:
        logger.warning(f"[BVP] boundary condition residual {bc:.2e}")
    side.boundary = boundary
    side.diagnostics = {"j_error": j_err, "bc_residual": bc, "n_grid": cmap.n_grid, "branch_r": r}
    return side


def _dirichlet_side(k, cmap, h00):
    x_bar, r, _ = _locate_pole(k, cmap.contour)
    x, y = _boundary_pairs(cmap.contour, cmap.boundary())
    f = -(k.C(x, y) / k.A(x, y)).imag
    mirror = np.append(f[:1], f[:0:-1])
    odd = float(np.max(np.abs(f + mirror)))
    if odd > 1e-8:
        logger.warning(f"[BVP] Dirichlet data is not odd (max |f(phi) + f(-phi)| = {odd:.2e})")
    series = SchwarzSeries.from_boundary(f)

    kappa = 0.0
    if r:
        y_bar = kernel_roots_in_y(k, x_bar)[0].real
        rx, ry = k.dR(x_bar, y_bar)
        ax, ay = k.dA(x_bar, y_bar)
        slope = ax - ay * rx / ry
        residue = -k.C(x_bar, y_bar) * h00 / slope
        a = cmap.gamma(x_bar).real
        kappa = residue * cmap.gamma_prime(x_bar).real * (1 - a * a) / a
    side = SideSolution(kernel=k, cmap=cmap, regime=BALANCED, h00=h00, series=series,
                        scale=np.nan, kappa=kappa, r=r, x_bar=x_bar)
    side.boundary = side.on_disk(np.exp(1j * cmap.phi), x)
    side.diagnostics = {"odd_residual": odd, "n_grid": cmap.n_grid, "branch_r": r}
    return side


# --- Full solutions ---

@dataclass
class BvpSolution:
    kernel: KernelCoeffs
    regime: str
    flow: FlowConstants
    h00: float
    h10: float
    h01: float
    h1_10: float   # dH(x,0)/dx at x = 1
    h2_01: float   # dH(0,y)/dy at y = 1
    x_side: object
    y_side: object
    chi: int = 0
    r: tuple = (0, 0)
    diagnostics: dict = field(default_factory=dict)

    @property
    def boundary_x(self):
        return getattr(self.x_side, "boundary", None)

    @property
    def boundary_y(self):
        return getattr(self.y_side, "boundary", None)

    @property
    def constants(self):
        if self.regime == BALANCED:
            return {"C": self.h00}
        return {"D": getattr(self.x_side, "scale", np.nan)}


def _check_probabilities(sol):
    tol = 1e-6
    values = {"H(0,0)": sol.h00, "H(1,0)": sol.h10, "H(0,1)": sol.h01}
    bad = [f"{name}={v:.6g}" for name, v in values.items() if not -tol <= v <= 1 + tol]
    if sol.h10 < sol.h00 - tol or sol.h01 < sol.h00 - tol:
        bad.append("H(1,0) or H(0,1) below H(0,0)")
    if bad:
        raise NumericalFailureError("solution violates probability bounds: " + "; ".join(bad))
    for side in (sol.x_side, sol.y_side):
        b = getattr(side, "boundary", None)
        if b is None:
            continue
        inside = np.abs(side.cmap.boundary()) <= 1.0
        if np.any(inside) and np.max(np.abs(b[inside])) > 1 + 1e-6:
            logger.warning("[BVP] |H| exceeds 1 on contour samples inside the unit disk")


def _degenerate_solution(k):
    if k.lam1 == 0 and k.lam2 == 0:
        x_side, y_side = GeometricSide(0.0, 1.0, constant=1.0), GeometricSide(0.0, 1.0, constant=1.0)
        h00 = h10 = h01 = 1.0
    elif k.lam2 == 0:
        if not k.lam1 < k.e1:
            raise InstabilityError(f"lambda1 = {k.lam1:.6g} >= {k.e1:.6g} with user 2 silent")
        h00 = 1 - k.lam1 / k.e1
        x_side, y_side = GeometricSide(k.lam1, k.e1), GeometricSide(0.0, 1.0, constant=h00)
        h10, h01 = 1.0, h00
    else:
        if not k.lam2 < k.e2:
            raise InstabilityError(f"lambda2 = {k.lam2:.6g} >= {k.e2:.6g} with user 1 silent")
        h00 = 1 - k.lam2 / k.e2
        x_side, y_side = GeometricSide(0.0, 1.0, constant=h00), GeometricSide(k.lam2, k.e2)
        h10, h01 = h00, 1.0
    logger.info(f"[BVP] degenerate rates ({k.lam1:.6g}, {k.lam2:.6g}): single-queue solution")
    return BvpSolution(kernel=k, regime=DEGENERATE, flow=_flow(k), h00=h00, h10=h10, h01=h01,
                       h1_10=x_side.derivative(1.0).real, h2_01=y_side.derivative(1.0).real,
                       x_side=x_side, y_side=y_side)


def _side_values(k, regime, flow, side):
    """(H(0,0), H(1,0), H(0,1)) from the side solved on its own contour."""
    if regime == BALANCED:
        h00 = flow.h00
        h10 = side.value(1.0).real
        return h00, h10, (k.s1 - k.lam1 - k.d1 * (h10 - h00)) / k.s1
    return (side.h00, *flow.resolve(side.h00))


def _assemble(k, regime, flow, x_side, y_side):
    if x_side is None:
        ks = k.swapped()
        h00, h01, h10 = _side_values(ks, regime, flow if regime == BALANCED else _flow(ks), y_side)
        h2_01 = y_side.derivative(1.0).real
        h1_10, gap = kernel_slope(k, h10, h01, h00, h2_01)
        zero_gap = abs(y_side.value(0.0).real - h00)
    elif y_side is None:
        h00, h10, h01 = _side_values(k, regime, flow, x_side)
        h1_10 = x_side.derivative(1.0).real
        h2_01, gap = kernel_slope(k.swapped(), h01, h10, h00, h1_10)
        zero_gap = abs(x_side.value(0.0).real - h00)
    else:
        h00, h10, h01 = _side_values(k, regime, flow, x_side)
        if regime == BALANCED:
            gap = abs(y_side.value(1.0).real - h01)
        else:
            gap = abs(y_side.h00 - h00)
        zero_gap = abs(x_side.value(0.0).real - h00)
        h1_10, h2_01 = x_side.derivative(1.0).real, y_side.derivative(1.0).real
    solved = x_side if x_side is not None else y_side
    sol = BvpSolution(
        kernel=k, regime=regime, flow=flow, h00=h00, h10=h10, h01=h01, h1_10=h1_10, h2_01=h2_01,
        x_side=x_side, y_side=y_side, chi=solved.chi, r=(getattr(x_side, "r", 0), getattr(y_side, "r", 0)),
        diagnostics={
            "mirror_gap": gap,
            "zero_gap": zero_gap,
            "flow_residual": flow_residual(k, h00, h10, h01),
            "one_sided": x_side is None or y_side is None,
            "x": getattr(x_side, "diagnostics", {}),
            "y": getattr(y_side, "diagnostics", {}),
        },
    )
    _check_probabilities(sol)
    logger.info(f"[BVP] {regime} solution: H00={h00:.6g} H10={h10:.6g} H01={h01:.6g} "
                f"mirror gap {gap:.2e}")
    return sol


def _solve_kernel(k, regime=None, n_grid=config.THEODORSEN_GRID, maps=(None, None)):
    if k.lam1 == 0 or k.lam2 == 0:
        return _degenerate_solution(k)
    _require_solvable(k)
    anchored = _anchored(k)
    _pole_analysis(k, anchored=anchored)
    if not all(anchored):
        logger.info(f"[BVP] rates ({k.lam1:.6g}, {k.lam2:.6g}) beyond lambda_k < s_k: "
                    f"solving the {'x' if anchored[0] else 'y'} side only")
    regime = regime or regime_of(k)
    flow = _flow(k) if regime == UNBALANCED or regime_of(k) == BALANCED else _forced_balanced_flow(k)
    ks = k.swapped()
    x_side = y_side = None
    if anchored[0]:
        map_x = _side_map(k, n_grid, maps[0])
        x_side = _dirichlet_side(k, map_x, flow.h00) if regime == BALANCED else _rh_side(k, map_x, flow)
    if anchored[1]:
        map_y = _side_map(ks, n_grid, maps[1])
        y_side = _dirichlet_side(ks, map_y, flow.h00) if regime == BALANCED else _rh_side(ks, map_y, _flow(ks))
    return _assemble(k, regime, flow, x_side, y_side)


def _forced_balanced_flow(k):
    rho = k.lam1 / k.e1 + k.lam2 / k.e2
    return FlowConstants(rho=rho, regime=BALANCED, determinant=k.d1 * k.d2 - k.s1 * k.s2, h00=1.0 - rho)


def solve(ch, pol, lams, n_grid=config.THEODORSEN_GRID):
    """Dispatches to the Dirichlet or Riemann-Hilbert formulation by regime."""
    return _solve_kernel(_kernel(ch, pol, lams), n_grid=n_grid)


def solve_dirichlet(ch, pol, lams, cmap=None, n_grid=config.THEODORSEN_GRID, maps=None):
    k = _kernel(ch, pol, lams)
    gap = abs(indicator(k) - 1.0)
    if gap > config.DIRICHLET_TOL:
        raise InvalidParameterError(f"Dirichlet formulation needs a balanced system (indicator off by {gap:.3g})")
    if gap > config.CONVEXITY_TOL:
        logger.warning(f"[BVP] near-balanced system (indicator off by {gap:.2e}); using H(0,0) = 1 - rho")
    return _solve_kernel(k, regime=BALANCED, n_grid=n_grid, maps=maps or (cmap, None))


def solve_riemann_hilbert(ch, pol, lams, cmap=None, poles=None, n_grid=config.THEODORSEN_GRID, maps=None):
    k = _kernel(ch, pol, lams)
    if regime_of(k) == BALANCED:
        raise DegenerateError("balanced system: the Riemann-Hilbert constants are singular")
    if poles is not None and not poles.consistent:
        raise InconsistentParametersError("pole analysis reported failed sign checks")
    return _solve_kernel(k, regime=UNBALANCED, n_grid=n_grid, maps=maps or (cmap, None))


def mean_lengths(sol):
    k = sol.kernel
    if sol.regime == DEGENERATE:
        m1 = k.lam1 / (k.e1 - k.lam1) if k.lam1 > 0 else 0.0
        m2 = k.lam2 / (k.e2 - k.lam2) if k.lam2 > 0 else 0.0
        return m1, m2
    out = []
    for lam, s, d, slope in ((k.lam1, k.s1, k.d1, sol.h1_10), (k.lam2, k.s2, k.d2, sol.h2_01)):
        if abs(s - lam) < 1e-12:
            raise DegenerateError("mean queue length is singular at lambda = s")
        out.append((lam + d * slope) / (s - lam))
    return tuple(out)


def mean_delay(ch, pol, lams, sol=None, n_grid=config.THEODORSEN_GRID):
    if sol is None:
        sol = solve(ch, pol, lams, n_grid=n_grid)
    k = sol.kernel
    M = mean_lengths(sol)
    D = delay_from_length(M, (k.lam1, k.lam2))
    return DelayReport(M=M, D=D, source="bvp",
                       extra={"regime": sol.regime, "chi": sol.chi, "r": list(sol.r),
                              "h00": sol.h00, "h10": sol.h10, "h01": sol.h01})


# --- Reconstruction ---

def _require_both_sides(sol):
    if sol.x_side is None or sol.y_side is None:
        raise InvalidParameterError("one-sided solution: only the slopes at 1 are known for the unsolved side")


def generating_function(sol, x, y):
    """H(x,y) from the functional equation; on the kernel zero set the limit along y is taken."""
    k = sol.kernel
    _require_both_sides(sol)
    hx = sol.x_side.value(x)
    hy = sol.y_side.value(y)
    num = k.A(x, y) * hx + k.B(x, y) * hy + k.C(x, y) * sol.h00
    den = k.R(x, y)
    if abs(den) > config.KERNEL_ZERO_TOL:
        return complex(num / den)
    dnum = (k.s2 * hx + k.d2 * hy - k.d2 * sol.h00) / (y * y) + k.B(x, y) * sol.y_side.derivative(y)
    _, ry = k.dR(x, y)
    return complex(dnum / ry)


def kernel_residual(sol, n_points=50, seed=0):
    """max |A H(x,0) + B H(0,Y0(x)) + C H(0,0)| over random x with both points inside the contours."""
    if sol.regime == DEGENERATE:
        return 0.0
    _require_both_sides(sol)
    k = sol.kernel
    rng = np.random.default_rng(seed)
    worst, used = 0.0, 0
    for _ in range(20 * n_points):
        if used == n_points:
            break
        x = np.sqrt(rng.uniform(0.0, 1.0)) * np.exp(2j * np.pi * rng.uniform())
        y, _ = kernel_roots_in_y(k, x)
        if x == 0 or y == 0 or not sol.x_side.cmap.contour.contains(x, 1e-3) \
                or not sol.y_side.cmap.contour.contains(y, 1e-3):
            continue
        res = k.A(x, y) * sol.x_side.value(x) + k.B(x, y) * sol.y_side.value(y) + k.C(x, y) * sol.h00
        worst = max(worst, abs(res))
        used += 1
    logger.debug(f"[BVP] kernel residual {worst:.2e} over {used} points")
    return worst


# --- Three users ---

def solve_modified_F1(ch3, pol, lam_i, lam_j, dominant=1, n_grid=config.THEODORSEN_GRID):
    """(F(0,0), F(1,0), F(0,1)) of the pair i, j next to an always-busy user k.

    F(1,0) = P(N_j = 0) and F(0,1) = P(N_i = 0).
    """
    from aloha_mpr.stability import dominant_coeffs

    c = dominant_coeffs(ch3, pol, dominant)
    lam_i, lam_j = _rates((lam_i, lam_j))
    k = KernelCoeffs(lam1=lam_i, lam2=lam_j, s1=c.a[0], s2=c.a[1], e1=c.e[0], e2=c.e[1])
    if lam_i == 0 and lam_j == 0:
        return 1.0, 1.0, 1.0
    if lam_j == 0:
        if not lam_i < k.e1:
            raise InstabilityError(f"user {c.i} rate {lam_i:.6g} >= {k.e1:.6g}")
        f = 1 - lam_i / k.e1
        return f, 1.0, f
    if lam_i == 0:
        if not lam_j < k.e2:
            raise InstabilityError(f"user {c.j} rate {lam_j:.6g} >= {k.e2:.6g}")
        f = 1 - lam_j / k.e2
        return f, f, 1.0
    if abs(c.determinant) < 1e-14:
        raise DegenerateError(f"dominant system R{dominant}: occupancy equations are singular")
    _check_kernel(k)
    _require_solvable(k)
    flow = _flow(k)
    if _anchored(k)[0]:
        side = _rh_side(k, _side_map(k, n_grid), flow)
    else:
        ks = k.swapped()
        side = _rh_side(ks, _side_map(ks, n_grid), _flow(ks))
    f00 = side.h00
    f10, f01 = flow.resolve(f00)
    logger.debug(f"[BVP] R{dominant} occupancy at ({lam_i:.6g}, {lam_j:.6g}): {f00:.6g} {f10:.6g} {f01:.6g}")
    return f00, f10, f01
