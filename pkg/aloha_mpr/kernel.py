import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from aloha_mpr import config
from aloha_mpr.errors import InvalidParameterError, NumericalFailureError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelCoeffs:
    """Capture-channel kernel data.

    s = (α1α̂2, α2α̂1) are the service rates while both queues are busy and
    e = (α1*P̃1, α2*P̃2) the rates while the other queue is empty. joint is
    α1α2P_{1,2/{1,2}}; only the functional-equation coefficients accept joint != 0.
    """
    lam1: float
    lam2: float
    s1: float
    s2: float
    e1: float = 0.0
    e2: float = 0.0
    joint: float = 0.0

    @classmethod
    def from_params(cls, ch, pol, lam1, lam2, allow_joint=False):
        from aloha_mpr.stability import derived_coeffs

        if ch.c != 0 and not allow_joint:
            raise InvalidParameterError("kernel analysis covers the capture channel only (P_12/12 = 0)")
        coeffs = derived_coeffs(ch, pol)
        return cls(
            lam1=float(lam1), lam2=float(lam2),
            s1=coeffs.s[0], s2=coeffs.s[1],
            e1=coeffs.e[0], e2=coeffs.e[1],
            joint=pol.alpha[0] * pol.alpha[1] * ch.c,
        )

    @property
    def lam(self):
        return self.lam1 + self.lam2

    @property
    def d1(self):
        return self.s1 - self.e1

    @property
    def d2(self):
        return self.s2 - self.e2

    def swapped(self):
        return replace(self, lam1=self.lam2, lam2=self.lam1, s1=self.s2, s2=self.s1, e1=self.e2, e2=self.e1)

    def _require_capture(self):
        if self.joint != 0:
            raise InvalidParameterError("kernel quadratic is defined for the capture channel only")

    # --- x * y * R(x, y) = a(x) y^2 + b(x) y + c(x) ---

    @property
    def poly_a(self):
        self._require_capture()
        return np.array([self.lam1 * self.lam2, -self.lam2 * (1 + self.lam1), 0.0])

    @property
    def poly_b(self):
        self._require_capture()
        big = self.lam + self.lam1 * self.lam2 + self.s1 + self.s2
        return np.array([-self.lam1 * (1 + self.lam2), big, -self.s1])

    @property
    def poly_c(self):
        self._require_capture()
        return np.array([-self.s2, 0.0])

    @property
    def poly_disc(self):
        """D_x(x) = b(x)^2 - 4 a(x) c(x), highest power first."""
        return np.polysub(np.polymul(self.poly_b, self.poly_b), 4 * np.polymul(self.poly_a, self.poly_c))

    def a(self, x):
        return np.polyval(self.poly_a, x)

    def b(self, x):
        return np.polyval(self.poly_b, x)

    def c(self, x):
        return np.polyval(self.poly_c, x)

    def disc(self, x):
        return np.polyval(self.poly_disc, x)

    # --- functional equation coefficients ---

    def R(self, x, y):
        u, v, w = 1 - 1 / x, 1 - 1 / y, 1 - 1 / (x * y)
        arrivals = (1 + self.lam1 * (1 - x)) * (1 + self.lam2 * (1 - y)) - 1
        return arrivals + (self.s1 - self.joint) * u + (self.s2 - self.joint) * v + self.joint * w

    def A(self, x, y):
        return self.s2 * (1 - 1 / y) + self.d1 * (1 - 1 / x) - self.joint * (1 - 1 / y) + self.joint * (1 - 1 / (x * y))

    def B(self, x, y):
        return self.s1 * (1 - 1 / x) + self.d2 * (1 - 1 / y) - self.joint * (1 - 1 / x) + self.joint * (1 - 1 / (x * y))

    def C(self, x, y):
        return -self.d1 * (1 - 1 / x) - self.d2 * (1 - 1 / y) - self.joint * (1 - 1 / (x * y))

    def dR(self, x, y):
        """Partial derivatives (dR/dx, dR/dy) for the capture kernel."""
        rx = -self.lam1 * (1 + self.lam2 * (1 - y)) + self.s1 / x ** 2
        ry = -self.lam2 * (1 + self.lam1 * (1 - x)) + self.s2 / y ** 2
        return rx, ry

    def dA(self, x, y):
        return self.d1 / x ** 2, self.s2 / y ** 2

    def modulus_law(self, y):
        """|X(y)|^2 = c_hat(y)/a_hat(y) for y on the cut [y1, y2]."""
        return self.s1 / (self.lam1 * (1 + self.lam2 - self.lam2 * y))


# --- Roots ---

def kernel_roots_in_y(k, x):
    """(Y_0(x), Y_1(x)); Y_0 is the root of smaller modulus.

    Where a(x) = 0 the quadratic drops to b y + c = 0 and Y_1 is returned as inf.
    """
    x = np.asarray(x, dtype=complex)
    a, b, c = k.a(x), k.b(x), k.c(x)
    degenerate = np.abs(a) < config.ROOT_TOL * (1 + np.abs(b))
    sq = np.sqrt(b * b - 4 * a * c)
    safe_a = np.where(degenerate, 1.0, a)
    y_plus = (-b + sq) / (2 * safe_a)
    y_minus = (-b - sq) / (2 * safe_a)
    mod_plus, mod_minus = np.abs(y_plus), np.abs(y_minus)
    tie = np.abs(mod_plus - mod_minus) <= 1e-12 * np.maximum(mod_plus, 1.0)
    pick_plus = np.where(tie, y_plus.imag >= 0, mod_plus < mod_minus)
    y0 = np.where(pick_plus, y_plus, y_minus)
    y1 = np.where(pick_plus, y_minus, y_plus)
    if np.any(degenerate):
        logger.debug("[Kernel] a(x) = 0: linear root returned")
        linear = -c / np.where(degenerate, b, 1.0)
        y0 = np.where(degenerate, linear, y0)
        y1 = np.where(degenerate, np.inf + 0j, y1)
    if y0.ndim == 0:
        return complex(y0), complex(y1)
    return y0, y1


def kernel_roots_in_x(k, y):
    return kernel_roots_in_y(k.swapped(), y)


# --- Branch points ---

@dataclass(frozen=True)
class BranchPoints:
    x: tuple
    y: tuple


def _polish(poly, root):
    deriv = np.polyder(poly)
    for _ in range(3):
        slope = np.polyval(deriv, root)
        if slope == 0:
            break
        root = root - np.polyval(poly, root) / slope
    return root


def real_quartic_roots(poly, label="x"):
    poly = np.trim_zeros(np.asarray(poly, dtype=float), "f")
    if len(poly) != 5:
        raise NumericalFailureError(f"discriminant in {label} is not a quartic", degree=len(poly) - 1)
    companion = np.diag(np.ones(3), -1)
    companion[0, :] = -poly[1:] / poly[0]
    roots = np.linalg.eigvals(companion)
    scale = max(1.0, np.max(np.abs(roots)))
    real = sorted(_polish(poly, r.real) for r in roots if abs(r.imag) <= 1e-7 * scale)
    if len(real) != 4:
        raise NumericalFailureError(
            f"could not isolate four real branch points in {label}",
            roots=roots.tolist(),
        )
    return tuple(float(r) for r in real)


def _check_branch_order(points, k_lam, poly, label):
    p1, p2, p3, p4 = points
    upper = (1 + k_lam) / k_lam
    problems = []
    if not 0 <= p1:
        problems.append(f"{label}1 = {p1:.6g} < 0")
    if not p2 <= 1 + 1e-10 < p3:
        problems.append(f"{label}2 <= 1 < {label}3 fails ({p2:.6g}, {p3:.6g})")
    if not p4 < upper:
        problems.append(f"{label}4 = {p4:.6g} >= {upper:.6g}")
    mids = [(p1 + p2) / 2, (p2 + p3) / 2, (p3 + p4) / 2]
    signs = [np.sign(np.polyval(poly, m)) for m in mids]
    if signs != [-1, 1, -1]:
        problems.append(f"discriminant sign pattern {signs} on the slits")
    return problems


def branch_points(k, strict=True):
    if k.lam1 <= 0 or k.lam2 <= 0:
        raise InvalidParameterError("branch points need lambda1, lambda2 > 0")
    kx, ky = k, k.swapped()
    xs = real_quartic_roots(kx.poly_disc, "x")
    ys = real_quartic_roots(ky.poly_disc, "y")
    if strict:
        problems = _check_branch_order(xs, k.lam1, kx.poly_disc, "x") + _check_branch_order(ys, k.lam2, ky.poly_disc, "y")
        if problems:
            raise NumericalFailureError("branch points violate the expected ordering: " + "; ".join(problems),
                                        x=xs, y=ys)
    return BranchPoints(x=xs, y=ys)


# --- Contours ---

@dataclass(frozen=True)
class Contour:
    """Closed curve symmetric about the real axis in polar form.

    angles/radii sample [0, 2pi) uniformly. For the kernel contours, modulus(delta)
    is m(delta) and preimage(delta) the point of the opposite cut mapped to the
    curve point with real part delta.
    """
    angles: np.ndarray
    radii: np.ndarray
    extreme: tuple  # (right, left) = (beta_0, beta_1)
    kind: str = "polar"
    cut: tuple = None
    modulus: object = field(default=None, compare=False, repr=False)
    preimage: object = field(default=None, compare=False, repr=False)

    @property
    def points(self):
        return self.radii * np.exp(1j * self.angles)

    @cached_property
    def _log_spline(self):
        grid = np.append(self.angles, 2 * np.pi)
        values = np.log(np.append(self.radii, self.radii[0]))
        return CubicSpline(grid, values, bc_type="periodic")

    def radius_at(self, theta):
        return np.exp(self._log_spline(np.mod(theta, 2 * np.pi)))

    def contains(self, x, margin=0.0):
        x = np.asarray(x, dtype=complex)
        return np.abs(x) < self.radius_at(np.angle(x)) * (1 - margin)

    @classmethod
    def from_polar(cls, radius_fn, n_samples=config.CONTOUR_SAMPLES, kind="polar"):
        angles = 2 * np.pi * np.arange(n_samples) / n_samples
        radii = np.asarray(radius_fn(angles), dtype=float)
        return cls(angles=angles, radii=radii, extreme=(float(radius_fn(0.0)), -float(radius_fn(np.pi))), kind=kind)


def zeta(k, delta, cut=None):
    """Point y of the cut [y1, y2] with Re X(y) = delta."""
    quad = k.lam2 * (1 + k.lam1 * (1 - 2 * delta))
    lin = k.lam + k.lam1 * k.lam2 + k.s1 + k.s2 - 2 * k.lam1 * (1 + k.lam2) * delta
    if abs(quad) < 1e-14:
        return k.s2 / lin
    disc = max(lin * lin - 4 * quad * k.s2, 0.0)
    roots = ((lin - np.sqrt(disc)) / (2 * quad), (lin + np.sqrt(disc)) / (2 * quad))
    if cut is None:
        return roots[0]
    lo, hi = cut
    width = max(hi - lo, 1e-12)
    dist = [max(lo - r, r - hi, 0.0) for r in roots]
    best = int(np.argmin(dist))
    if dist[best] > 1e-6 * (1 + width):
        raise NumericalFailureError("no root of the real-part equation on the cut", delta=delta, roots=roots)
    return min(max(roots[best], lo), hi)


def _real_part_on_cut(k, y):
    # Re X(y) = -b_hat(y) / (2 a_hat(y))
    ks = k.swapped()
    return -ks.b(y) / (2 * ks.a(y))


def contour_M(k, n_samples=config.CONTOUR_SAMPLES):
    """Image of the cut [y1, y2] under X_0, sampled on a uniform angle grid."""
    if k.lam1 <= 0 or k.lam2 <= 0:
        raise InvalidParameterError("contours need lambda1, lambda2 > 0")
    if n_samples < 8 or n_samples % 2:
        raise InvalidParameterError("n_samples must be an even count >= 8")
    ys = branch_points(k, strict=False).y
    y1, y2 = ys[0], ys[1]
    if not y2 < (1 + k.lam2) / k.lam2:
        raise NumericalFailureError("y2 beyond (1 + lambda2)/lambda2", y2=y2)

    # X is real at the branch points, so the extremes are the real parts there.
    ends = sorted((float(_real_part_on_cut(k, y1)), float(_real_part_on_cut(k, y2))))
    beta1, beta0 = ends
    if not beta1 < 0 < beta0:
        raise NumericalFailureError("contour extremes do not straddle the origin", beta0=beta0, beta1=beta1)

    cut = (y1, y2)

    def modulus(delta):
        return k.modulus_law(zeta(k, delta, cut))

    half = n_samples // 2
    angles = 2 * np.pi * np.arange(n_samples) / n_samples
    radii = np.empty(n_samples)
    radii[0], radii[half] = beta0, -beta1
    for idx in range(1, half):
        phi = angles[idx]
        cos_phi = np.cos(phi)

        def residual(delta):
            return delta - cos_phi * np.sqrt(modulus(delta))

        try:
            delta = brentq(residual, beta1, beta0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        except (ValueError, RuntimeError) as e:
            raise NumericalFailureError(f"per-angle solve failed at phi = {phi:.6g}: {e}", phi=phi)
        radii[idx] = np.sqrt(modulus(delta))
        radii[n_samples - idx] = radii[idx]

    logger.debug(f"[Kernel] contour beta0={beta0:.6g} beta1={beta1:.6g} cut=({y1:.6g}, {y2:.6g})")
    return Contour(
        angles=angles, radii=radii, extreme=(beta0, beta1), kind="M", cut=cut,
        modulus=modulus, preimage=lambda delta: zeta(k, delta, cut),
    )


def contour_L(k, n_samples=config.CONTOUR_SAMPLES):
    c = contour_M(k.swapped(), n_samples)
    return replace(c, kind="L")
