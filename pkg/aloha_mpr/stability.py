import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from aloha_mpr import config
from aloha_mpr.errors import (
    AlohaMprError,
    DegenerateError,
    InvalidParameterError,
    StandingAssumptionError,
)
from aloha_mpr.workers import run_pool

logger = logging.getLogger(__name__)

STABLE = "stable"
UNSTABLE = "unstable"
MARGINAL = "marginal"


class Convexity(str, enum.Enum):
    CONVEX = "convex"
    NON_CONVEX = "non-convex"
    TRIANGLE = "time-sharing-triangle"


# --- Two-user coefficients ---

@dataclass(frozen=True)
class DerivedCoeffs:
    alpha_hat: tuple
    d: tuple
    d_hat: tuple
    s: tuple   # (α1α̂2, α2α̂1): service while both queues are busy
    e: tuple   # (α1*P̃1, α2*P̃2): service while the other queue is empty

    @property
    def indicator(self):
        return self.s[0] / self.e[0] + self.s[1] / self.e[1]


def derived_coeffs(ch, pol):
    if pol.n_users != 2:
        raise InvalidParameterError("two-user coefficients need a two-user policy")
    a1, a2 = pol.alpha
    s1_star, s2_star = pol.alpha_star
    p1, p2 = ch.p
    b1, b2 = ch.b
    c = ch.c
    alpha_hat = ((1 - a1) * p2 + a1 * (b2 + c), (1 - a2) * p1 + a2 * (b1 + c))
    e = (s1_star * ch.p_tilde[0], s2_star * ch.p_tilde[1])
    d = (a1 * ((1 - a2) * p1 + a2 * b1) - e[0], a2 * ((1 - a1) * p2 + a1 * b2) - e[1])
    d_hat = (d[0] + a1 * a2 * c, d[1] + a1 * a2 * c)
    s = (a1 * alpha_hat[1], a2 * alpha_hat[0])
    for k in range(2):
        assert abs(d_hat[k] - (s[k] - e[k])) < 1e-12
    return DerivedCoeffs(alpha_hat=alpha_hat, d=d, d_hat=d_hat, s=s, e=e)


def check_standing_assumption(coeffs):
    for k, value in enumerate(coeffs.d):
        if value >= 0:
            raise StandingAssumptionError(k + 1, value)


def service_rates(ch, pol, p_empty):
    """Mean service rate of each user given P(other queue empty) per user."""
    coeffs = derived_coeffs(ch, pol)
    return tuple(
        coeffs.s[k] * (1 - p_empty[k]) + coeffs.e[k] * p_empty[k] for k in range(2)
    )


# --- Regions ---

@dataclass(frozen=True)
class LinearConstraint:
    """lam[user] < c0 + sum(coef[j] * lam[j])."""
    user: int
    c0: float
    coef: dict = field(default_factory=dict)

    def bound(self, lams):
        return self.c0 + sum(c1 * lams[j - 1] for j, c1 in self.coef.items())

    def __str__(self):
        terms = " ".join(f"{c1:+.6g}*lambda{j}" for j, c1 in self.coef.items())
        return f"lambda{self.user} < {self.c0:.6g} {terms}".rstrip()


def _constraint_status(lam, bound, tol):
    if lam == 0 and bound >= 0:
        return STABLE
    margin = bound - lam
    if margin > tol:
        return STABLE
    if margin < -tol:
        return UNSTABLE
    return MARGINAL


def _combine(statuses, any_of):
    statuses = list(statuses)
    if any_of:
        if STABLE in statuses:
            return STABLE
        return MARGINAL if MARGINAL in statuses else UNSTABLE
    if UNSTABLE in statuses:
        return UNSTABLE
    return MARGINAL if MARGINAL in statuses else STABLE


@dataclass
class Subregion:
    label: str
    constraints: list

    def bounds(self, lams):
        return [(c.user, c.bound(lams)) for c in self.constraints]

    def classify(self, lams, tol=config.MARGINAL_TOL):
        return _combine((_constraint_status(lams[u - 1], b, tol) for u, b in self.bounds(lams)), any_of=False)

    def ray_extent(self, direction):
        """Largest t with t*direction in the closure of the subregion."""
        direction = np.asarray(direction, dtype=float)
        t_max = np.inf
        for c in self.constraints:
            k = direction[c.user - 1] - sum(c1 * direction[j - 1] for j, c1 in c.coef.items())
            if k > 0:
                t_max = min(t_max, max(c.c0, 0.0) / k)
        return t_max


@dataclass
class StabilityRegion:
    subregions: list
    convexity: Convexity = None
    n_users: int = 2

    def classify(self, lams, tol=config.MARGINAL_TOL):
        lams = tuple(float(x) for x in lams)
        if len(lams) != self.n_users:
            raise InvalidParameterError(f"expected {self.n_users} arrival rates, got {len(lams)}")
        if any(x < 0 for x in lams):
            raise InvalidParameterError("arrival rates must be >= 0")
        return _combine((r.classify(lams, tol) for r in self.subregions), any_of=True)

    def contains(self, lams):
        return self.classify(lams) == STABLE

    def member_of(self, lams):
        return [r.label for r in self.subregions if r.classify(lams) == STABLE]

    def boundary(self, rays=config.CLOSURE_RAYS):
        """Outer boundary of the union as (lambda1, lambda2) points along a fan of rays."""
        if self.n_users != 2:
            raise InvalidParameterError("boundary sampling is only defined for two users")
        angles = np.linspace(0.0, np.pi / 2, rays)
        points = []
        for theta in angles:
            direction = (np.cos(theta), np.sin(theta))
            t = max(r.ray_extent(direction) for r in self.subregions)
            points.append((t * direction[0], t * direction[1]))
        return np.array(points)


def two_user_region(ch, pol, literal=False):
    coeffs = derived_coeffs(ch, pol)
    check_standing_assumption(coeffs)
    (s1, s2), (e1, e2), (dh1, dh2) = coeffs.s, coeffs.e, coeffs.d_hat

    r1 = Subregion("R1", [
        LinearConstraint(1, e1, {2: dh1 / s2} if s2 > 0 else {}),
        LinearConstraint(2, s2),
    ])
    r2 = Subregion("R2", [
        LinearConstraint(2, e2, {1: dh2 / s1} if s1 > 0 else {}),
        LinearConstraint(1, s1),
    ])
    try:
        convexity = is_convex(ch, pol, literal=literal)
    except DegenerateError:
        convexity = None
    logger.debug(f"[Region] R1: {'; '.join(map(str, r1.constraints))} | R2: {'; '.join(map(str, r2.constraints))}")
    return StabilityRegion([r1, r2], convexity=convexity, n_users=2)


def convexity_indicator(ch, pol, literal=False):
    coeffs = derived_coeffs(ch, pol)
    e1, e2 = coeffs.e
    if e1 <= 0 or e2 <= 0:
        raise DegenerateError("alpha*P~ = 0 for some user; convexity indicator undefined")
    if literal:
        # alternative second term: alpha_2 * alpha_hat_2
        return coeffs.s[0] / e1 + pol.alpha[1] * coeffs.alpha_hat[1] / e2
    return coeffs.s[0] / e1 + coeffs.s[1] / e2


def is_convex(ch, pol, literal=False):
    indicator = convexity_indicator(ch, pol, literal=literal)
    if abs(indicator - 1.0) <= config.CONVEXITY_TOL:
        return Convexity.TRIANGLE
    return Convexity.CONVEX if indicator > 1.0 else Convexity.NON_CONVEX


# --- Closure over policies ---

@dataclass(frozen=True)
class ClosureCurve:
    angles: np.ndarray
    radius: np.ndarray
    policies: np.ndarray  # (rays, 4): alpha1, alpha2, alpha1*, alpha2* attaining each ray

    @property
    def points(self):
        return np.column_stack((self.radius * np.cos(self.angles), self.radius * np.sin(self.angles)))


def policy_grid(grid=config.CLOSURE_GRID, tied=False):
    if grid < 2:
        raise InvalidParameterError("closure grid needs at least 2 points per dimension")
    alphas = np.linspace(0.0, 1.0, grid)
    if tied:
        a1, a2 = np.meshgrid(alphas, alphas, indexing="ij")
        a1, a2 = a1.ravel(), a2.ravel()
        return np.column_stack((a1, a2, a1, a2))
    frac = np.linspace(0.0, 1.0, grid)
    a1, a2, f1, f2 = (m.ravel() for m in np.meshgrid(alphas, alphas, frac, frac, indexing="ij"))
    return np.column_stack((a1, a2, a1 + f1 * (1 - a1), a2 + f2 * (1 - a2)))


def _policy_coeffs(ch, grid):
    a1, a2, as1, as2 = grid.T
    p1, p2 = ch.p
    b1, b2 = ch.b
    c = ch.c
    hat1 = (1 - a1) * p2 + a1 * (b2 + c)
    hat2 = (1 - a2) * p1 + a2 * (b1 + c)
    s1, s2 = a1 * hat2, a2 * hat1
    e1, e2 = as1 * ch.p_tilde[0], as2 * ch.p_tilde[1]
    return s1, s2, e1, e2, s1 - e1, s2 - e2


def _extent(rhs, k):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(k > 0, np.maximum(rhs, 0.0) / np.where(k > 0, k, 1.0), np.inf)


def _ray_closure(coeffs, theta):
    s1, s2, e1, e2, dh1, dh2 = coeffs
    cos, sin = np.cos(theta), np.sin(theta)
    slope1 = np.divide(dh1, s2, out=np.zeros_like(dh1), where=s2 > 0)
    slope2 = np.divide(dh2, s1, out=np.zeros_like(dh2), where=s1 > 0)
    t1 = np.minimum(_extent(e1, cos - slope1 * sin), _extent(s2, np.full_like(s2, sin)))
    t2 = np.minimum(_extent(e2, sin - slope2 * cos), _extent(s1, np.full_like(s1, cos)))
    t = np.maximum(t1, t2)
    best = int(np.argmax(t))
    return float(t[best]), best


def closure(ch, grid=config.CLOSURE_GRID, rays=config.CLOSURE_RAYS, tied=False, threads=None):
    """Envelope of the stability regions over a policy grid, sampled on a fan of rays.

    tied=True restricts the grid to alpha* = alpha.
    """
    policies = policy_grid(grid, tied=tied)
    coeffs = _policy_coeffs(ch, policies)
    angles = np.linspace(0.0, np.pi / 2, rays)
    logger.info(f"[Closure] {len(policies)} policies x {rays} rays (tied={tied})")
    results = run_pool(_ray_closure, [(coeffs, theta) for theta in angles], threads=threads, label="Closure")
    radius = np.array([r for r, _ in results])
    best = policies[[b for _, b in results]]
    return ClosureCurve(angles=angles, radius=radius, policies=best)


# --- Three users ---

def _next(k):
    return k % 3 + 1


def alpha_hat3(ch3, pol, m, u, v):
    """Success probability of user m while u, v are non-empty and m transmits."""
    au, av = pol.alpha[u - 1], pol.alpha[v - 1]
    return ((1 - au) * (1 - av) * ch3.P(m, m) + au * (1 - av) * ch3.P(m, m, u)
            + av * (1 - au) * ch3.P(m, m, v) + au * av * ch3.P(m, m, u, v))


def alpha_bar3(ch3, pol, u, v, starred=False):
    """Success of v with u the only other non-empty user; u transmits with alpha_u (or alpha_u*)."""
    au = pol.alpha_star[u - 1] if starred else pol.alpha[u - 1]
    return (1 - au) * ch3.Pt(v, v) + au * ch3.Pt(v, u, v)


@dataclass(frozen=True)
class DominantCoeffs:
    """Dominant system where user k never empties; i = next(k), j = next(i).

    User i's neighbour is j, user j's neighbour is k (always busy), user k's is i.
    """
    k: int
    i: int
    j: int
    a: tuple       # (a_i, a_j) service with both i and j busy
    e: tuple       # (e_i, e_j) service with the other member of the pair empty
    weights: tuple  # user k success per occupancy cell (00, i-only, j-only, both)

    @property
    def d(self):
        return (self.a[0] - self.e[0], self.a[1] - self.e[1])

    @property
    def determinant(self):
        d_i, d_j = self.d
        return d_i * d_j - self.a[0] * self.a[1]


def dominant_coeffs(ch3, pol, k):
    if pol.n_users != 3:
        raise InvalidParameterError("three-user coefficients need a three-user policy")
    i = _next(k)
    j = _next(i)
    al, st = pol.alpha, pol.alpha_star
    a_i = al[i - 1] * alpha_hat3(ch3, pol, i, k, j)
    a_j = al[j - 1] * alpha_hat3(ch3, pol, j, k, i)
    # N_j = 0: i uses alpha_i*, k sees i busy and uses alpha_k.
    e_i = st[i - 1] * alpha_bar3(ch3, pol, k, i)
    # N_i = 0: k uses alpha_k*, j sees k busy and uses alpha_j.
    e_j = al[j - 1] * alpha_bar3(ch3, pol, k, j, starred=True)
    weights = (
        st[k - 1] * ch3.Pa(k),
        al[k - 1] * alpha_bar3(ch3, pol, i, k, starred=True),
        st[k - 1] * alpha_bar3(ch3, pol, j, k),
        al[k - 1] * alpha_hat3(ch3, pol, k, i, j),
    )
    return DominantCoeffs(k=k, i=i, j=j, a=(a_i, a_j), e=(e_i, e_j), weights=weights)


@dataclass
class DominantSubregion:
    label: str
    coeffs: DominantCoeffs
    occupancy: object  # callable (lam_i, lam_j) -> (F00, F10, F01)

    def bounds(self, lams):
        c = self.coeffs
        lam_i, lam_j = lams[c.i - 1], lams[c.j - 1]
        f00, f10, f01 = self.occupancy(lam_i, lam_j)
        cells = (f00, f10 - f00, f01 - f00, 1 - f10 - f01 + f00)
        p_suc_k = sum(w * q for w, q in zip(c.weights, cells))
        return [
            (c.i, c.a[0] + f10 * (c.e[0] - c.a[0])),
            (c.j, c.a[1] + f01 * (c.e[1] - c.a[1])),
            (c.k, p_suc_k),
        ]

    def classify(self, lams, tol=config.MARGINAL_TOL):
        try:
            bounds = self.bounds(lams)
        except DegenerateError:
            raise
        except AlohaMprError as e:
            logger.info(f"[Region3] {self.label} excluded at {tuple(lams)}: {e}")
            return UNSTABLE
        return _combine((_constraint_status(lams[u - 1], b, tol) for u, b in bounds), any_of=False)


def three_user_region(ch3, pol, solver=None, **solver_kwargs):
    """Union of the three dominant-system regions; solver supplies F_k(0,0), F_k(1,0), F_k(0,1)."""
    if solver is None:
        from aloha_mpr.bvp import solve_modified_F1 as solver

    subregions = []
    for k in (1, 2, 3):
        coeffs = dominant_coeffs(ch3, pol, k)

        def occupancy(lam_i, lam_j, k=k):
            return solver(ch3, pol, lam_i, lam_j, dominant=k, **solver_kwargs)

        subregions.append(DominantSubregion(f"R{k}", coeffs, occupancy))
    return StabilityRegion(subregions, convexity=None, n_users=3)
