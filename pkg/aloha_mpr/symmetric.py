import logging
import warnings
from dataclasses import dataclass

import numpy as np

from aloha_mpr.channel import Policy, preset
from aloha_mpr.errors import (
    DegenerateError,
    InstabilityError,
    InvalidParameterError,
)
from aloha_mpr.report import DelayReport

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SymmetricParams:
    """Both users share alpha, alpha*, lambda and the channel table (p, p~, b, c)."""
    alpha: float
    alpha_star: float
    p: float
    p_tilde: float
    b: float = 0.0
    c: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "alpha_star", "p", "p_tilde", "b", "c"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise InvalidParameterError(f"{name} = {value} is not a probability")
            object.__setattr__(self, name, value)
        if self.lam < 0:
            raise InvalidParameterError("lambda must be >= 0")
        if 2 * self.b + self.c > 1 + 1e-12:
            raise InvalidParameterError(f"2b + c = {2 * self.b + self.c:.6g} exceeds 1")
        if self.alpha > self.alpha_star:
            warnings.warn(f"alpha = {self.alpha} exceeds alpha* = {self.alpha_star}", stacklevel=3)

    @property
    def mu_both(self):
        """Per-user success rate while both queues are busy."""
        a = self.alpha
        return a * (self.p + a * (self.b + self.c - self.p))

    @property
    def e(self):
        return self.alpha_star * self.p_tilde

    @property
    def d(self):
        a = self.alpha
        return a * ((1 - a) * self.p + a * self.b) - self.e

    @property
    def joint(self):
        return self.alpha ** 2 * self.c

    @property
    def gap(self):
        """d + alpha^2 c = mu_both - alpha* p~; its sign orients the bounds."""
        return self.d + self.joint

    def with_lambda(self, lam):
        return SymmetricParams(self.alpha, self.alpha_star, self.p, self.p_tilde, self.b, self.c, lam)

    def with_alpha(self, alpha):
        return SymmetricParams(alpha, self.alpha_star, self.p, self.p_tilde, self.b, self.c, self.lam)

    def channel(self):
        kind = "mpr" if self.c > 0 else "capture"
        return preset(kind, p=self.p, p_tilde=self.p_tilde, b=self.b, c=self.c)

    def policy(self):
        return Policy.symmetric(self.alpha, self.alpha_star)


def _check(sp):
    if sp.e <= 0:
        raise DegenerateError("alpha* p~ = 0: an isolated user is never served")
    if sp.lam >= sp.mu_both:
        raise InstabilityError(f"lambda = {sp.lam:.6g} >= mu_both = {sp.mu_both:.6g}")


def _base(sp):
    return (2 * sp.mu_both + sp.lam * sp.gap) / (2 * sp.e * (sp.mu_both - sp.lam))


def _phi_max(sp):
    """phi evaluated at P(N1 > 0, N2 > 0) = 1."""
    if sp.lam == 0:
        return 0.0
    return -sp.joint * sp.gap / (2 * sp.lam * sp.e * (sp.mu_both - sp.lam))


def delay_capture(sp):
    """Exact mean delay of the symmetric capture system."""
    if sp.c != 0:
        raise InvalidParameterError("delay_capture covers c = 0 only; use delay_bounds_mpr")
    _check(sp)
    return _base(sp)


def delay_bounds_mpr(sp):
    """(D_low, D_up) from the two extreme values of P(N1 > 0, N2 > 0)."""
    _check(sp)
    base = _base(sp)
    phi = _phi_max(sp)
    if sp.gap < 0:
        return base, base + phi
    if sp.gap > 0:
        return base + phi, base
    return base, base


def mean_queue_length(sp, p_busy):
    """M from the both-busy probability P(N1 > 0, N2 > 0); exact for any value the system attains."""
    if not 0.0 <= p_busy <= 1.0:
        raise InvalidParameterError("p_busy must be a probability")
    _check(sp)
    denom = 2 * sp.e * (sp.mu_both - sp.lam)
    return (sp.lam * (2 * sp.mu_both + sp.lam * sp.gap) - sp.joint * sp.gap * p_busy) / denom


def delay(sp, p_busy=None):
    """DelayReport for both users: exact for c = 0 or a known p_busy, else the bound pair."""
    if sp.c == 0 or p_busy is not None:
        m = mean_queue_length(sp, 0.0 if p_busy is None else p_busy)
        d = m / sp.lam if sp.lam > 0 else 1.0 / sp.e if sp.e > 0 else float("nan")
        return DelayReport(M=(m, m), D=(d, d), source="closed-form")
    low, up = delay_bounds_mpr(sp)
    m_bounds = (sp.lam * low, sp.lam * up)
    return DelayReport(M=m_bounds, D=(low, up), source="closed-form", bounds=((low, up), (low, up)),
                       extra={"kind": "bounds"})


@dataclass(frozen=True)
class OptimalAlpha:
    alpha_tilde: float
    branch: str     # "alpha_star" or "vertex"
    feasible: bool  # mu_both(alpha_tilde) > lambda


def optimal_alpha(sp):
    """Delay-minimising alpha in [0, alpha*] for the capture channel.

    The delay decreases in mu_both, so the minimiser is the maximiser of
    alpha (p + alpha (b - p)) on [0, alpha*].
    """
    if sp.c != 0:
        raise InvalidParameterError("optimal alpha is derived for the capture channel (c = 0)")
    if sp.b >= sp.p:
        raise InvalidParameterError(f"optimal alpha needs b < p (b = {sp.b}, p = {sp.p})")
    threshold = sp.p * (2 * sp.alpha_star - 1) / (2 * sp.alpha_star) if sp.alpha_star > 0 else -np.inf
    if sp.b >= threshold:
        alpha, branch = sp.alpha_star, "alpha_star"
    else:
        alpha, branch = sp.p / (2 * (sp.p - sp.b)), "vertex"
    feasible = sp.with_alpha(alpha).mu_both > sp.lam
    if not feasible:
        logger.warning(f"[Sym] no alpha in [0, {sp.alpha_star}] stabilises lambda = {sp.lam:.6g}")
    return OptimalAlpha(alpha_tilde=float(alpha), branch=branch, feasible=bool(feasible))


def stable_alpha_interval(sp):
    """(s1, s2): roots of alpha (p + alpha (b - p)) = lambda bounding the stable alphas."""
    q = sp.b + sp.c - sp.p
    if abs(q) < 1e-15:
        lo = sp.lam / sp.p if sp.p > 0 else np.inf
        return lo, np.inf
    disc = sp.p ** 2 + 4 * q * sp.lam
    if disc < 0:
        return np.nan, np.nan
    roots = sorted(((-sp.p + np.sqrt(disc)) / (2 * q), (-sp.p - np.sqrt(disc)) / (2 * q)))
    return float(roots[0]), float(roots[1])
