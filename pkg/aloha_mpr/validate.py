import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from aloha_mpr import bvp, config, simulator, symmetric
from aloha_mpr.channel import ChannelParams, Policy, preset, preset3
from aloha_mpr.conformal import solve_theodorsen
from aloha_mpr.errors import AlohaMprError, InvalidParameterError, NumericalFailureError, StandingAssumptionError
from aloha_mpr.kernel import Contour
from aloha_mpr.stability import STABLE, closure, policy_grid, three_user_region, two_user_region
from aloha_mpr.workers import run_pool

logger = logging.getLogger(__name__)

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"

# Reference system for the symmetric checks.
REFERENCE = dict(alpha=0.6, alpha_star=1.0, p=0.9, p_tilde=1.0, b=0.2)
ASYMMETRIC = ChannelParams(p=(0.9, 0.8), p_tilde=(1.0, 0.95), b=(0.2, 0.15), c=0.0)
ASYMMETRIC_POLICY = Policy(alpha=(0.6, 0.5), alpha_star=(1.0, 1.0))


@dataclass
class Check:
    name: str
    status: str
    measured: object = None
    expected: object = None
    tolerance: float = None
    detail: str = ""


@dataclass(frozen=True)
class ValidationSettings:
    slots: int = config.VALIDATE_SLOTS
    seed: int = 0
    threads: int = None
    sim_channel: object = None   # channel table for the simulated capture-delay check
    only: tuple = None
    drift_pairs: int = config.VALIDATE_DRIFT_PAIRS
    drift_offset: float = config.VALIDATE_DRIFT_OFFSET

    @property
    def warmup(self):
        return min(config.SIM_WARMUP, self.slots // 10)

    def sim(self, channel, policy, lams, **kw):
        return simulator.SimConfig(channel=channel, policy=policy, lams=lams, slots=self.slots,
                                   warmup=self.warmup, seed=self.seed, **kw)


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def summary(self):
        out = {PASS: 0, FAIL: 0, INCONCLUSIVE: 0}
        for c in self.checks:
            out[c.status] += 1
        return out

    @property
    def passed(self):
        return self.summary[FAIL] == 0

    def as_dict(self):
        return {"passed": self.passed, "summary": self.summary, "checks": [asdict(c) for c in self.checks]}


def compare(name, measured, expected, ci=np.nan, rel_tol=config.VALIDATE_REL_TOL, detail=""):
    """Simulation against a reference value.

    Within rel_tol passes. Outside it but inside 3 CI half-widths the budget
    cannot tell the two apart, so the check is inconclusive.
    """
    tol = rel_tol * abs(expected)
    diff = abs(measured - expected)
    if diff <= tol:
        status = PASS
    elif np.isfinite(ci) and diff <= 3 * ci:
        status = INCONCLUSIVE
    else:
        status = FAIL
    return Check(name, status, float(measured), float(expected), tol,
                 detail or f"|diff| = {diff:.4g}, ci half-width = {ci:.3g}")


def _exact(name, measured, expected, tol, detail=""):
    ok = abs(measured - expected) <= tol
    return Check(name, PASS if ok else FAIL, float(measured), float(expected), tol, detail)


# --- Checks ---

def check_capture_delay(settings):
    """Simulated symmetric capture delay against the closed form."""
    out = []
    channel = settings.sim_channel or symmetric.SymmetricParams(**REFERENCE).channel()
    for lam in (0.05, 0.1, 0.15, 0.2):
        sp = symmetric.SymmetricParams(**REFERENCE, lam=lam)
        expected = symmetric.delay_capture(sp)
        res = simulator.run(settings.sim(channel, sp.policy(), (lam, lam)))
        for user in (1, 2):
            out.append(compare(f"capture_delay[lambda={lam}, user {user}]", res.mean_delay[user - 1],
                               expected, res.ci_delay[user - 1]))
    return out


def check_mpr_bounds(settings):
    """Simulated delay with joint decoding lies between the two bounds."""
    out = []
    for lam in (0.1, 0.2):
        sp = symmetric.SymmetricParams(**REFERENCE, c=0.3, lam=lam)
        low, up = symmetric.delay_bounds_mpr(sp)
        width = (up - low) / low
        # informational: the bounds take P(N1 > 0, N2 > 0) over all of [0, 1]
        out.append(Check(f"mpr_bounds_width[lambda={lam}]", PASS if width < 0.15 else INCONCLUSIVE,
                         width, "< 0.15", 0.15, "relative width (D_up - D_low) / D_low"))
        res = simulator.run(settings.sim(sp.channel(), sp.policy(), (lam, lam)))
        for user in (1, 2):
            d, ci = res.mean_delay[user - 1], res.ci_delay[user - 1]
            slack = 0.005 * up
            if low - slack <= d <= up + slack:
                status = PASS
            elif np.isfinite(ci) and low - 3 * ci <= d <= up + 3 * ci:
                status = INCONCLUSIVE
            else:
                status = FAIL
            out.append(Check(f"mpr_bounds[lambda={lam}, user {user}]", status, d, [low, up], slack,
                             f"ci half-width = {ci:.3g}"))
    return out


def check_bvp_vs_capture(settings):
    """Boundary value solution on a symmetric capture system against the closed form."""
    out = []
    for lam in (0.05, 0.1, 0.2):
        sp = symmetric.SymmetricParams(**REFERENCE, lam=lam)
        report = bvp.mean_delay(sp.channel(), sp.policy(), (lam, lam))
        expected = symmetric.delay_capture(sp)
        for user in (1, 2):
            out.append(_exact(f"bvp_vs_capture[lambda={lam}, user {user}]", report.D[user - 1], expected,
                              config.VALIDATE_BVP_TOL * expected, f"regime {report.extra['regime']}"))
    return out


def check_bvp_vs_simulation(settings):
    out = []
    lams = (0.08, 0.06)
    report = bvp.mean_delay(ASYMMETRIC, ASYMMETRIC_POLICY, lams)
    res = simulator.run(settings.sim(ASYMMETRIC, ASYMMETRIC_POLICY, lams))
    for user in (1, 2):
        out.append(compare(f"bvp_vs_simulation[user {user}]", res.mean_delay[user - 1],
                           report.D[user - 1], res.ci_delay[user - 1]))
    return out


def check_flow_conservation(settings):
    out = []
    cases = [
        ("asymmetric", ASYMMETRIC, ASYMMETRIC_POLICY, (0.08, 0.06)),
        ("symmetric", symmetric.SymmetricParams(**REFERENCE).channel(),
         Policy.symmetric(REFERENCE["alpha"], REFERENCE["alpha_star"]), (0.1, 0.1)),
    ]
    for label, ch, pol, lams in cases:
        sol = bvp.solve(ch, pol, lams)
        out.append(_exact(f"flow_conservation[{label}]", sol.diagnostics["flow_residual"], 0.0, 1e-6,
                          f"regime {sol.regime}"))
    balanced = symmetric.SymmetricParams(alpha=0.3, alpha_star=0.414, p=0.9, p_tilde=1.0, b=0.2, lam=0.05)
    sol = bvp.solve(balanced.channel(), balanced.policy(), (0.05, 0.05))
    rho = 2 * balanced.lam / balanced.e
    out.append(_exact("balanced_h00", sol.h00, 1 - rho, 1e-8, f"regime {sol.regime}"))
    return out


def check_conformal_identity(settings):
    circle = Contour.from_polar(lambda t: np.ones_like(t))
    cmap = solve_theodorsen(circle)
    err = float(np.max(np.abs(cmap.psi - cmap.phi)))
    return [_exact("conformal_identity", err, 0.0, 1e-8, f"{cmap.iterations} iterations")]


def check_optimal_alpha(settings):
    """Closed-form minimiser against a grid search of the exact delay."""
    out = []
    grid = np.linspace(0.001, 1.0, 1000)
    for b in (0.2, 0.5):
        sp = symmetric.SymmetricParams(alpha=0.5, alpha_star=1.0, p=0.9, p_tilde=1.0, b=b, lam=0.1)
        best = symmetric.optimal_alpha(sp)
        delays = np.full(len(grid), np.inf)
        for n, a in enumerate(grid):
            cand = symmetric.SymmetricParams(alpha=a, alpha_star=1.0, p=0.9, p_tilde=1.0, b=b, lam=0.1)
            if cand.mu_both > cand.lam:
                delays[n] = symmetric.delay_capture(cand)
        out.append(_exact(f"optimal_alpha[b={b}]", best.alpha_tilde, grid[int(np.argmin(delays))],
                          2 * (grid[1] - grid[0]), f"branch {best.branch}"))
    return out


def check_closure_dominance(settings):
    """The closure dominates every policy region on its grid and the tied closure."""
    ch = preset("capture", p=0.9, p_tilde=1.0, b=0.2)
    grid, rays = 6, 24
    full = closure(ch, grid=grid, rays=rays, threads=settings.threads)
    tied = closure(ch, grid=grid, rays=rays, tied=True, threads=settings.threads)
    worst = float(np.max(tied.radius - full.radius))
    out = [_exact("closure_dominance[tied]", max(worst, 0.0), 0.0, 1e-12)]
    rng = np.random.default_rng(settings.seed)
    policies = policy_grid(grid)
    excess = 0.0
    for row in rng.choice(len(policies), size=20, replace=False):
        a1, a2, as1, as2 = policies[row]
        try:
            region = two_user_region(ch, Policy((a1, a2), (as1, as2)))
        except StandingAssumptionError:
            continue
        for theta, r in zip(full.angles, full.radius):
            direction = (np.cos(theta), np.sin(theta))
            t = max(sub.ray_extent(direction) for sub in region.subregions)
            excess = max(excess, t - r)
    out.append(_exact("closure_dominance[policies]", excess, 0.0, 1e-9))
    return out


def _random_capture(rng):
    p = rng.uniform(0.7, 1.0, 2)
    b = rng.uniform(0.0, 0.3, 2)
    alpha = rng.uniform(0.3, 0.8, 2)
    ch = ChannelParams(p=tuple(p), p_tilde=(1.0, 1.0), b=tuple(b), c=0.0)
    return ch, Policy(tuple(alpha), (1.0, 1.0))


def check_index(settings):
    """chi = 0 on stable draws; the index conditions fail and chi != 0 on unstable ones."""
    rng = np.random.default_rng(settings.seed + 1)
    out = []
    for n in range(20):
        ch, pol = _random_capture(rng)
        k = bvp._kernel(ch, pol, (0.0, 0.0))
        lams = (rng.uniform(0.2, 0.8) * k.s1, rng.uniform(0.2, 0.8) * k.s2)
        cond = bvp.index_conditions(ch, pol, lams)
        try:
            chi = bvp.winding_index(ch, pol, lams)
        except NumericalFailureError as e:
            out.append(Check(f"index[stable {n}]", INCONCLUSIVE, None, 0, None, str(e)))
            continue
        ok = cond.chi_zero and chi == 0
        out.append(Check(f"index[stable {n}]", PASS if ok else FAIL, chi, 0, None,
                         f"dA/dx={cond.dA_dx:.4g} dB/dy={cond.dB_dy:.4g}"))
    for n in range(5):
        ch, pol = _random_capture(rng)
        k = bvp._kernel(ch, pol, (0.0, 0.0))
        lam1 = rng.uniform(0.2, 0.8) * k.s1
        edge = max(k.s2, k.e2 + k.d2 * lam1 / k.s1)
        lams = (lam1, min(edge * rng.uniform(1.05, 1.3), 0.99))
        cond = bvp.index_conditions(ch, pol, lams)
        try:
            chi = bvp.winding_index(ch, pol, lams)
        except AlohaMprError as e:
            status = FAIL if cond.chi_zero else INCONCLUSIVE
            out.append(Check(f"index[unstable {n}]", status, None, "chi != 0", None, str(e)))
            continue
        ok = not cond.chi_zero and chi != 0
        out.append(Check(f"index[unstable {n}]", PASS if ok else FAIL, chi, "chi != 0", None,
                         f"lambda=({lams[0]:.4g}, {lams[1]:.4g})"))
    return out


def _owned_rays(region, label, count):
    """Unit directions along which subregion `label` sets the outer boundary, with that boundary."""
    owned = []
    for theta in np.linspace(0.0, np.pi / 2, 8 * count + 2)[1:-1]:
        d = np.array([np.cos(theta), np.sin(theta)])
        extents = {r.label: r.ray_extent(d) for r in region.subregions}
        if extents[label] >= max(extents.values()):
            owned.append((d, extents[label]))
    if not owned:
        return []
    return [owned[i] for i in np.linspace(0, len(owned) - 1, count).round().astype(int)]


def _ray_edge(region, d, hi=1.0, iters=14):
    """Last stable t on the ray t*d, by bisection."""
    lo = 0.0
    for _ in range(iters):
        mid = (lo + hi) / 2
        if region.classify(mid * d) == STABLE:
            lo = mid
        else:
            hi = mid
    return lo


def _drift_verdicts(settings, cases, **kw):
    cfgs = [(settings.sim(ch, pol, tuple(lams), windows=config.SIM_WINDOWS, **kw),) for _, ch, pol, lams, _ in cases]
    runs = run_pool(simulator.run, cfgs, threads=settings.threads, label="Drift")
    out = []
    for (name, _, _, lams, expected), r in zip(cases, runs):
        if r.drift == expected:
            status = PASS
        elif r.drift == "marginal":
            status = INCONCLUSIVE
        else:
            status = FAIL
        out.append(Check(name, status, r.drift, expected, None,
                         "lambda = (" + ", ".join(f"{x:.4g}" for x in lams) + ")"))
    return out


def check_drift(settings):
    """Drift verdicts on both sides of every subregion's boundary, for two and three users."""
    ch = preset("capture", p=0.9, p_tilde=1.0, b=0.2)
    pol = Policy.symmetric(0.6, 1.0)
    region = two_user_region(ch, pol)
    delta = settings.drift_offset
    cases = []
    for sub in region.subregions:
        for n, (d, edge) in enumerate(_owned_rays(region, sub.label, settings.drift_pairs)):
            cases.append((f"drift[{sub.label} {n} inside]", ch, pol, (edge - delta) * d, "stable"))
            cases.append((f"drift[{sub.label} {n} outside]", ch, pol, (edge + delta) * d, "unstable"))
    out = _drift_verdicts(settings, cases)

    ch3 = preset3("capture", p=0.9, p_tilde=1.0, b=0.2, b3=0.1)
    pol3 = Policy.symmetric(0.5, 0.5, n=3)
    region3 = three_user_region(ch3, pol3, n_grid=config.VALIDATE_GRID3)
    cases = []
    for k in (1, 2, 3):
        d = np.full(3, 0.3)
        d[k - 1] = 1.0
        d /= np.linalg.norm(d)
        edge = _ray_edge(region3, d)
        inside = (edge - delta) * d
        logger.info(f"[Validate] three users, user {k} heavy: boundary at t = {edge:.4g}, "
                    f"inside point in {region3.member_of(inside)}")
        cases.append((f"drift3[R{k} inside]", ch3, pol3, inside, "stable"))
        cases.append((f"drift3[R{k} outside]", ch3, pol3, (edge + delta) * d, "unstable"))
    return out + _drift_verdicts(settings, cases, capture3=True)


def check_three_user_occupancy(settings):
    """P(N_i = 0, N_j = 0) of a dominant system against replicated simulations."""
    ch3 = preset3("capture", p=0.9, p_tilde=1.0, b=0.2, b3=0.1)
    pol = Policy.symmetric(0.5, 0.5, n=3)
    lam = 0.05
    f00, _, _ = bvp.solve_modified_F1(ch3, pol, lam, lam, dominant=1)
    cfg = settings.sim(ch3, pol, (0.0, lam, lam), mode=simulator.DOMINANT, mode_user=1, capture3=True)
    seeds = [settings.seed + r for r in range(config.VALIDATE_REPLICAS)]
    runs = simulator.run_replications(cfg, seeds, threads=settings.threads)
    fractions = np.array([sum(v for key, v in r.occupancy.items() if key[1] == 0 and key[2] == 0) for r in runs])
    ci = float(stats.t.ppf(0.975, len(fractions) - 1) * stats.sem(fractions))
    return [compare("three_user_F00[dominant 1]", float(fractions.mean()), f00, ci)]


CHECKS = {
    "capture_delay": check_capture_delay,
    "mpr_bounds": check_mpr_bounds,
    "bvp_vs_capture": check_bvp_vs_capture,
    "bvp_vs_simulation": check_bvp_vs_simulation,
    "flow_conservation": check_flow_conservation,
    "conformal_identity": check_conformal_identity,
    "optimal_alpha": check_optimal_alpha,
    "closure_dominance": check_closure_dominance,
    "index": check_index,
    "drift": check_drift,
    "three_user_occupancy": check_three_user_occupancy,
}


def _guarded(name, fn, settings):
    try:
        return fn(settings)
    except AlohaMprError as e:
        logger.error(f"[Validate] {name} raised {type(e).__name__}: {e}")
        return [Check(name, FAIL, detail=f"{type(e).__name__}: {e}")]


def run_suite(settings=None):
    settings = settings or ValidationSettings()
    names = list(settings.only or CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise InvalidParameterError(f"unknown checks: {', '.join(unknown)}")
    logger.info(f"[Validate] {len(names)} checks, {settings.slots:,} slots per simulation, seed {settings.seed}")
    results = run_pool(_guarded, [(n, CHECKS[n], settings) for n in names], threads=settings.threads,
                       label="Validate")
    report = ValidationReport(checks=[c for group in results for c in group])
    for c in report.checks:
        log = logger.info if c.status != FAIL else logger.warning
        log(f"[Validate] {c.status:<12} {c.name}: measured {c.measured} expected {c.expected}")
    logger.info(f"[Validate] summary {report.summary}")
    return report
