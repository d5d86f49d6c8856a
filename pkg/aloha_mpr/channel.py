import logging
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from aloha_mpr import config
from aloha_mpr.errors import InvalidParameterError
from aloha_mpr.workers import run_pool

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12

TABLE_KEYS = ("P1_1", "P2_2", "Pt1_1", "Pt2_2", "P1_12", "P2_12", "P12_12")


def _check_prob(name, value):
    if not (-PROB_TOL <= value <= 1 + PROB_TOL) or np.isnan(value):
        raise InvalidParameterError(f"{name} = {value} is not a probability")
    return float(min(max(value, 0.0), 1.0))


# --- Physical layer ---

@dataclass(frozen=True)
class PhyParams:
    """Single-destination Rayleigh layout.

    tx_power_alone is the adapted power a node uses while its neighbour's queue is
    empty; it defaults to tx_power (so P̃ = P).
    """
    tx_power: tuple
    distance: tuple
    fading: tuple
    threshold: tuple
    noise: float = 0.0
    path_loss: float = 4.0
    tx_power_alone: tuple = None

    def __post_init__(self):
        n = len(self.tx_power)
        if n not in (2, 3):
            raise InvalidParameterError(f"layouts with {n} nodes are not supported (2 or 3)")
        for name in ("distance", "fading", "threshold"):
            if len(getattr(self, name)) != n:
                raise InvalidParameterError(f"{name} must have one entry per node ({n})")
        powers = self.tx_power if self.tx_power_alone is None else self.tx_power + tuple(self.tx_power_alone)
        if any(p <= 0 for p in powers):
            raise InvalidParameterError("transmit powers must be strictly positive")
        if any(r <= 0 for r in self.distance):
            raise InvalidParameterError("link distances must be strictly positive")
        if any(v <= 0 for v in self.fading):
            raise InvalidParameterError("Rayleigh fading parameters must be strictly positive")
        if any(g < 0 for g in self.threshold):
            raise InvalidParameterError("SINR thresholds must be non-negative")
        if self.path_loss < 0:
            raise InvalidParameterError("path-loss exponent must be >= 0")
        if self.noise < 0:
            raise InvalidParameterError("noise power must be >= 0")

    @property
    def n_users(self):
        return len(self.tx_power)

    def gains(self, adapted=False):
        power = self.tx_power if (not adapted or self.tx_power_alone is None) else self.tx_power_alone
        return np.asarray(power, dtype=float) * np.asarray(self.distance, dtype=float) ** (-self.path_loss)


def success_prob(phy, i, T, adapted=False):
    """Probability that user i (1-based) clears its SINR threshold while the set T transmits."""
    T = frozenset(T)
    if not T:
        raise InvalidParameterError("transmitting set is empty")
    if i not in T:
        raise InvalidParameterError(f"user {i} is not in the transmitting set {sorted(T)}")
    if any(k < 1 or k > phy.n_users for k in T):
        raise InvalidParameterError(f"transmitting set {sorted(T)} names unknown users")

    g = phy.gains(adapted)
    v = np.asarray(phy.fading, dtype=float)
    gamma = phy.threshold[i - 1]
    own = v[i - 1] * g[i - 1]
    prob = np.exp(-gamma * phy.noise / own)
    for k in T - {i}:
        prob /= 1.0 + gamma * v[k - 1] * g[k - 1] / own
    return float(prob)


# --- Probability tables ---

@dataclass(frozen=True)
class ChannelParams:
    """Two-user reception table.

    p[i] = P_{i/{i}}, p_tilde[i] = P̃_{i/{i}}, b[i] = P_{i/{1,2}} (only i decoded),
    c = P_{1,2/{1,2}} (both decoded).
    """
    p: tuple
    p_tilde: tuple
    b: tuple
    c: float = 0.0
    stderr: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        clean = {}
        for name in ("p", "p_tilde", "b"):
            values = tuple(getattr(self, name))
            if len(values) != 2:
                raise InvalidParameterError(f"{name} needs two entries")
            clean[name] = tuple(_check_prob(f"{name}[{k + 1}]", x) for k, x in enumerate(values))
        clean["c"] = _check_prob("c", self.c)
        for name, value in clean.items():
            object.__setattr__(self, name, value)
        if self.b[0] + self.b[1] + self.c > 1 + PROB_TOL:
            raise InvalidParameterError(
                f"P_1/12 + P_2/12 + P_12/12 = {self.b[0] + self.b[1] + self.c:.6g} exceeds 1")
        for k in range(2):
            if not (self.p_tilde[k] >= self.p[k] >= self.marginal(k + 1) - PROB_TOL):
                warnings.warn(
                    f"user {k + 1}: expected P~ >= P >= P_s(i,{{1,2}}), got "
                    f"{self.p_tilde[k]:.4g}, {self.p[k]:.4g}, {self.marginal(k + 1):.4g}",
                    stacklevel=3,
                )

    n_users = 2

    def marginal(self, i):
        """P_s(i,{1,2}) = P_{i/{1,2}} + P_{1,2/{1,2}}."""
        return self.b[i - 1] + self.c

    @property
    def p_none(self):
        return max(0.0, 1.0 - self.b[0] - self.b[1] - self.c)

    @property
    def is_capture(self):
        return self.c == 0.0

    def as_table(self):
        return dict(zip(TABLE_KEYS, (*self.p, *self.p_tilde, *self.b, self.c)))

    @classmethod
    def from_table(cls, table):
        unknown = set(table) - set(TABLE_KEYS)
        if unknown:
            raise InvalidParameterError(f"unknown channel table keys: {sorted(unknown)}")
        missing = [k for k in TABLE_KEYS if k not in table and k != "P12_12"]
        if missing:
            raise InvalidParameterError(f"missing channel table keys: {missing}")
        return cls(
            p=(table["P1_1"], table["P2_2"]),
            p_tilde=(table["Pt1_1"], table["Pt2_2"]),
            b=(table["P1_12"], table["P2_12"]),
            c=table.get("P12_12", 0.0),
        )


def _key(k, T):
    return (k, tuple(sorted(T)))


@dataclass(frozen=True)
class ChannelParams3:
    """Three-user marginal success table.

    full[(k, T)]      P_{k/T}   every queue non-empty
    one_empty[(k, T)] P̃_{k/T}  exactly one of the other queues empty
    alone[k-1]        P̃'_{k/{k}} both other queues empty
    """
    full: dict
    one_empty: dict
    alone: tuple

    def __post_init__(self):
        for name in ("full", "one_empty"):
            table = {}
            for (k, T), value in getattr(self, name).items():
                table[_key(k, T)] = _check_prob(f"{name}[{k}/{sorted(T)}]", value)
            object.__setattr__(self, name, table)
        object.__setattr__(self, "alone", tuple(_check_prob(f"alone[{k + 1}]", x) for k, x in enumerate(self.alone)))
        if len(self.alone) != 3:
            raise InvalidParameterError("alone needs three entries")
        for k in (1, 2, 3):
            for T in _sets_containing(k):
                if _key(k, T) not in self.full:
                    raise InvalidParameterError(f"missing P_{k}/{set(T)} in the full table")
                if len(T) < 3 and _key(k, T) not in self.one_empty:
                    raise InvalidParameterError(f"missing P~_{k}/{set(T)} in the one-empty table")

    n_users = 3

    def P(self, k, *T):
        return self.full[_key(k, T)]

    def Pt(self, k, *T):
        return self.one_empty[_key(k, T)]

    def Pa(self, k):
        return self.alone[k - 1]


def _sets_containing(k, n=3):
    others = [j for j in range(1, n + 1) if j != k]
    for size in range(n):
        for extra in combinations(others, size):
            yield tuple(sorted((k,) + extra))


@dataclass(frozen=True)
class Policy:
    """alpha[k]: transmit probability while the neighbour queue is non-empty,
    alpha_star[k]: while it is empty."""
    alpha: tuple
    alpha_star: tuple

    def __post_init__(self):
        if len(self.alpha) != len(self.alpha_star) or len(self.alpha) not in (2, 3):
            raise InvalidParameterError("alpha and alpha_star must both have 2 or 3 entries")
        object.__setattr__(self, "alpha", tuple(_check_prob(f"alpha[{k + 1}]", a) for k, a in enumerate(self.alpha)))
        object.__setattr__(self, "alpha_star",
                           tuple(_check_prob(f"alpha_star[{k + 1}]", a) for k, a in enumerate(self.alpha_star)))
        for k, (a, a_star) in enumerate(zip(self.alpha, self.alpha_star)):
            if a > a_star:
                warnings.warn(f"user {k + 1}: alpha = {a} exceeds alpha* = {a_star}", stacklevel=3)

    @property
    def n_users(self):
        return len(self.alpha)

    @classmethod
    def symmetric(cls, alpha, alpha_star, n=2):
        return cls((alpha,) * n, (alpha_star,) * n)


# --- Monte Carlo joint events ---

def _joint_chunk(phy, seed, chunk_id, size):
    rng = np.random.Generator(np.random.Philox(key=seed, counter=[chunk_id, 0, 0, 0]))
    g = phy.gains()
    v = np.asarray(phy.fading, dtype=float)
    draws = rng.exponential(scale=v, size=(size, 2))
    received = draws * g[:2]
    sinr = received / (phy.noise + received[:, ::-1])
    ok = sinr >= np.asarray(phy.threshold[:2])
    both = int(np.count_nonzero(ok[:, 0] & ok[:, 1]))
    first = int(np.count_nonzero(ok[:, 0] & ~ok[:, 1]))
    second = int(np.count_nonzero(~ok[:, 0] & ok[:, 1]))
    return np.array([first, second, both, size])


def joint_events(phy, samples=None, seed=0, threads=None):
    """Monte Carlo estimate of (P_1/12, P_2/12, P_12/12) with standard errors."""
    samples = samples or config.MC_SAMPLES
    chunk = config.MC_CHUNK
    sizes = [chunk] * (samples // chunk)
    if samples % chunk:
        sizes.append(samples % chunk)
    jobs = [(phy, seed, i, size) for i, size in enumerate(sizes)]
    counts = sum(run_pool(_joint_chunk, jobs, threads=threads, label="MC"))
    n = counts[3]
    est = counts[:3] / n
    se = np.sqrt(est * (1 - est) / n)
    logger.info(f"[MC] joint events over {n} draws: P1/12={est[0]:.5f} P2/12={est[1]:.5f} P12/12={est[2]:.5f}")
    return est, se


def derive_conditionals(phy, samples=None, seed=0, threads=None):
    if phy.n_users == 3:
        return _derive_three(phy)

    p = tuple(success_prob(phy, i, {i}) for i in (1, 2))
    p_tilde = tuple(success_prob(phy, i, {i}, adapted=True) for i in (1, 2))
    est, se = joint_events(phy, samples, seed, threads)
    samples = samples or config.MC_SAMPLES
    for i in (1, 2):
        residual = abs(success_prob(phy, i, {1, 2}) - est[i - 1] - est[2])
        if residual > 4 / np.sqrt(samples):
            logger.warning(f"[MC] user {i} marginal residual {residual:.2e} above 4/sqrt(samples)")
    stderr = {"P1_12": float(se[0]), "P2_12": float(se[1]), "P12_12": float(se[2]), "samples": samples}
    total = est[0] + est[1] + est[2]
    if total > 1:
        est = est / total
    return ChannelParams(p=p, p_tilde=p_tilde, b=(est[0], est[1]), c=est[2], stderr=stderr)


def _derive_three(phy):
    # Marginals suffice for the three-user construction; the adapted power applies
    # to every transmitter once some queue is empty.
    full, one_empty = {}, {}
    for k in (1, 2, 3):
        for T in _sets_containing(k):
            full[(k, T)] = success_prob(phy, k, T)
            if len(T) < 3:
                one_empty[(k, T)] = success_prob(phy, k, T, adapted=True)
    alone = tuple(success_prob(phy, k, {k}, adapted=True) for k in (1, 2, 3))
    return ChannelParams3(full=full, one_empty=one_empty, alone=alone)


# --- Presets ---

def preset(kind, p=1.0, p_tilde=1.0, b=0.0, c=0.0):
    """Symmetric table: 'collision', 'capture' (uses b) or 'mpr' (uses b, c)."""
    if kind == "collision":
        b, c = 0.0, 0.0
    elif kind == "capture":
        c = 0.0
    elif kind != "mpr":
        raise InvalidParameterError(f"unknown channel preset '{kind}'")
    if 2 * b + c > 1 + PROB_TOL:
        raise InvalidParameterError(f"2b + c = {2 * b + c:.6g} exceeds 1")
    return ChannelParams(p=(p, p), p_tilde=(p_tilde, p_tilde), b=(b, b), c=c)


def preset3(kind, p=1.0, p_tilde=1.0, b=0.0, b3=0.0, p_alone=None):
    """Symmetric three-user table. b is the pairwise and b3 the three-way marginal."""
    if kind == "collision":
        b, b3 = 0.0, 0.0
    elif kind not in ("capture", "mpr"):
        raise InvalidParameterError(f"unknown channel preset '{kind}'")
    if b3 > b:
        raise InvalidParameterError("three-way success probability cannot exceed the pairwise one")
    full, one_empty = {}, {}
    for k in (1, 2, 3):
        for T in _sets_containing(k):
            value = {1: p, 2: b, 3: b3}[len(T)]
            full[(k, T)] = value
            if len(T) < 3:
                one_empty[(k, T)] = p_tilde if len(T) == 1 else b
    alone = (p_tilde if p_alone is None else p_alone,) * 3
    return ChannelParams3(full=full, one_empty=one_empty, alone=alone)
