import sys
import logging
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats

from aloha_mpr import config
from aloha_mpr.channel import ChannelParams, ChannelParams3, _sets_containing
from aloha_mpr.errors import InvalidParameterError
from aloha_mpr.workers import run_pool

logger = logging.getLogger(__name__)

NORMAL = "normal"
DOMINANT = "dominant"          # user k keeps transmitting dummies while empty
INTERFERING = "interfering"    # user k transmits every slot and carries no traffic

ARRIVALS = ("geometric", "bernoulli")
_ARRIVAL, _TX, _CHANNEL = 0, 1, 2


def parse_mode(text):
    """'normal', 'dominant:k' or 'interfering:k' -> (mode, k)."""
    if text in (None, "", NORMAL):
        return NORMAL, None
    name, _, user = text.partition(":")
    if name not in (DOMINANT, INTERFERING) or not user.isdigit():
        raise InvalidParameterError(f"unknown simulation mode '{text}'")
    return name, int(user)


@dataclass(frozen=True)
class SimConfig:
    channel: object
    policy: object
    lams: tuple
    slots: int = config.SIM_SLOTS
    warmup: int = config.SIM_WARMUP
    seed: int = 0
    mode: str = NORMAL
    mode_user: int = None
    arrivals: str = "geometric"
    windows: int = config.SIM_WINDOWS
    trace: bool = False
    capture3: bool = False   # three users: at most one packet decoded per slot

    def __post_init__(self):
        n = self.n_users
        if not isinstance(self.channel, (ChannelParams, ChannelParams3)) or self.channel.n_users != n:
            raise InvalidParameterError(f"channel table does not describe {n} users")
        if self.policy.n_users != n:
            raise InvalidParameterError(f"policy does not describe {n} users")
        object.__setattr__(self, "lams", tuple(float(x) for x in self.lams))
        if any(x < 0 for x in self.lams):
            raise InvalidParameterError("arrival rates must be >= 0")
        if not self.slots > self.warmup >= 0:
            raise InvalidParameterError(f"need slots > warmup >= 0 (slots={self.slots}, warmup={self.warmup})")
        if self.arrivals not in ARRIVALS:
            raise InvalidParameterError(f"arrivals must be one of {ARRIVALS}")
        if self.arrivals == "bernoulli" and any(x > 1 for x in self.lams):
            raise InvalidParameterError("Bernoulli arrivals need lambda <= 1")
        if self.mode not in (NORMAL, DOMINANT, INTERFERING):
            raise InvalidParameterError(f"unknown simulation mode '{self.mode}'")
        if self.mode != NORMAL and self.mode_user not in range(1, n + 1):
            raise InvalidParameterError(f"mode {self.mode} needs a user in 1..{n}")
        if not 2 <= self.windows <= self.slots - self.warmup:
            raise InvalidParameterError("need 2 <= windows <= measured slots")

    @property
    def n_users(self):
        return len(self.lams)

    def with_seed(self, seed):
        return SimConfig(**{**self.__dict__, "seed": seed})


@dataclass
class SimStats:
    slots: int
    mean_queue: tuple
    mean_delay: tuple
    served: tuple
    arrived: tuple
    departed: tuple
    final_queue: tuple
    occupancy: dict       # busy pattern (tuple of 0/1 per user) -> fraction of slots
    tx_counts: dict       # transmitting set -> slot count
    success_rates: dict   # transmitting set -> per-user success frequency
    drift: str
    ci_queue: tuple
    ci_delay: tuple
    window_means: np.ndarray = field(repr=False, default=None)
    delay_counts: list = field(repr=False, default=None)  # per user: bincount of integer delays
    trace: np.ndarray = field(repr=False, default=None)

    def both_empty(self):
        return self.occupancy.get((0,) * len(self.mean_queue), 0.0)

    def empty_fraction(self, user):
        """Fraction of slots that start with the user's queue empty."""
        return sum(v for k, v in self.occupancy.items() if k[user - 1] == 0)

    def as_dict(self):
        return {
            "slots": self.slots,
            "mean_queue": list(self.mean_queue),
            "mean_delay": list(self.mean_delay),
            "served": list(self.served),
            "arrived": list(self.arrived),
            "departed": list(self.departed),
            "final_queue": list(self.final_queue),
            "occupancy": {"".join(map(str, k)): v for k, v in self.occupancy.items()},
            "success_rates": {"".join(map(str, k)): list(v) for k, v in self.success_rates.items()},
            "drift": self.drift,
            "ci_queue": list(self.ci_queue),
            "ci_delay": list(self.ci_delay),
        }


# --- Slot loop ---

@numba.njit(cache=True, nogil=True)
def _run_chunk(q, arrivals, u_tx, u_ch, alpha, alpha_star, neighbor, thr, pair_cond, joint_pair,
               exclusive, dominant, interfering, t0, warmup, out_q, out_dep, occ, tx_count, succ_count):
    n_slots, n = arrivals.shape
    busy = np.zeros(n, np.bool_)
    for t in range(n_slots):
        for i in range(n):
            busy[i] = q[i] > 0 or i == dominant or i == interfering
            out_q[t, i] = q[i]

        mask = 0
        for i in range(n):
            if not busy[i]:
                continue
            if i == interfering:
                mask |= 1 << i
                continue
            a = alpha[i] if busy[neighbor[i]] else alpha_star[i]
            if u_tx[t, i] < a:
                mask |= 1 << i

        success = 0
        if joint_pair and mask == 3:
            first = u_ch[t, 0] < thr[0, 0, 3]
            if first:
                success |= 1
            if u_ch[t, 1] < (pair_cond[1] if first else pair_cond[0]):
                success |= 2
        elif mask:
            acc = 0.0
            for i in range(n):
                if mask & (1 << i):
                    ctx = 0
                    for j in range(n):
                        if j != i and not busy[j]:
                            ctx += 1
                    if exclusive:
                        # one uniform split over the senders: at most one decode
                        acc += thr[ctx, i, mask]
                        if u_ch[t, 0] < acc:
                            success |= 1 << i
                            break
                    elif u_ch[t, i] < thr[ctx, i, mask]:
                        success |= 1 << i

        if t0 + t >= warmup:
            pattern = 0
            for i in range(n):
                if q[i] > 0:
                    pattern |= 1 << i
            occ[pattern] += 1
            tx_count[mask] += 1
            for i in range(n):
                if success & (1 << i):
                    succ_count[i, mask] += 1

        for i in range(n):
            out_dep[t, i] = 0
            if success & (1 << i) and q[i] > 0:
                q[i] -= 1
                out_dep[t, i] = 1
            q[i] += arrivals[t, i]


def _tables(ch, n):
    """Success thresholds indexed [empty-neighbour count, user, transmitting mask]."""
    thr = np.zeros((3, n, 1 << n))
    pair_cond = np.zeros(2)
    if n == 2:
        for i in range(2):
            thr[0, i, 1 << i] = ch.p[i]
            thr[1, i, 1 << i] = ch.p_tilde[i]
        first = ch.b[0] + ch.c
        thr[:, 0, 3] = first
        pair_cond[1] = ch.c / first if first > 0 else 0.0
        pair_cond[0] = ch.b[1] / (1 - first) if first < 1 else 0.0
        return thr, pair_cond
    for k in range(1, 4):
        for T in _sets_containing(k):
            mask = sum(1 << (j - 1) for j in T)
            thr[0, k - 1, mask] = ch.P(k, *T)
            if len(T) < 3:
                thr[1, k - 1, mask] = ch.Pt(k, *T)
        thr[2, k - 1, 1 << (k - 1)] = ch.Pa(k)
    return thr, pair_cond


def _streams(cfg):
    def gen(user, purpose):
        return np.random.Generator(np.random.Philox(key=cfg.seed, counter=[0, 0, user, purpose]))

    return [[gen(u, p) for p in (_ARRIVAL, _TX, _CHANNEL)] for u in range(cfg.n_users)]


def _draw_arrivals(rng, lam, size, law):
    if lam == 0:
        return np.zeros(size, dtype=np.int64)
    if law == "bernoulli":
        return (rng.random(size) < lam).astype(np.int64)
    return rng.geometric(1.0 / (1.0 + lam), size).astype(np.int64) - 1


def _batch_ci(values):
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if len(values) < 2:
        return float("nan")
    return float(stats.t.ppf(0.975, len(values) - 1) * stats.sem(values))


def drift_verdict(window_means):
    """Trend of the per-window mean total queue length."""
    y = np.asarray(window_means, dtype=float)
    y = y[np.isfinite(y)]
    if np.allclose(y, y[0]):
        return "stable" if y[0] < config.DRIFT_LEVEL_CAP else "marginal"
    fit = stats.linregress(np.arange(len(y)), y)
    band = config.DRIFT_SIGMA * fit.stderr
    if fit.slope > band:
        return "unstable"
    if abs(fit.slope) <= band and y[-1] < config.DRIFT_LEVEL_CAP:
        return "stable"
    return "marginal"


def run(cfg, progress=False):
    n = cfg.n_users
    thr, pair_cond = _tables(cfg.channel, n)
    alpha = np.asarray(cfg.policy.alpha, dtype=float)
    alpha_star = np.asarray(cfg.policy.alpha_star, dtype=float)
    neighbor = np.array([(i + 1) % n for i in range(n)], dtype=np.int64)
    dominant = cfg.mode_user - 1 if cfg.mode == DOMINANT else -1
    interfering = cfg.mode_user - 1 if cfg.mode == INTERFERING else -1
    streams = _streams(cfg)

    q = np.zeros(n, dtype=np.int64)
    occ = np.zeros(1 << n, dtype=np.int64)
    tx_count = np.zeros(1 << n, dtype=np.int64)
    succ_count = np.zeros((n, 1 << n), dtype=np.int64)
    measured = cfg.slots - cfg.warmup
    win_size = max(1, -(-measured // cfg.windows))
    win_queue = np.zeros((cfg.windows, n))
    win_slots = np.zeros(cfg.windows)
    win_delay = np.zeros((cfg.windows, n))
    win_served = np.zeros((cfg.windows, n))
    pending = [np.zeros(0, dtype=np.int64) for _ in range(n)]
    delay_counts = [np.zeros(1, dtype=np.int64) for _ in range(n)]
    arrived = np.zeros(n, dtype=np.int64)
    departed = np.zeros(n, dtype=np.int64)
    traces = []

    logger.info(f"[Sim] {n} users, lambda={cfg.lams}, {cfg.slots} slots, mode={cfg.mode}"
                f"{'' if cfg.mode_user is None else ':' + str(cfg.mode_user)}, seed={cfg.seed}")
    t0 = 0
    while t0 < cfg.slots:
        size = min(config.SIM_CHUNK, cfg.slots - t0)
        arrivals = np.empty((size, n), dtype=np.int64)
        u_tx = np.empty((size, n))
        u_ch = np.empty((size, n))
        for i in range(n):
            a_rng, t_rng, c_rng = streams[i]
            arrivals[:, i] = _draw_arrivals(a_rng, cfg.lams[i], size, cfg.arrivals)
            u_tx[:, i] = t_rng.random(size)
            u_ch[:, i] = c_rng.random(size)
        if interfering >= 0:
            arrivals[:, interfering] = 0
        out_q = np.empty((size, n), dtype=np.int64)
        out_dep = np.empty((size, n), dtype=np.int64)
        _run_chunk(q, arrivals, u_tx, u_ch, alpha, alpha_star, neighbor, thr, pair_cond, n == 2,
                   cfg.capture3, dominant, interfering, t0, cfg.warmup, out_q, out_dep, occ, tx_count, succ_count)

        slot_ids = np.arange(t0, t0 + size, dtype=np.int64)
        counted = slot_ids >= cfg.warmup
        win = np.minimum((slot_ids[counted] - cfg.warmup) // win_size, cfg.windows - 1)
        win_slots += np.bincount(win, minlength=cfg.windows)
        for i in range(n):
            arrived[i] += arrivals[:, i].sum()
            departed[i] += out_dep[:, i].sum()
            win_queue[:, i] += np.bincount(win, weights=out_q[counted, i], minlength=cfg.windows)

            # FIFO: the k-th departure carries the k-th queued arrival.
            queue = np.concatenate((pending[i], np.repeat(slot_ids, arrivals[:, i])))
            leave = slot_ids[out_dep[:, i] == 1]
            delays = leave - queue[:len(leave)]
            pending[i] = queue[len(leave):]
            keep = leave >= cfg.warmup
            if np.any(keep):
                d = delays[keep]
                w = np.minimum((leave[keep] - cfg.warmup) // win_size, cfg.windows - 1)
                win_delay[:, i] += np.bincount(w, weights=d, minlength=cfg.windows)
                win_served[:, i] += np.bincount(w, minlength=cfg.windows)
                counts = np.bincount(d)
                if len(counts) > len(delay_counts[i]):
                    counts[:len(delay_counts[i])] += delay_counts[i]
                    delay_counts[i] = counts
                else:
                    delay_counts[i][:len(counts)] += counts
        if cfg.trace:
            traces.append(out_q)
        t0 += size
        if progress:
            sys.stdout.write(f"\r [Sim] {t0:>12,} / {cfg.slots:,} slots")
            sys.stdout.flush()
    if progress:
        sys.stdout.write("\n")

    served = win_served.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_delay = tuple(float(x) for x in win_delay.sum(axis=0) / served)
        queue_means = win_queue / win_slots[:, None]
        delay_means = win_delay / win_served
    mean_queue = tuple(float(x) for x in win_queue.sum(axis=0) / measured)
    occupancy = {tuple((m >> i) & 1 for i in range(n)): occ[m] / measured for m in range(1 << n)}
    success_rates = {}
    for m in range(1, 1 << n):
        if tx_count[m]:
            key = tuple((m >> i) & 1 for i in range(n))
            success_rates[key] = tuple(succ_count[i, m] / tx_count[m] for i in range(n))
    totals = queue_means.sum(axis=1)
    verdict = drift_verdict(totals)
    stats_out = SimStats(
        slots=cfg.slots,
        mean_queue=mean_queue,
        mean_delay=mean_delay,
        served=tuple(int(x) for x in served),
        arrived=tuple(int(x) for x in arrived),
        departed=tuple(int(x) for x in departed),
        final_queue=tuple(int(x) for x in q),
        occupancy=occupancy,
        tx_counts={tuple((m >> i) & 1 for i in range(n)): int(tx_count[m]) for m in range(1 << n)},
        success_rates=success_rates,
        drift=verdict,
        ci_queue=tuple(_batch_ci(queue_means[:, i]) for i in range(n)),
        ci_delay=tuple(_batch_ci(delay_means[:, i]) for i in range(n)),
        window_means=totals,
        delay_counts=delay_counts,
        trace=np.concatenate(traces) if cfg.trace else None,
    )
    logger.info(f"[Sim] done: mean queue {tuple(round(x, 4) for x in mean_queue)}, "
                f"mean delay {tuple(round(x, 4) for x in mean_delay)}, drift {verdict}")
    return stats_out


def drift_test(cfg, windows=None):
    if windows is not None:
        if windows < 10:
            raise InvalidParameterError("drift test needs at least 10 windows")
        cfg = SimConfig(**{**cfg.__dict__, "windows": windows})
    return run(cfg).drift


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: list    # per user

    def mean(self, user):
        """Exact mean for unit bins."""
        c = self.counts[user - 1]
        return float(np.dot(self.edges[:-1], c) / c.sum()) if c.sum() else float("nan")


def delay_distribution(stats_or_cfg, bin_width=config.HIST_BIN):
    stats_out = stats_or_cfg if isinstance(stats_or_cfg, SimStats) else run(stats_or_cfg)
    if bin_width < 1:
        raise InvalidParameterError("bin width must be >= 1 slot")
    top = max(len(c) for c in stats_out.delay_counts)
    n_bins = -(-top // bin_width)
    edges = np.arange(n_bins + 1) * bin_width
    counts = []
    for c in stats_out.delay_counts:
        padded = np.zeros(n_bins * bin_width, dtype=np.int64)
        padded[:len(c)] = c
        counts.append(padded.reshape(n_bins, bin_width).sum(axis=1))
    return Histogram(edges=edges, counts=counts)


def delay_samples(stats_out, user):
    c = stats_out.delay_counts[user - 1]
    return np.repeat(np.arange(len(c)), c)


def compare_delays(stats_out, i=1, j=2):
    """Two-sample KS test between the delay samples of two users."""
    return stats.ks_2samp(delay_samples(stats_out, i), delay_samples(stats_out, j))


def run_replications(cfg, seeds, threads=None):
    return run_pool(run, [(cfg.with_seed(s),) for s in seeds], threads=threads, label="Sim")
