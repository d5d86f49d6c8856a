import os
import sys
import json
import logging
import argparse
import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from aloha_mpr import bvp, config, report, simulator, symmetric, validate
from aloha_mpr.channel import ChannelParams, Policy, preset, preset3
from aloha_mpr.conformal import solve_theodorsen
from aloha_mpr.errors import AlohaMprError, DegenerateError, InconsistentParametersError, InstabilityError, InvalidParameterError
from aloha_mpr.kernel import KernelCoeffs, branch_points, contour_L, contour_M
from aloha_mpr.stability import closure, three_user_region, two_user_region
from aloha_mpr.workers import run_pool

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
DEFAULT_GRID = "0:1:0.05"
INF = float("inf")

_BLOCKS = {
    "channel": {"preset", "users", "p", "p_tilde", "b", "c", "b3", "p_alone", "table"},
    "policy": {"alpha", "alpha_star"},
    "rates": {"lambda", "lambda1", "lambda2", "lambda3", "grid", "sweep_lambda", "sweep_alpha_star"},
    "settings": {"closure_grid", "closure_rays", "tied", "literal", "theodorsen_grid", "contour_samples",
                 "slots", "warmup", "windows", "arrivals", "mode", "capture3", "histogram_bin"},
}
_TOP = set(_BLOCKS) | {"output", "seed"}

# Reference capture system used when a config leaves a block out.
_DEFAULT_CHANNEL = {"preset": "capture", "p": 0.9, "p_tilde": 1.0, "b": 0.2, "c": 0.0}
_DEFAULT_POLICY = {"alpha": 0.6, "alpha_star": 1.0}


def parse_range(text):
    """'start:stop:step' -> inclusive grid; a single number -> one point."""
    parts = [float(v) for v in str(text).split(":")]
    if len(parts) == 1:
        return np.array(parts)
    if len(parts) != 3 or parts[2] <= 0:
        raise InvalidParameterError(f"bad range '{text}', expected start:stop:step")
    start, stop, step = parts
    if stop < start:
        return np.zeros(0)
    return np.round(np.arange(start, stop + step / 2, step), 12)


@dataclass
class ExperimentConfig:
    channel: dict = field(default_factory=dict)
    policy: dict = field(default_factory=dict)
    rates: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    output: str = None
    seed: int = 0
    path: str = None

    @classmethod
    def from_dict(cls, raw, path=None):
        if not isinstance(raw, dict):
            raise InvalidParameterError("experiment config must be a JSON object")
        unknown = set(raw) - _TOP
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        for block, allowed in _BLOCKS.items():
            extra = set(raw.get(block, {})) - allowed
            if extra:
                raise InvalidParameterError(f"unknown keys in '{block}': {sorted(extra)}")
        return cls(channel=dict(raw.get("channel", {})), policy=dict(raw.get("policy", {})),
                   rates=dict(raw.get("rates", {})), settings=dict(raw.get("settings", {})),
                   output=raw.get("output"), seed=int(raw.get("seed", 0)), path=path)

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            with open(path, encoding="utf-8") as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidParameterError(f"cannot read config: {e}") from e
        return cls.from_dict(raw, path=path)

    def as_dict(self):
        d = asdict(self)
        d.pop("path")
        return d

    def setting(self, name, default):
        return self.settings.get(name, default)

    def _channel_block(self):
        return {**_DEFAULT_CHANNEL, **self.channel} if "table" not in self.channel else self.channel

    def channel_params(self, n=2):
        block = self._channel_block()
        if n == 3:
            return preset3(block.get("preset", "capture"), p=block["p"], p_tilde=block["p_tilde"],
                           b=block.get("b", 0.0), b3=block.get("b3", 0.0), p_alone=block.get("p_alone"))
        if "table" in block:
            return ChannelParams.from_table(block["table"])
        return preset(block.get("preset", "capture"), p=block["p"], p_tilde=block["p_tilde"],
                      b=block.get("b", 0.0), c=block.get("c", 0.0))

    def policy_params(self, n=2):
        block = {**_DEFAULT_POLICY, **self.policy}

        def expand(value):
            return tuple(value) if isinstance(value, (list, tuple)) else (value,) * n

        return Policy(expand(block["alpha"]), expand(block["alpha_star"]))

    def symmetric_params(self, lam=None):
        block = self._channel_block()
        if "table" in block:
            raise InvalidParameterError("symmetric delay needs preset channel parameters, not a table")
        pol = {**_DEFAULT_POLICY, **self.policy}
        if isinstance(pol["alpha"], (list, tuple)) or isinstance(pol["alpha_star"], (list, tuple)):
            raise InvalidParameterError("symmetric delay needs scalar alpha and alpha_star")
        lam = self.rates.get("lambda", 0.0) if lam is None else lam
        return symmetric.SymmetricParams(alpha=pol["alpha"], alpha_star=pol["alpha_star"], p=block["p"],
                                         p_tilde=block["p_tilde"], b=block.get("b", 0.0),
                                         c=block.get("c", 0.0), lam=lam)

    def lams(self, n=2):
        common = self.rates.get("lambda")
        out = []
        for k in range(1, n + 1):
            value = self.rates.get(f"lambda{k}", common)
            if value is None:
                raise InvalidParameterError(f"config has no rate for user {k} (rates.lambda{k})")
            out.append(float(value))
        return tuple(out)

    def grid(self, n=2):
        axes_cfg = self.rates.get("grid", {})
        axes = [parse_range(axes_cfg.get(f"lambda{k}", DEFAULT_GRID)) for k in range(1, n + 1)]
        return [tuple(float(v) for v in point) for point in itertools.product(*axes)]


def _output(exp, args, name):
    path = args.output or exp.output
    if path is None:
        config.ensure_data_dir()
        path = os.path.join(config.DATA_DIR, name)
    return path


def _provenance(exp, args):
    return {**exp.as_dict(), "command": args.command}


def _with_rate_overrides(exp, args):
    for k in (1, 2, 3):
        value = getattr(args, f"lambda{k}", None)
        if value is not None:
            exp.rates[f"lambda{k}"] = value
    return exp


# --- Commands ---

def cmd_region(exp, args):
    region = two_user_region(exp.channel_params(), exp.policy_params(), literal=exp.setting("literal", False))
    rows = [(l1, l2, ";".join(region.member_of((l1, l2))), region.classify((l1, l2))) for l1, l2 in exp.grid()]
    path = _output(exp, args, "region.csv")
    report.write_csv(path, ["lambda1", "lambda2", "subregion", "stable"], rows, _provenance(exp, args), exp.seed)
    edge = region.boundary(exp.setting("closure_rays", config.CLOSURE_RAYS))
    stem, ext = os.path.splitext(path)
    report.write_csv(f"{stem}_boundary{ext or '.csv'}", ["lambda1", "lambda2"], [tuple(p) for p in edge],
                     _provenance(exp, args), exp.seed)
    shape = region.convexity.value if region.convexity else "undefined"
    print(f" [Region] {len(rows)} grid points, region is {shape} -> {path}")
    return 0


def _classify3(region, lams):
    try:
        return ";".join(region.member_of(lams)), region.classify(lams)
    except DegenerateError as e:
        logger.warning(f"[Region3] {lams}: {e}")
        return "", "degenerate"


def cmd_region3(exp, args):
    region = three_user_region(exp.channel_params(3), exp.policy_params(3),
                               n_grid=exp.setting("theodorsen_grid", config.THEODORSEN_GRID))
    points = exp.grid(3)
    results = run_pool(_classify3, [(region, p) for p in points], threads=args.threads, label="Region3",
                       progress=True)
    rows = [(*p, member, status) for p, (member, status) in zip(points, results)]
    path = _output(exp, args, "region3.csv")
    report.write_csv(path, ["lambda1", "lambda2", "lambda3", "subregion", "stable"], rows,
                     _provenance(exp, args), exp.seed)
    print(f" [Region3] {len(rows)} grid points -> {path}")
    return 0


def cmd_closure(exp, args):
    ch = exp.channel_params()
    grid = exp.setting("closure_grid", config.CLOSURE_GRID)
    rays = exp.setting("closure_rays", config.CLOSURE_RAYS)
    full = closure(ch, grid=grid, rays=rays, threads=args.threads)
    tied = closure(ch, grid=grid, rays=rays, tied=True, threads=args.threads)
    rows = []
    for n, theta in enumerate(full.angles):
        (x, y), (tx, ty) = full.points[n], tied.points[n]
        rows.append((float(theta), float(x), float(y), float(tx), float(ty),
                     bool(tied.radius[n] <= full.radius[n] + 1e-12), *(float(a) for a in full.policies[n])))
    path = _output(exp, args, "closure.csv")
    header = ["angle", "lambda1", "lambda2", "tied_lambda1", "tied_lambda2", "contained",
              "alpha1", "alpha2", "alpha1_star", "alpha2_star"]
    report.write_csv(path, header, rows, _provenance(exp, args), exp.seed)
    print(f" [Closure] {rays} rays, grid {grid} -> {path}")
    return 0


def _kernel_coeffs(exp):
    l1, l2 = exp.lams()
    return KernelCoeffs.from_params(exp.channel_params(), exp.policy_params(), l1, l2)


def cmd_kernel(exp, args):
    k = _kernel_coeffs(exp)
    n = exp.setting("contour_samples", config.CONTOUR_SAMPLES)
    bp = branch_points(k, strict=False)
    rows = [("branch_x", i, float(np.real(v)), float(np.imag(v))) for i, v in enumerate(bp.x)]
    rows += [("branch_y", i, float(np.real(v)), float(np.imag(v))) for i, v in enumerate(bp.y)]
    for label, contour in (("M", contour_M(k, n)), ("L", contour_L(k, n))):
        rows += [(label, i, float(v.real), float(v.imag)) for i, v in enumerate(contour.points)]
    path = _output(exp, args, "kernel.csv")
    report.write_csv(path, ["curve", "index", "re", "im"], rows, _provenance(exp, args), exp.seed)
    print(f" [Kernel] branch points x={np.round(bp.x, 6)} y={np.round(bp.y, 6)} -> {path}")
    return 0


def cmd_conformal_diag(exp, args):
    k = _kernel_coeffs(exp)
    n = exp.setting("contour_samples", config.CONTOUR_SAMPLES)
    contour = contour_L(k, n) if args.curve == "L" else contour_M(k, n)
    cmap = solve_theodorsen(contour, n_grid=exp.setting("theodorsen_grid", config.THEODORSEN_GRID))
    boundary = cmap.boundary()
    rows = [(float(f), float(p), float(abs(b)), float(b.real), float(b.imag))
            for f, p, b in zip(cmap.phi, cmap.psi, boundary)]
    path = _output(exp, args, f"conformal_{args.curve}.csv")
    report.write_csv(path, ["phi", "psi", "radius", "gamma0_re", "gamma0_im"], rows, _provenance(exp, args), exp.seed)
    print(f" [Theo] {cmap.iterations} iterations, residual {cmap.residual:.2e}, "
          f"symmetry residual {cmap.symmetry_residual:.2e} -> {path}")
    return 0


def _delay_row(ch, pol, lams, n_grid):
    try:
        rep = bvp.mean_delay(ch, pol, lams, n_grid=n_grid)
    except InstabilityError:
        return (*lams, INF, INF, INF, INF, "unstable", "", "")
    except InconsistentParametersError as e:
        logger.info(f"[BVP] {lams}: {e}")
        return (*lams, INF, INF, INF, INF, "inconsistent", "", "")
    return (*lams, *rep.M, *rep.D, rep.extra["regime"], rep.extra["chi"], ";".join(map(str, rep.extra["r"])))


def cmd_delay_bvp(exp, args):
    ch, pol = exp.channel_params(), exp.policy_params()
    n_grid = exp.setting("theodorsen_grid", config.THEODORSEN_GRID)
    if args.sweep:
        points = exp.grid()
        rows = run_pool(_delay_row, [(ch, pol, p, n_grid) for p in points], threads=args.threads,
                        label="BVP", progress=True)
        path = _output(exp, args, "delay_bvp.csv")
        header = ["lambda1", "lambda2", "M1", "M2", "D1", "D2", "regime", "chi", "r"]
        report.write_csv(path, header, rows, _provenance(exp, args), exp.seed)
        print(f" [BVP] {len(rows)} rate pairs -> {path}")
        return 0
    rep = bvp.mean_delay(ch, pol, exp.lams(), n_grid=n_grid)
    path = _output(exp, args, "delay_bvp.json")
    report.write_json(path, {"delay": rep.as_dict()}, _provenance(exp, args), exp.seed)
    print(f" [BVP] D = {rep.D} ({rep.extra['regime']}) -> {path}")
    return 0


def _channel_variants(sp):
    variants = [("collision", 0.0, 0.0)]
    if sp.b > 0:
        variants.append(("capture", sp.b, 0.0))
    if sp.c > 0:
        variants.append(("mpr", sp.b, sp.c))
    return variants


def _symmetric_pair(sp):
    try:
        if sp.c > 0:
            return symmetric.delay_bounds_mpr(sp)
        d = symmetric.delay_capture(sp)
        return d, d
    except InstabilityError:
        return INF, INF


def cmd_delay_symmetric(exp, args):
    base = exp.symmetric_params()
    if args.sweep_lambda or args.sweep_alpha_star:
        rows = []
        by_alpha = args.sweep_alpha_star is not None
        values = parse_range(args.sweep_alpha_star if by_alpha else args.sweep_lambda)
        for label, b, c in _channel_variants(base):
            for v in values:
                fields = asdict(base) | {"b": b, "c": c, ("alpha_star" if by_alpha else "lam"): float(v)}
                low, up = _symmetric_pair(symmetric.SymmetricParams(**fields))
                rows.append((float(v), low, up, label))
        path = _output(exp, args, "delay_symmetric.csv")
        header = ["alpha_star" if by_alpha else "lambda", "D_exact_or_low", "D_up", "channel"]
        report.write_csv(path, header, rows, _provenance(exp, args), exp.seed)
        print(f" [Sym] {len(rows)} rows -> {path}")
        return 0
    rep = symmetric.delay(base)
    path = _output(exp, args, "delay_symmetric.json")
    report.write_json(path, {"delay": rep.as_dict()}, _provenance(exp, args), exp.seed)
    print(f" [Sym] D = {rep.D} -> {path}")
    return 0


def cmd_optimize_alpha(exp, args):
    sp = exp.symmetric_params()
    best = symmetric.optimal_alpha(sp)
    path = _output(exp, args, "optimal_alpha.json")
    report.write_json(path, asdict(best), _provenance(exp, args), exp.seed)
    print(f" [Sym] alpha~ = {best.alpha_tilde:.6g} ({best.branch}, feasible={best.feasible}) -> {path}")
    return 0


def _sim_config(exp, args):
    n = 3 if "lambda3" in exp.rates else 2
    mode, user = simulator.parse_mode(args.mode or exp.setting("mode", simulator.NORMAL))
    slots = args.slots or exp.setting("slots", config.SIM_SLOTS)
    return simulator.SimConfig(
        channel=exp.channel_params(n), policy=exp.policy_params(n), lams=exp.lams(n), slots=slots,
        warmup=exp.setting("warmup", min(config.SIM_WARMUP, slots // 10)), seed=exp.seed, mode=mode,
        mode_user=user, arrivals=exp.setting("arrivals", "geometric"),
        windows=exp.setting("windows", config.SIM_WINDOWS), capture3=exp.setting("capture3", False),
    )


def cmd_simulate(exp, args):
    cfg = _sim_config(exp, args)
    stats_out = simulator.run(cfg, progress=True)
    path = _output(exp, args, "simulate.json")
    report.write_json(path, {"stats": stats_out.as_dict()}, _provenance(exp, args), exp.seed)
    if args.histogram:
        hist = simulator.delay_distribution(stats_out, exp.setting("histogram_bin", config.HIST_BIN))
        rows = [(int(hist.edges[i]), int(hist.edges[i + 1]), *(int(c[i]) for c in hist.counts))
                for i in range(len(hist.edges) - 1)]
        header = ["bin_start", "bin_end"] + [f"count{u}" for u in range(1, cfg.n_users + 1)]
        report.write_csv(args.histogram, header, rows, _provenance(exp, args), exp.seed)
    print(f" [Sim] mean delay {tuple(round(d, 4) for d in stats_out.mean_delay)}, drift {stats_out.drift} -> {path}")
    return 0


def cmd_validate(exp, args):
    settings = validate.ValidationSettings(
        slots=args.slots or exp.setting("slots", config.VALIDATE_SLOTS),
        seed=exp.seed,
        threads=args.threads,
        sim_channel=exp.channel_params() if exp.channel else None,
        only=tuple(args.only) if args.only else None,
    )
    result = validate.run_suite(settings)
    path = _output(exp, args, "validate.json")
    report.write_json(path, result.as_dict(), _provenance(exp, args), exp.seed)
    for c in result.checks:
        if c.status != validate.PASS:
            print(f" [{c.status.upper()}] {c.name}: measured {c.measured}, expected {c.expected} ({c.detail})")
    print(f" [Validate] {result.summary} -> {path}")
    return 0 if result.passed else 1


COMMANDS = {
    "region": cmd_region,
    "region3": cmd_region3,
    "closure": cmd_closure,
    "kernel": cmd_kernel,
    "conformal-diag": cmd_conformal_diag,
    "delay-bvp": cmd_delay_bvp,
    "delay-symmetric": cmd_delay_symmetric,
    "optimize-alpha": cmd_optimize_alpha,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def _global_flags(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=default(None), help="experiment config (JSON)")
    parser.add_argument("--output", default=default(None), help="output file (CSV or JSON by command)")
    parser.add_argument("--seed", type=int, default=default(None), help="overrides the config seed")
    parser.add_argument("--threads", type=int, default=default(None), help="worker threads")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False),
                        help="also log warnings to the console")


def create_parser():
    parser = argparse.ArgumentParser(prog="aloha_mpr", description="Queue-aware MPR slotted ALOHA analysis.",
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    rates = argparse.ArgumentParser(add_help=False)
    for k in (1, 2, 3):
        rates.add_argument(f"--lambda{k}", type=float, default=None)

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("region", parents=[common], help="two-user stability region grid")
    sub.add_parser("region3", parents=[common], help="three-user stability region grid")
    sub.add_parser("closure", parents=[common], help="closure of the region over policies")
    sub.add_parser("kernel", parents=[common, rates], help="branch points and contours")
    p = sub.add_parser("conformal-diag", parents=[common, rates], help="boundary correspondence table")
    p.add_argument("--curve", choices=("M", "L"), default="M")
    p = sub.add_parser("delay-bvp", parents=[common, rates], help="delay from the boundary value problems")
    p.add_argument("--sweep", action="store_true", help="sweep the config rate grid")
    p = sub.add_parser("delay-symmetric", parents=[common], help="closed-form symmetric delay")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--sweep-lambda", help="start:stop:step")
    group.add_argument("--sweep-alpha-star", help="start:stop:step")
    sub.add_parser("optimize-alpha", parents=[common], help="delay-minimising alpha")
    p = sub.add_parser("simulate", parents=[common, rates], help="Monte Carlo simulation")
    p.add_argument("--slots", type=int, default=None)
    p.add_argument("--mode", default=None, help="normal, dominant:k or interfering:k")
    p.add_argument("--histogram", default=None, help="delay histogram CSV")
    p = sub.add_parser("validate", parents=[common], help="formula-vs-simulation oracle suite")
    p.add_argument("--slots", type=int, default=None)
    p.add_argument("--only", nargs="+", choices=sorted(validate.CHECKS), default=None)
    return parser


def main(argv=None):
    args = create_parser().parse_args(argv)
    config.setup_logging(console=args.verbose)
    try:
        exp = ExperimentConfig.load(args.config)
        if args.seed is not None:
            exp.seed = args.seed
        _with_rate_overrides(exp, args)
        logger.info(f"[CLI] {args.command} config={args.config} seed={exp.seed}")
        return COMMANDS[args.command](exp, args)
    except AlohaMprError as e:
        logger.error(f"[CLI] {args.command} failed: {e}", exc_info=True)
        print(f"[ERROR] {args.config or '<defaults>'}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
