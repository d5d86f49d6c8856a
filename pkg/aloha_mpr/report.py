import csv
import json
import math
import logging
from dataclasses import asdict, dataclass, field

from aloha_mpr import config
from aloha_mpr.errors import InvalidParameterError

logger = logging.getLogger(__name__)

SOURCES = ("closed-form", "bvp", "simulation")


@dataclass
class DelayReport:
    """Per-user mean queue lengths M and delays D = M / lambda."""
    M: tuple
    D: tuple
    source: str
    bounds: tuple = None   # ((lower, upper), ...) per user when only bounds are known
    ci: tuple = None       # ((low, high), ...) per user for simulation estimates
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise InvalidParameterError(f"unknown delay source {self.source!r}")

    def as_dict(self):
        return asdict(self)


def delay_from_length(M, lams):
    return tuple(m / lam if lam > 0 else float("nan") for m, lam in zip(M, lams))


def _cell(value):
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return repr(value)
    return value


def provenance(cfg, seed=None):
    return {"config_hash": config.config_hash(cfg), "seed": seed}


def write_csv(path, header, rows, cfg, seed=None):
    """CSV with a leading '# config_hash=... seed=...' comment line."""
    meta = provenance(cfg, seed)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# config_hash={meta['config_hash']} seed={meta['seed']}\n")
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    logger.info(f"[Out] {len(rows)} rows -> {path}")


def read_csv(path):
    """Returns (meta, header, rows) for a file produced by write_csv."""
    with open(path, encoding="utf-8") as f:
        first = f.readline().lstrip("# ").split()
        meta = dict(item.split("=", 1) for item in first)
        reader = csv.reader(f)
        header = next(reader)
        rows = [row for row in reader]
    return meta, header, rows


def write_json(path, payload, cfg, seed=None):
    doc = {"meta": provenance(cfg, seed), **payload}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, default=_json_default)
    logger.info(f"[Out] json -> {path}")


def _json_default(value):
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if hasattr(value, "value"):
        return value.value
    return str(value)
