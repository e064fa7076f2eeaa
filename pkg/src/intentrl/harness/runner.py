"""Seeded multi-run execution, aggregation and CSV/JSON emission."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import agents, diagnostics
from ..errors import ConfigError
from .config import RunConfig, config_to_dict
from .experiments import AGGREGATE_COLUMNS, CSV_COLUMNS, FIDELITY_BAND, SeedResult, run_seed

Z95 = 1.96


@dataclass
class RunRecord:
    config: RunConfig
    per_seed: list = field(default_factory=list)  # SeedResult
    aggregate: list = field(default_factory=list)  # dicts keyed by AGGREGATE_COLUMNS
    diagnostics: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "config": config_to_dict(self.config),
            "per_seed": [
                {"seed": r.seed, "final": r.final, "diagnostics": _public(r.diagnostics)} for r in self.per_seed
            ],
            "aggregate": self.aggregate,
            "diagnostics": self.diagnostics,
        }


def _public(d):
    return {k: v for k, v in d.items() if not k.startswith("_")}


def ci95(values):
    """(mean, low, high) with half-width 1.96 * sample std / sqrt(n); zero width for one value."""
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return None, None, None
    m = float(v.mean())
    if v.size < 2 or not np.all(np.isfinite(v)):
        half = 0.0 if v.size < 2 else math.inf
    else:
        half = Z95 * float(v.std(ddof=1)) / math.sqrt(v.size)
    return m, m - half, m + half


def aggregate_rows(results) -> list:
    n = {len(r.rows) for r in results}
    if len(n) != 1:
        raise ConfigError("seeds logged different numbers of rows", "run.log_every")
    out = []
    for i in range(n.pop()):
        steps = {r.rows[i]["step"] for r in results}
        if len(steps) != 1:
            raise ConfigError("seeds logged at different steps", "run.log_every")
        m, lo, hi = ci95([r.rows[i]["metric"] for r in results])
        out.append(dict(zip(AGGREGATE_COLUMNS, (steps.pop(), m, lo, hi))))
    return out


# ------------------------------------------------------------ emission


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header, [dict(zip(header, r)) for r in body]


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _json_clean(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None if math.isnan(o) else ("inf" if o > 0 else "-inf")
    if isinstance(o, dict):
        return {str(k): _json_clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_json_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _json_clean(o.tolist())
    if isinstance(o, (np.floating, np.integer)):
        return _json_clean(o.item())
    return o


def write_outputs(record: RunRecord, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    for r in record.per_seed:
        path = os.path.join(out_dir, f"seed_{r.seed}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(csv_text(r.rows, CSV_COLUMNS))
        files[f"seed_{r.seed}"] = path
    if record.per_seed:
        path = os.path.join(out_dir, "aggregate.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(csv_text(record.aggregate, AGGREGATE_COLUMNS))
        files["aggregate"] = path
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_clean(record.summary()), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    files["summary"] = path
    record.files = files
    return files


# ------------------------------------------------------------ execution


def _seed_job(args):
    cfg, seed = args
    return run_seed(cfg, seed)


def run_seeds(cfg: RunConfig, workers=None):
    workers = cfg.run.workers if workers is None else workers
    jobs = [(cfg, s) for s in cfg.run.seeds]
    if workers <= 1 or len(jobs) == 1:
        return [_seed_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_seed_job, jobs))


def run(cfg: RunConfig, out_dir=None, workers=None) -> RunRecord:
    """Execute every seed, aggregate, and (when ``out_dir`` is given) write CSV/JSON files."""
    t0 = time.perf_counter()
    record = RunRecord(cfg)
    exp = cfg.experiment
    if exp == "flops":
        record.diagnostics = {"flops": diagnostics.flops_model().to_dict()}
    elif exp == "bias_demo":
        record.diagnostics = {"bias": bias_summary()}
    else:
        record.per_seed = run_seeds(cfg, workers)
        record.aggregate = aggregate_rows(record.per_seed)
        record.diagnostics = experiment_diagnostics(cfg, record.per_seed)
    record.diagnostics["wall_time_s"] = time.perf_counter() - t0
    if out_dir is not None:
        write_outputs(record, out_dir)
    return record


def bias_summary():
    rep = agents.action_bias_demo()
    out = asdict(rep)
    uniform = agents.action_bias_demo(logits=(0.0, 0.0), advantages=(1.0, 0.5))
    out["equal_norm_cosine"] = uniform.cosine
    return out


# ------------------------------------------------- run-level diagnostics


def _finals(results, key):
    return [r.final.get(key) for r in results]


def experiment_diagnostics(cfg: RunConfig, results) -> dict:
    exp = cfg.experiment
    d = {"n_seeds": len(results)}
    if results and results[0].rows:
        m, lo, hi = ci95([r.rows[-1]["metric"] for r in results])
        d["final_metric"] = {"mean": m, "ci95_low": lo, "ci95_high": hi}
    if exp in ("td_prediction", "ablation_naive"):
        d["final_rmse_mean"] = float(np.mean(_finals(results, "rmse")))
    elif exp == "ablation_constant":
        d.update(_constant_baseline(cfg, results))
    elif exp == "q_control":
        matches = _finals(results, "matching_states")
        d["matching_states"] = matches
        d["n_states"] = results[0].final["n_states"]
    elif exp == "pg_bandit":
        reach = _finals(results, "first_step_above_0.95")
        d["seeds_above_0.95"] = sum(x is not None for x in reach)
        steps = sum(r.diagnostics["ratio_steps"] for r in results)
        inside = sum(r.diagnostics["ratio_in_band"] for r in results)
        d["fidelity_band"] = list(FIDELITY_BAND)
        d["ratio_steps"] = steps
        d["ratio_in_band_fraction"] = inside / steps if steps else None
    elif exp == "fidelity":
        for name in ("policy", "value"):
            ratios = np.concatenate([r.diagnostics["_ratios"][name] for r in results])
            excluded = sum(r.diagnostics[f"{name}_fidelity"]["n_excluded"] for r in results)
            d[f"{name}_fidelity"] = diagnostics.summarize(ratios, excluded).to_dict()
    return d


def _constant_baseline(cfg, results):
    alphas = [repr(a) for a in cfg.baseline.alphas]
    unscaled = {a: float(np.mean([r.diagnostics["constant"][a]["unscaled"] for r in results])) for a in alphas}
    scaled = {a: float(np.mean([r.diagnostics["constant"][a]["scaled"] for r in results])) for a in alphas}
    tuned = min(alphas, key=lambda a: unscaled[a])
    i_un = float(np.mean([r.diagnostics["intentional"]["unscaled"] for r in results]))
    i_sc = float(np.mean([r.diagnostics["intentional"]["scaled"] for r in results]))
    return {
        "feature_scale": cfg.baseline.feature_scale,
        "constant_unscaled": unscaled,
        "constant_scaled": scaled,
        "tuned_alpha": float(tuned),
        "constant_degradation": scaled[tuned] / unscaled[tuned],
        "intentional_unscaled": i_un,
        "intentional_scaled": i_sc,
        "intentional_degradation": abs(i_sc - i_un) / i_un,
    }
