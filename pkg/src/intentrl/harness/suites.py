"""Canned experiment suites backing the desk-scale acceptance checks."""
from __future__ import annotations

import os
from dataclasses import replace

from ..errors import ConfigError
from .config import RunConfig, apply_assignments
from .experiments import default_config
from .runner import RunRecord, run

SUITES = {
    "prediction": ("td_prediction", "ablation_constant", "ablation_naive"),
    "control": ("q_control",),
    "bandit": ("pg_bandit",),
    "actor_critic": ("ac_control",),
    "fidelity": ("fidelity",),
    "flops": ("flops",),
    "bias": ("bias_demo",),
}

# diagnostics keys worth echoing on the console for each experiment
HEADLINE = {
    "td_prediction": ("final_metric",),
    "ablation_naive": ("final_metric",),
    "ablation_constant": ("tuned_alpha", "constant_degradation", "intentional_degradation"),
    "q_control": ("matching_states", "n_states"),
    "pg_bandit": ("seeds_above_0.95", "ratio_in_band_fraction"),
    "ac_control": ("final_metric",),
    "fidelity": ("policy_fidelity", "value_fidelity"),
    "flops": ("flops",),
    "bias_demo": ("bias",),
}


def suite_configs(name, seed=None, steps=None, out=None, overrides=None) -> list[RunConfig]:
    if name not in SUITES:
        raise ConfigError(f"unknown suite; choose from {sorted(SUITES)}", "suite")
    cfgs = []
    for exp in SUITES[name]:
        cfg = apply_assignments(default_config(exp), overrides or {})
        cfgs.append(adjust(cfg, seed, steps, os.path.join(out, exp) if out else None))
    return cfgs


def adjust(cfg: RunConfig, seed=None, steps=None, out=None) -> RunConfig:
    """Apply the CLI's --seed/--steps/--out shortcuts."""
    run_sec = cfg.run
    if seed is not None:
        run_sec = replace(run_sec, seeds=(int(seed),))
    if steps is not None:
        run_sec = replace(run_sec, total_steps=int(steps))
        if steps > 0 and run_sec.log_every > steps:
            run_sec = replace(run_sec, log_every=int(steps))
    if out is not None:
        run_sec = replace(run_sec, output_dir=out)
    return replace(cfg, run=run_sec)


def run_suite(name, seed=None, steps=None, out=None, overrides=None, write=True) -> list[RunRecord]:
    records = []
    for cfg in suite_configs(name, seed, steps, out, overrides):
        records.append(run(cfg, cfg.run.output_dir if write else None))
    return records


def headline(record: RunRecord) -> dict:
    keys = HEADLINE.get(record.config.experiment, ())
    return {k: record.diagnostics[k] for k in keys if k in record.diagnostics}
