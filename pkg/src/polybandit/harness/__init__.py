"""Experiment orchestration: configs, seeded runs, sweeps, reports, CLI."""
from ..trace import RegretTrace
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .report import report
from .runners import ALGORITHMS, run_config
from .sweep import SweepResult, fit_loglog, sweep


def run(config, seed=None) -> RegretTrace:
    """Run a config (object, mapping or YAML path) for one seed; writes the CSV if output is set."""
    if isinstance(config, dict):
        config = parse_config(config)
    elif not isinstance(config, ExperimentConfig):
        config = load_config(config)
    seed = config.seeds[0] if seed is None else seed
    tr = run_config(config, seed)
    if config.output:
        tr.to_csv(config.output.format(seed=seed))
    return tr


__all__ = ["run", "sweep", "report", "fit_loglog", "ExperimentConfig", "ConfigError", "RegretTrace",
           "SweepResult", "ALGORITHMS", "load_config", "parse_config", "run_config"]
