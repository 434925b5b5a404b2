"""Command-line entry points and experiment persistence.

Usage: ``poisonlens <experiment> [--config FILE] [--set key=value]...``
where the experiment is one of cluster-sweep, mnist-stepwise, fisher-flow,
filter-probe, verify-all.  Parameters resolve as defaults < config file <
--set overrides.  Results land in ``--output-dir`` (default from
POISONLENS_OUTPUT_DIR, falling back to ./poisonlens_results) as a CSV plus a
JSON sidecar carrying the config hash; nothing is written outside that
directory.
"""

from __future__ import annotations

import datetime
import json
import os
import sys
from dataclasses import dataclass, field
from importlib.metadata import version
from pathlib import Path

import click

from .exceptions import InvalidConfig
from .experiments import DEFAULTS, RUNNERS
from .io import ResultsTable, config_hash

OUTPUT_ENV = "POISONLENS_OUTPUT_DIR"
FALLBACK_OUTPUT = "poisonlens_results"


@dataclass
class ExperimentConfig:
    """Fully resolved experiment name, parameters, and output directory."""

    experiment: str
    parameters: dict = field(default_factory=dict)
    output_dir: Path = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.experiment not in RUNNERS:
            raise InvalidConfig(
                f"unknown experiment {self.experiment!r}; "
                f"choose from {sorted(RUNNERS)}"
            )
        if self.output_dir is None:
            self.output_dir = Path(os.environ.get(OUTPUT_ENV, FALLBACK_OUTPUT))
        self.output_dir = Path(self.output_dir)


def resolve_config(experiment: str, config_file: str | None,
                   overrides: tuple[str, ...], output_dir: str | None
                   ) -> ExperimentConfig:
    """Merge defaults, an optional JSON config file, and --set overrides."""
    params: dict = {}
    file_output = None
    if config_file:
        with open(config_file) as f:
            payload = json.load(f)
        file_experiment = payload.get("experiment", experiment)
        if file_experiment != experiment:
            raise InvalidConfig(
                f"config file is for {file_experiment!r}, not {experiment!r}"
            )
        params.update(payload.get("parameters", {}))
        file_output = payload.get("output_dir")
    for item in overrides:
        if "=" not in item:
            raise InvalidConfig(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            params[key] = json.loads(raw)
        except json.JSONDecodeError:
            params[key] = raw
    return ExperimentConfig(
        experiment=experiment,
        parameters=params,
        output_dir=output_dir or file_output,
    )


def run(config: ExperimentConfig) -> ResultsTable:
    """Dispatch an experiment and persist its results table.

    Writes ``<experiment>.csv`` and ``<experiment>.meta.json`` into the
    output directory and returns the table.  Reruns with an identical config
    produce byte-identical CSV files.
    """
    runner = RUNNERS[config.experiment]
    defaults = DEFAULTS[config.experiment]
    unknown = set(config.parameters) - set(defaults)
    if unknown:
        raise InvalidConfig(
            f"unknown parameters for {config.experiment}: {sorted(unknown)}"
        )
    resolved = dict(defaults)
    resolved.update(config.parameters)
    digest = config_hash(config.experiment, resolved)

    config.output_dir.mkdir(parents=True, exist_ok=True)
    schema, rows = runner(resolved, config.output_dir)
    # Timestamp lives in the sidecar only; the CSV stays a pure function of
    # the config so reruns are byte-identical.
    table = ResultsTable(
        schema=["config_hash"] + schema,
        metadata={
            "experiment": config.experiment,
            "parameters": resolved,
            "config_hash": digest,
            "artifact_version": version("poisonlens"),
            "created_at": datetime.datetime.now(datetime.timezone.utc)
                          .isoformat(timespec="seconds"),
            "n_rows": len(rows),
        },
    )
    for row in rows:
        table.append({"config_hash": digest, **row})
    table.to_csv(config.output_dir / f"{config.experiment}.csv")
    table.write_sidecar(config.output_dir / f"{config.experiment}.meta.json")
    return table


def _execute(experiment: str, config_file, overrides, output_dir) -> None:
    try:
        cfg = resolve_config(experiment, config_file, overrides, output_dir)
        table = run(cfg)
    except (InvalidConfig, OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"wrote {len(table.rows)} rows to "
               f"{cfg.output_dir / (experiment + '.csv')}")
    if experiment == "verify_all":
        failed = [row for row in table.rows if row["status"] != "PASS"]
        for row in table.rows:
            click.echo(f"{row['check']}: {row['status']} ({row['detail']})")
        click.echo("FAIL" if failed else "PASS")
        if failed:
            sys.exit(1)


def _experiment_command(name: str, experiment: str, help_text: str):
    @click.command(name=name, help=help_text)
    @click.option("--config", "config_file", type=click.Path(exists=True),
                  default=None, help="JSON config file.")
    @click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                  help="Override one parameter; repeatable; wins over the file.")
    @click.option("--output-dir", default=None,
                  help=f"Output directory (default ${OUTPUT_ENV} or "
                       f"./{FALLBACK_OUTPUT}).")
    def command(config_file, overrides, output_dir):
        _execute(experiment, config_file, overrides, output_dir)

    return command


@click.group()
def main():
    """Poison-law verification and spectral backdoor detection experiments."""


main.add_command(_experiment_command(
    "cluster-sweep", "cluster_sweep",
    "Theta x kappa sweep of cloned-cluster poisoning on kernel ridge regression.",
))
main.add_command(_experiment_command(
    "mnist-stepwise", "mnist_stepwise",
    "Square-trigger poisoning of one-hot linear regression on MNIST-format data.",
))
main.add_command(_experiment_command(
    "fisher-flow", "fisher_flow",
    "Directional Fisher energies under penalty-only gradient flow.",
))
main.add_command(_experiment_command(
    "filter-probe", "filter_probe",
    "Modewise response curves and effective-length-scale fits.",
))


@click.command(name="verify-all",
               help="Run every closed-form identity check and report PASS/FAIL.")
@click.option("--seed", type=int, default=None, help="Seed for the check suite.")
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--output-dir", default=None)
def verify_all(seed, config_file, overrides, output_dir):
    if seed is not None:
        overrides = tuple(overrides) + (f"seed={seed}",)
    _execute("verify_all", config_file, overrides, output_dir)


main.add_command(verify_all)


if __name__ == "__main__":
    main()
