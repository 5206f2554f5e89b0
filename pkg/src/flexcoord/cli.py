"""Command-line entry points: run the matrix, check a config, dump a schedule."""
from __future__ import annotations

from pathlib import Path

import click

from .config import ScenarioConfig, load_config, save_config, validate_config
from .harness import dump_schedule, run_matrix, schedule_frame


def _read_config(path: str | None) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    return load_config(path)


def _parse_list(raw: str | None, conv):
    if raw is None:
        return None
    return tuple(conv(part.strip()) for part in raw.split(",") if part.strip())


@click.group()
def main() -> None:
    """Local-flexibility coordination experiments."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="YAML run configuration; defaults apply if omitted.")
@click.option("--seed", type=int, default=None, help="Override the matrix seed.")
@click.option("--out", "out_dir", type=click.Path(), default="outputs",
              show_default=True, help="Output directory.")
@click.option("--strategies", default=None,
              help="Comma-separated strategy acronyms, e.g. TE,MO.")
@click.option("--agents", default=None,
              help="Comma-separated agent counts, e.g. 1,5,10.")
@click.option("--workers", type=int, default=None,
              help="Parallel worker processes for matrix cells.")
def run(config_path, seed, out_dir, strategies, agents, workers) -> None:
    """Train the full scenario matrix and write results CSVs."""
    config = _read_config(config_path)
    table = run_matrix(
        config, out_dir=out_dir,
        strategies=_parse_list(strategies, str),
        agent_counts=_parse_list(agents, int),
        workers=workers, seed=seed,
    )
    click.echo(f"wrote {len(table.rows)} epoch rows to {out_dir}/results.csv")
    for row in table.aggregates:
        click.echo(
            f"  {row['strategy']:>2} n={row['n_agents']:<3} "
            f"median {row['median_savings_p']:+.3f} p/agent/h "
            f"[{row['p25_savings_p']:+.3f}, {row['p75_savings_p']:+.3f}]")
    if table.failures:
        click.echo(f"{len(table.failures)} cell(s) failed; see failures.csv", err=True)
        raise SystemExit(1)


@main.command("validate-config")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
def validate_config_cmd(config_path) -> None:
    """Parse and validate a config file, printing the resolved values."""
    try:
        config = load_config(config_path)
        validate_config(config)
    except ValueError as exc:
        click.echo(f"invalid config: {exc}", err=True)
        raise SystemExit(1)
    m = config.matrix
    click.echo("config ok")
    click.echo(f"  strategies: {', '.join(m.strategies)}")
    click.echo(f"  agent counts: {', '.join(str(n) for n in m.agent_counts)}")
    click.echo(f"  repetitions: {m.repetitions}, epochs: {config.learning.epochs}, "
               f"seed: {m.seed}")


@main.command("dump-schedule")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--agents", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default="schedule.csv",
              show_default=True)
def dump_schedule_cmd(config_path, agents, seed, out_path) -> None:
    """Solve one day-ahead program and write the schedule as CSV."""
    config = _read_config(config_path)
    days, schedule = dump_schedule(config, agents, seed=seed)
    frame = schedule_frame(days, schedule)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_path, index=False)
    click.echo(f"objective {schedule.objective:.6f}, reward {schedule.total.reward:.6f}")
    click.echo(f"wrote {len(frame)} rows to {out_path}")


@main.command("dump-default-config")
@click.option("--out", "out_path", type=click.Path(), default="config.yaml",
              show_default=True)
def dump_default_config_cmd(out_path) -> None:
    """Write the built-in defaults as an editable YAML config."""
    save_config(ScenarioConfig(), out_path)
    click.echo(f"wrote defaults to {out_path}")


if __name__ == "__main__":
    main()
