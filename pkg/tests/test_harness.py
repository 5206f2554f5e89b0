"""Matrix execution, aggregation, outputs, and the CLI surface."""
from __future__ import annotations

import dataclasses

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from flexcoord.cli import main
from flexcoord.config import ScenarioConfig, save_config
from flexcoord.env import baseline_day, validate_day
from flexcoord.harness import (
    ResultsTable,
    build_scenario,
    cell_seed,
    cost_breakdown_report,
    dump_schedule,
    final_epoch_means,
    run_cell,
    run_matrix,
    schedule_frame,
)


def small_config(epochs=2, strategies=("TE",), agent_counts=(2,),
                 repetitions=1, seed=11, workers=1):
    base = ScenarioConfig()
    return dataclasses.replace(
        base,
        learning=dataclasses.replace(base.learning, epochs=epochs),
        matrix=dataclasses.replace(base.matrix, strategies=strategies,
                                   agent_counts=agent_counts,
                                   repetitions=repetitions, seed=seed,
                                   workers=workers),
    )


# ---------------------------------------------------------------- scenarios

def test_scenario_sampling_is_deterministic():
    cfg = small_config()
    first = build_scenario(cfg, 3)
    second = build_scenario(cfg, 3)
    days_a, grid_a = first.sample(np.random.default_rng(5))
    days_b, grid_b = second.sample(np.random.default_rng(5))
    assert np.array_equal(grid_a.import_cost, grid_b.import_cost)
    for da, db in zip(days_a, days_b):
        assert np.array_equal(da.profile.household_demand,
                              db.profile.household_demand)
        assert np.array_equal(da.profile.ev_demand, db.profile.ev_demand)
        assert np.array_equal(da.profile.ev_at_home, db.profile.ev_at_home)
    days_c, _ = second.sample(np.random.default_rng(6))
    assert not np.array_equal(days_a[0].profile.household_demand,
                              days_c[0].profile.household_demand)


def test_sampled_days_are_simulatable():
    scenario = build_scenario(small_config(), 4)
    rng = np.random.default_rng(2)
    for _ in range(3):
        days, grid = scenario.sample(rng)
        assert len(days) == 4
        for day in days:
            prof = day.profile
            assert np.all(prof.household_demand >= 0.0)
            assert np.all(prof.ev_demand[prof.ev_at_home] == 0.0)
            assert np.isfinite(prof.external_temp).all()
        result = baseline_day(days, grid)
        validate_day(days, grid, result)


def test_cell_seeds_distinct_and_stable():
    cfg = small_config()
    seeds = {cell_seed(cfg, s, n, r)
             for s in ("TE", "MO") for n in (1, 2) for r in (0, 1)}
    assert len(seeds) == 8
    assert cell_seed(cfg, "TE", 1, 0) == cell_seed(cfg, "TE", 1, 0)
    other = small_config(seed=12)
    assert cell_seed(cfg, "TE", 1, 0) != cell_seed(other, "TE", 1, 0)


# ---------------------------------------------------------------- cells

def test_run_cell_rows_and_identity():
    cfg = small_config(epochs=3)
    cell = run_cell(cfg, "TE", 2, 0)
    assert cell.error is None
    assert len(cell.rows) == 3
    for row in cell.rows:
        assert row["strategy"] == "TE" and row["n_agents"] == 2
        # Savings decompose into the three cost deltas (all in pence).
        total = row["cg_delta"] + row["cd_delta"] + row["cs_delta"]
        assert row["savings_p_per_agent_hour"] == pytest.approx(total, abs=1e-9)
    assert {r["epoch"] for r in cell.rows} == {0, 1, 2}
    # TE is centralised: one shared table regardless of agent count.
    assert len(cell.policy_rows) == 1 * 3 * 10
    states = {(r["table"], r["state"], r["action"]) for r in cell.policy_rows}
    assert len(states) == len(cell.policy_rows)
    # A distributed strategy dumps one table per agent.
    distributed = run_cell(cfg, "TO", 2, 0)
    assert len(distributed.policy_rows) == 2 * 3 * 10


def test_run_cell_records_failures():
    cell = run_cell(small_config(), "XX", 1, 0)
    assert cell.error is not None and "acronym" in cell.error
    assert cell.rows == []


# ---------------------------------------------------------------- matrix

def test_matrix_shapes_aggregates_and_failures():
    cfg = small_config(epochs=12, strategies=("TE",), agent_counts=(1, 2),
                       repetitions=2)
    table = run_matrix(cfg, strategies=("TE", "XX"))
    assert len(table.failures) == 2 * 2  # XX fails in every cell
    assert len(table.rows) == 12 * 2 * 2
    assert len(table.aggregates) == 2
    for agg in table.aggregates:
        assert agg["repetitions"] == 2
        assert (agg["p25_savings_p"] <= agg["median_savings_p"]
                <= agg["p75_savings_p"])


def test_matrix_is_deterministic_and_worker_invariant():
    cfg = small_config(epochs=2, strategies=("TE", "TO"), agent_counts=(2,),
                       repetitions=2)
    serial = run_matrix(cfg)
    parallel = run_matrix(cfg, workers=2)
    assert serial.rows == parallel.rows
    assert serial.aggregates == parallel.aggregates
    reseeded = run_matrix(cfg, seed=99)
    assert reseeded.rows != serial.rows


def test_final_epoch_means_uses_tail_window():
    rows = [{"strategy": "TE", "n_agents": 1, "repetition": 0,
             "epoch": e, "savings_p_per_agent_hour": float(e)}
            for e in range(50)]
    means = final_epoch_means(rows)
    assert means[("TE", 1)] == [pytest.approx(np.arange(40, 50).mean())]


def test_outputs_layout_and_stability(tmp_path):
    cfg = small_config(epochs=2, strategies=("TE",), agent_counts=(1,))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    run_matrix(cfg, out_dir=out_a)
    run_matrix(cfg, out_dir=out_b)
    for name in ("results.csv", "aggregates.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    frame = pd.read_csv(out_a / "results.csv")
    assert list(frame.columns) == [
        "strategy", "repetition", "epoch", "n_agents",
        "savings_p_per_agent_hour", "cg_delta", "cd_delta", "cs_delta",
        "emissions_delta"]
    assert (out_a / "policies" / "TE_n1_rep0.csv").exists()
    assert (out_a / "schedules" / "day_ahead_n1.csv").exists()


# ---------------------------------------------------------------- reports

def make_table(rows):
    return ResultsTable(rows=rows, aggregates=[], failures=[], policy_rows=[])


def test_breakdown_signed_shares():
    rows = [{"strategy": "MO", "n_agents": 1, "repetition": 0, "epoch": 0,
             "savings_p_per_agent_hour": 100.0, "cg_delta": 50.0,
             "cd_delta": 60.0, "cs_delta": -10.0, "emissions_delta": 0.0}]
    report, = cost_breakdown_report(make_table(rows))
    assert report["basis"] == "percent_of_net_savings"
    assert report["grid_energy"] == pytest.approx(50.0)
    assert report["distribution"] == pytest.approx(60.0)
    assert report["battery"] == pytest.approx(-10.0)
    total = sum(report[k] for k in
                ("grid_energy", "emissions", "distribution", "battery"))
    assert total == pytest.approx(100.0)


def test_breakdown_zero_net_reports_absolute():
    rows = [{"strategy": "TE", "n_agents": 1, "repetition": 0, "epoch": 0,
             "savings_p_per_agent_hour": 0.0, "cg_delta": 5.0,
             "cd_delta": -5.0, "cs_delta": 0.0, "emissions_delta": 1.0}]
    report, = cost_breakdown_report(make_table(rows))
    assert report["basis"] == "absolute_p_per_agent_hour"
    assert report["grid_energy"] == pytest.approx(4.0)
    assert report["distribution"] == pytest.approx(-5.0)


def test_breakdown_shares_sum_on_real_run():
    table = run_matrix(small_config(epochs=2, strategies=("CO",)))
    report, = cost_breakdown_report(table)
    if report["basis"] == "percent_of_net_savings":
        total = sum(report[k] for k in
                    ("grid_energy", "emissions", "distribution", "battery"))
        assert total == pytest.approx(100.0, abs=1e-6)


# ---------------------------------------------------------------- schedule

def test_dump_schedule_deterministic():
    cfg = small_config()
    days_a, sched_a = dump_schedule(cfg, 2)
    days_b, sched_b = dump_schedule(cfg, 2)
    assert sched_a.objective == pytest.approx(sched_b.objective, rel=1e-9)
    frame = schedule_frame(days_a, sched_a)
    assert len(frame) == 2 * 24
    assert {"agent", "t", "charge", "discharge", "heat", "consumption",
            "net_import", "battery_level_end", "t_air"} <= set(frame.columns)


# ---------------------------------------------------------------- CLI

def test_cli_run_and_outputs(tmp_path):
    config_path = tmp_path / "config.yaml"
    save_config(small_config(epochs=2), config_path)
    runner = CliRunner()
    out_dir = tmp_path / "out"
    result = runner.invoke(main, [
        "run", "--config", str(config_path), "--out", str(out_dir),
        "--strategies", "TE", "--agents", "2"])
    assert result.exit_code == 0, result.output
    assert (out_dir / "results.csv").exists()
    assert "median" in result.output


def test_cli_validate_config(tmp_path):
    config_path = tmp_path / "config.yaml"
    save_config(ScenarioConfig(), config_path)
    runner = CliRunner()
    ok = runner.invoke(main, ["validate-config", "--config", str(config_path)])
    assert ok.exit_code == 0 and "config ok" in ok.output

    config_path.write_text("flexibility:\n  share: 2.0\n")
    bad = runner.invoke(main, ["validate-config", "--config", str(config_path)])
    assert bad.exit_code == 1
    assert "invalid config" in bad.output


def test_cli_dump_schedule(tmp_path):
    config_path = tmp_path / "config.yaml"
    save_config(small_config(), config_path)
    out_path = tmp_path / "sched.csv"
    runner = CliRunner()
    result = runner.invoke(main, [
        "dump-schedule", "--config", str(config_path), "--agents", "1",
        "--out", str(out_path)])
    assert result.exit_code == 0, result.output
    assert len(pd.read_csv(out_path)) == 24


def test_cli_dump_default_config(tmp_path):
    runner = CliRunner()
    out_path = tmp_path / "defaults.yaml"
    result = runner.invoke(main, ["dump-default-config", "--out", str(out_path)])
    assert result.exit_code == 0
    from flexcoord.config import load_config
    assert load_config(out_path) == ScenarioConfig()
