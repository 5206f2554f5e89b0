"""Scenario-matrix execution: build synthetic case studies, train every
(strategy, agent count, repetition) cell, aggregate, and write file outputs.

Cells are independent and may run in parallel; assembly is a serial
reduction in a fixed cell order so outputs are reproducible from the config
and seed alone, whatever the worker count.
"""
from __future__ import annotations

import dataclasses
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .config import ScenarioConfig, build_grid
from .env import AgentDay, BatteryParams, GridParams, make_agent_day
from .marl import LearningParams, StrategyConfig, TrainResult, train
from .optimiser import OptimalSchedule, build_problem, solve_day
from .profiles import (
    ComponentModels,
    DayProfile,
    SyntheticBankConfig,
    generate_synthetic_bank,
    initial_chain_state,
    next_day,
)

# Canonical strategy order; also fixes seed spawn keys per strategy.
STRATEGY_ORDER = ("TE", "ME", "AE", "TO", "MO", "AO", "CO")

RESULT_COLUMNS = ("strategy", "repetition", "epoch", "n_agents",
                  "savings_p_per_agent_hour", "cg_delta", "cd_delta",
                  "cs_delta", "emissions_delta")

# Spawn-key namespaces, so scenario construction, training cells and
# schedule dumps never share a random stream.
_KEY_SCENARIO = 1
_KEY_CELL = 2
_KEY_SCHEDULE = 3


@dataclass(frozen=True)
class SyntheticScenario:
    """Generative day sampler shared by all strategies of a run.

    Profile banks, physics and tariffs are frozen at construction; only the
    day draws (cluster chains, scaling factors, weather noise) consume the
    sampling rng, so two scenarios built from the same seed are identical.
    """

    config: ScenarioConfig
    n_agents: int
    grid: GridParams
    battery: BatteryParams
    load_models: ComponentModels
    pv_models: ComponentModels
    ev_models: ComponentModels

    def sample(self, rng: np.random.Generator) -> tuple[list[AgentDay], GridParams]:
        cfg = self.config
        kappa = cfg.thermal.to_kappa()
        low, high = cfg.thermal.to_band(cfg.n_steps)
        days = []
        day_prev = "wd" if rng.random() < cfg.synthetic.weekday_fraction else "we"
        day_type = "wd" if rng.random() < cfg.synthetic.weekday_fraction else "we"
        for _ in range(self.n_agents):
            days.append(self._sample_agent(rng, day_prev, day_type, kappa, low, high))
        return days, self.grid

    def _sample_agent(self, rng, day_prev, day_type, kappa, low, high) -> AgentDay:
        cfg = self.config
        s = cfg.synthetic
        hours = np.arange(cfg.n_steps, dtype=float)
        # A handful of EV draws can demand more than the home hours allow;
        # redraw rather than fail the whole run.
        for _ in range(20):
            demand = self._draw(self.load_models, s.demand_kwh_range,
                                day_prev, day_type, rng)[0]
            pv = self._draw(self.pv_models, s.pv_kwh_range,
                            day_prev, day_type, rng)[0]
            ev_demand, at_home = self._draw(self.ev_models, s.ev_kwh_range,
                                            day_prev, day_type, rng)
            temp = (s.temp_mean_c
                    + s.temp_swing_c * np.cos(2.0 * np.pi * (hours - 15.0) / 24.0)
                    + rng.normal(0.0, s.temp_noise_c, cfg.n_steps))
            if s.solar_gain_peak_w > 0.0:
                gain = s.solar_gain_peak_w * np.exp(-0.5 * ((hours - 12.0) / 2.5) ** 2)
            else:
                gain = np.zeros(cfg.n_steps)
            profile = DayProfile(
                household_demand=demand,
                pv_generation=pv,
                ev_at_home=at_home,
                ev_demand=ev_demand,
                external_temp=temp,
                solar_gain=gain,
            )
            try:
                return make_agent_day(profile, self.battery, kappa, low, high,
                                      flexible_share=cfg.flexibility.share,
                                      flex_window=cfg.flexibility.window_steps)
            except ValueError:
                continue
        raise RuntimeError("could not draw a feasible agent day in 20 attempts")

    def _draw(self, models: ComponentModels, scale_range, day_prev, day_type,
              rng) -> tuple[np.ndarray, np.ndarray]:
        state = initial_chain_state(models, day_prev, rng,
                                    scale=float(rng.uniform(*scale_range)))
        series, availability, _ = next_day(state, day_type, models, rng)
        if availability is None:
            availability = np.ones(len(series), dtype=bool)
        return series, np.asarray(availability, dtype=bool)


def build_scenario(config: ScenarioConfig, n_agents: int,
                   seed: int | None = None) -> SyntheticScenario:
    """Construct the frozen scenario world for one run."""
    if seed is None:
        seed = config.matrix.seed
    ss = np.random.SeedSequence(seed, spawn_key=(_KEY_SCENARIO,))
    rngs = [np.random.default_rng(child) for child in ss.spawn(3)]
    s = config.synthetic
    banks = []
    for component, rng, scale_range in (
            ("load", rngs[0], s.demand_kwh_range),
            ("pv", rngs[1], s.pv_kwh_range),
            ("ev", rngs[2], s.ev_kwh_range)):
        banks.append(generate_synthetic_bank(SyntheticBankConfig(
            component=component,
            n_clusters=s.n_clusters,
            bank_size=s.bank_size,
            n_steps=config.n_steps,
            scale_range=scale_range,
            correlation=s.correlation,
        ), rng))
    return SyntheticScenario(
        config=config,
        n_agents=n_agents,
        grid=build_grid(config),
        battery=config.battery.to_params(),
        load_models=banks[0],
        pv_models=banks[1],
        ev_models=banks[2],
    )


def learning_params(config: ScenarioConfig) -> LearningParams:
    ln = config.learning
    return LearningParams(gamma=ln.gamma, alpha=ln.alpha, beta=ln.beta,
                          epsilon=ln.epsilon, epochs=ln.epochs,
                          episodes_per_epoch=ln.episodes_per_epoch,
                          repetitions=config.matrix.repetitions)


def cell_seed(config: ScenarioConfig, strategy: str, n_agents: int,
              repetition: int) -> int:
    """Deterministic training seed for one matrix cell."""
    idx = STRATEGY_ORDER.index(strategy.upper())
    ss = np.random.SeedSequence(
        config.matrix.seed, spawn_key=(_KEY_CELL, idx, n_agents, repetition))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class CellResult:
    strategy: str
    n_agents: int
    repetition: int
    rows: list[dict] = field(default_factory=list)
    policy_rows: list[dict] = field(default_factory=list)
    error: str | None = None


def _policy_rows(strategy: str, n_agents: int, repetition: int,
                 result: TrainResult) -> list[dict]:
    rows = []
    groups = [("q", result.tables)]
    if result.aux_tables is not None:
        groups.append(("q0", result.aux_tables))
    for name, tables in groups:
        for idx, table in enumerate(tables):
            n_states, n_actions = table.values.shape
            for state in range(n_states):
                for action in range(n_actions):
                    rows.append({
                        "strategy": strategy, "n_agents": n_agents,
                        "repetition": repetition, "table": f"{name}{idx}",
                        "state": state, "action": action,
                        "value": float(table.values[state, action]),
                        "count": int(table.counts[state, action]),
                    })
    return rows


def run_cell(config: ScenarioConfig, strategy: str, n_agents: int,
             repetition: int) -> CellResult:
    """Train one repetition of one strategy; failures become records."""
    try:
        scenario = build_scenario(config, n_agents)
        result = train(StrategyConfig.from_acronym(strategy), scenario,
                       learning_params(config),
                       seed=cell_seed(config, strategy, n_agents, repetition))
        rows = []
        for record in result.records:
            ev = record.evaluation
            rows.append({
                "strategy": strategy, "repetition": repetition,
                "epoch": record.epoch, "n_agents": n_agents,
                "savings_p_per_agent_hour": 100.0 * ev.savings,
                "cg_delta": 100.0 * ev.grid_delta,
                "cd_delta": 100.0 * ev.export_delta,
                "cs_delta": 100.0 * ev.storage_delta,
                "emissions_delta": 100.0 * ev.emissions_delta,
            })
        return CellResult(strategy=strategy, n_agents=n_agents,
                          repetition=repetition, rows=rows,
                          policy_rows=_policy_rows(strategy, n_agents,
                                                   repetition, result))
    except Exception:
        return CellResult(strategy=strategy, n_agents=n_agents,
                          repetition=repetition,
                          error=traceback.format_exc(limit=8))


@dataclass
class ResultsTable:
    """Long-form epoch rows plus final-10-epoch aggregates per cell group."""

    rows: list[dict]
    aggregates: list[dict]
    failures: list[dict]
    policy_rows: list[dict]

    def results_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(RESULT_COLUMNS))

    def aggregates_frame(self) -> pd.DataFrame:
        columns = ["strategy", "n_agents", "repetitions",
                   "p25_savings_p", "median_savings_p", "p75_savings_p"]
        return pd.DataFrame(self.aggregates, columns=columns)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.results_frame().to_csv(out / "results.csv", index=False)
        self.aggregates_frame().to_csv(out / "aggregates.csv", index=False)
        if self.failures:
            pd.DataFrame(self.failures).to_csv(out / "failures.csv", index=False)
        policies = out / "policies"
        policies.mkdir(exist_ok=True)
        frame = pd.DataFrame(self.policy_rows)
        if len(frame):
            for (strategy, n_agents, rep), part in frame.groupby(
                    ["strategy", "n_agents", "repetition"], sort=False):
                part.to_csv(policies / f"{strategy}_n{n_agents}_rep{rep}.csv",
                            index=False)


def final_epoch_means(rows: list[dict], window: int = 10) -> dict[tuple, list[float]]:
    """Mean savings over each repetition's last ``window`` epochs."""
    frame = pd.DataFrame(rows)
    means: dict[tuple, list[float]] = {}
    if not len(frame):
        return means
    for (strategy, n_agents, rep), part in frame.groupby(
            ["strategy", "n_agents", "repetition"], sort=False):
        tail = part.sort_values("epoch").tail(window)
        key = (strategy, int(n_agents))
        means.setdefault(key, []).append(
            float(tail["savings_p_per_agent_hour"].mean()))
    return means


def _aggregate(rows: list[dict]) -> list[dict]:
    aggregates = []
    for (strategy, n_agents), values in final_epoch_means(rows).items():
        p25, median, p75 = np.percentile(values, [25.0, 50.0, 75.0])
        aggregates.append({
            "strategy": strategy, "n_agents": n_agents,
            "repetitions": len(values),
            "p25_savings_p": float(p25),
            "median_savings_p": float(median),
            "p75_savings_p": float(p75),
        })
    return aggregates


def _run_cell_task(args) -> CellResult:
    return run_cell(*args)


def run_matrix(config: ScenarioConfig, out_dir=None,
               strategies: tuple[str, ...] | None = None,
               agent_counts: tuple[int, ...] | None = None,
               workers: int | None = None,
               seed: int | None = None) -> ResultsTable:
    """Execute the full (strategy, agent count, repetition) grid.

    Overrides narrow the configured matrix without editing the file. Cell
    failures are recorded and the rest of the matrix still runs.
    """
    matrix = config.matrix
    replacements: dict = {}
    if strategies is not None:
        replacements["strategies"] = tuple(s.upper() for s in strategies)
    if agent_counts is not None:
        replacements["agent_counts"] = tuple(agent_counts)
    if workers is not None:
        replacements["workers"] = workers
    if seed is not None:
        replacements["seed"] = seed
    if replacements:
        matrix = dataclasses.replace(matrix, **replacements)
        config = dataclasses.replace(config, matrix=matrix)

    cells = [(config, strategy, n, rep)
             for strategy in matrix.strategies
             for n in matrix.agent_counts
             for rep in range(matrix.repetitions)]
    if matrix.workers > 1:
        with ProcessPoolExecutor(max_workers=matrix.workers) as pool:
            results = list(pool.map(_run_cell_task, cells))
    else:
        results = [_run_cell_task(cell) for cell in cells]

    rows: list[dict] = []
    policy_rows: list[dict] = []
    failures: list[dict] = []
    for cell in results:
        if cell.error is not None:
            failures.append({"strategy": cell.strategy,
                             "n_agents": cell.n_agents,
                             "repetition": cell.repetition,
                             "error": cell.error})
            continue
        rows.extend(cell.rows)
        policy_rows.extend(cell.policy_rows)

    table = ResultsTable(rows=rows, aggregates=_aggregate(rows),
                         failures=failures, policy_rows=policy_rows)
    if out_dir is not None:
        table.write(out_dir)
        _write_schedules(config, Path(out_dir) / "schedules")
    return table


def _write_schedules(config: ScenarioConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for n in config.matrix.agent_counts:
        try:
            frame = schedule_frame(*dump_schedule(config, n))
        except Exception:  # solver trouble must not void the run outputs
            continue
        frame.to_csv(out / f"day_ahead_n{n}.csv", index=False)


def dump_schedule(config: ScenarioConfig, n_agents: int,
                  seed: int | None = None) -> tuple[list[AgentDay], OptimalSchedule]:
    """Solve the day-ahead program on one sampled day (debugging aid)."""
    if seed is None:
        seed = config.matrix.seed
    scenario = build_scenario(config, n_agents, seed=seed)
    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_KEY_SCHEDULE, n_agents)))
    days, grid = scenario.sample(rng)
    return days, solve_day(build_problem(days, grid))


def schedule_frame(days: list[AgentDay], schedule: OptimalSchedule) -> pd.DataFrame:
    rows = []
    for i in range(len(days)):
        for t in range(days[i].n_steps):
            rows.append({
                "agent": i, "t": t,
                "charge": schedule.charge[i, t],
                "discharge": schedule.discharge[i, t],
                "heat": schedule.heat[i, t],
                "consumption": schedule.consumption[i, t],
                "net_import": schedule.net_import[i, t],
                "battery_level_end": schedule.levels[i, t + 1],
                "t_air": schedule.t_air[i, t],
            })
    return pd.DataFrame(rows)


def cost_breakdown_report(table: ResultsTable, window: int = 10) -> list[dict]:
    """Per-strategy component shares of net savings over final epochs.

    Components may worsen, so shares can be negative; they sum to 100% of
    the net. Near-zero net savings switch the basis to absolute values.
    """
    frame = pd.DataFrame(table.rows)
    reports = []
    if not len(frame):
        return reports
    for strategy, part in frame.groupby("strategy", sort=False):
        tails = []
        for _, rep_part in part.groupby(["n_agents", "repetition"], sort=False):
            tails.append(rep_part.sort_values("epoch").tail(window))
        tail = pd.concat(tails)
        net = float(tail["savings_p_per_agent_hour"].mean())
        components = {
            "grid_energy": float((tail["cg_delta"] - tail["emissions_delta"]).mean()),
            "emissions": float(tail["emissions_delta"].mean()),
            "distribution": float(tail["cd_delta"].mean()),
            "battery": float(tail["cs_delta"].mean()),
        }
        if abs(net) > 1e-12:
            report = {name: 100.0 * value / net
                      for name, value in components.items()}
            basis = "percent_of_net_savings"
        else:
            report = components
            basis = "absolute_p_per_agent_hour"
        report.update({"strategy": strategy, "basis": basis,
                       "net_savings_p_per_agent_hour": net})
        reports.append(report)
    return reports
