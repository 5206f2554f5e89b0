"""Day-horizon scheduling by convex optimisation.

Builds one quadratic program over all agents and steps of a day: battery
levels, heating, deferrable-load allocations and net imports, minimising the
same system cost the environment charges (grid energy with quadratic network
losses, export charges, storage throughput wear). The thermal recursion is
driven by the mass temperature alone, so air temperatures enter as affine
expressions of it.

Profile-dependent quantities are cvxpy Parameters, so one built problem is
re-solved cheaply across many days as long as the structure (agent count,
horizon, battery and building parameters, deferral windows) is unchanged.

The solved schedule can be replayed through the environment's bookkeeping,
checked constraint by constraint without touching the solver, and converted
into per-agent experience tuples by projecting each step's scheduled
decisions onto the nearest discrete action of the environment's ladder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .env import (
    AgentDay,
    Decisions,
    FlexEntry,
    FlexQueue,
    GridParams,
    HouseholdState,
    RewardBreakdown,
    map_action,
    step_system,
)
from .thermal import ThermalState, step_thermal

SNAP_TOL = 1e-7


def _flex_slots(day: AgentDay) -> list[tuple[int, int]]:
    """(demand_step, service_step) pairs allowed by the deferral window."""
    slots = []
    for s in range(day.n_steps):
        deadline = min(s + day.flex_window, day.n_steps - 1)
        for t in range(s, deadline + 1):
            slots.append((s, t))
    return slots


@dataclass
class DayProblem:
    """Parametrized day program, rebindable across days of equal structure."""

    days: list[AgentDay]
    grid: GridParams
    problem: cp.Problem
    variables: dict
    parameters: dict
    slots: list[list[tuple[int, int]]]

    @property
    def n_agents(self) -> int:
        return len(self.days)

    @property
    def n_steps(self) -> int:
        return self.days[0].n_steps

    @property
    def n_variables(self) -> int:
        return sum(v.size for v in self.problem.variables())

    @property
    def n_constraints(self) -> int:
        return sum(c.size for c in self.problem.constraints)

    def rebind(self, days: list[AgentDay], grid: GridParams) -> None:
        """Point the built program at a new day of identical structure."""
        if len(days) != self.n_agents:
            raise ValueError("agent count changed; rebuild the problem")
        for old, new in zip(self.days, days):
            same = (old.n_steps == new.n_steps
                    and old.battery == new.battery
                    and np.array_equal(old.kappa.matrix, new.kappa.matrix)
                    and np.array_equal(old.comfort_low, new.comfort_low)
                    and np.array_equal(old.comfort_high, new.comfort_high)
                    and old.flexible_share == new.flexible_share
                    and old.flex_window == new.flex_window)
            if not same:
                raise ValueError("day structure changed; rebuild the problem")
        if grid.n_steps != self.n_steps:
            raise ValueError("grid series length changed; rebuild the problem")
        self.days = days
        self.grid = grid
        _bind(self, days, grid)


def _bind(dp: DayProblem, days: list[AgentDay], grid: GridParams) -> None:
    p = dp.parameters
    n, t_end = dp.n_agents, dp.n_steps
    home = np.array([d.profile.ev_at_home for d in days], dtype=float)
    p["home"].value = home
    p["ev_demand"].value = np.array([d.profile.ev_demand for d in days])
    p["pv"].value = np.array([d.profile.pv_generation for d in days])
    demand = np.array([d.profile.household_demand for d in days])
    shares = np.array([d.flexible_share for d in days])[:, None]
    p["fixed_demand"].value = (1.0 - shares) * demand
    p["flex_demand"].value = shares * demand
    p["temp_drive"].value = np.array([
        d.kappa.mass_row[0]
        + d.kappa.mass_row[2] * d.profile.external_temp
        + d.kappa.mass_row[3] * d.profile.solar_gain
        for d in days])
    p["air_drive"].value = np.array([
        d.kappa.air_row[0]
        + d.kappa.air_row[2] * d.profile.external_temp
        + d.kappa.air_row[3] * d.profile.solar_gain
        for d in days])
    p["import_cost"].value = grid.import_cost
    p["loss_weight"].value = np.sqrt(grid.import_cost * grid.loss_coefficient)
    p["init_thermal"].value = np.array([d.initial_thermal.t_mass for d in days])


def build_problem(days: list[AgentDay], grid: GridParams) -> DayProblem:
    """Assemble the day program and bind the given day's values."""
    if not days:
        raise ValueError("no agents")
    t_end = days[0].n_steps
    if any(d.n_steps != t_end for d in days):
        raise ValueError("agents must share the day horizon")
    if grid.n_steps != t_end:
        raise ValueError("grid series length must match the day horizon")
    n = len(days)

    charge = cp.Variable((n, t_end), name="charge", nonneg=True)
    discharge = cp.Variable((n, t_end), name="discharge", nonneg=True)
    heat = cp.Variable((n, t_end), name="heat", nonneg=True)
    export = cp.Variable((n, t_end), name="export", nonneg=True)
    level = cp.Variable((n, t_end + 1), name="level")
    t_mass = cp.Variable((n, t_end + 1), name="t_mass")
    slots = [_flex_slots(d) for d in days]
    flex = [cp.Variable(len(s), name=f"flex_{i}", nonneg=True)
            for i, s in enumerate(slots)]

    params = {
        "home": cp.Parameter((n, t_end), name="home"),
        "ev_demand": cp.Parameter((n, t_end), name="ev_demand", nonneg=True),
        "pv": cp.Parameter((n, t_end), name="pv", nonneg=True),
        "fixed_demand": cp.Parameter((n, t_end), name="fixed_demand", nonneg=True),
        "flex_demand": cp.Parameter((n, t_end), name="flex_demand", nonneg=True),
        "temp_drive": cp.Parameter((n, t_end), name="temp_drive"),
        "air_drive": cp.Parameter((n, t_end), name="air_drive"),
        "import_cost": cp.Parameter(t_end, name="import_cost", pos=True),
        "loss_weight": cp.Parameter(t_end, name="loss_weight", nonneg=True),
        "init_thermal": cp.Parameter(n, name="init_thermal"),
    }

    # Deferrable-load service per step, as an affine map of the slot values.
    served = []
    for i, day in enumerate(days):
        rows = np.zeros((t_end, len(slots[i])))
        for j, (_, t) in enumerate(slots[i]):
            rows[t, j] = 1.0
        served.append(rows @ flex[i])
    consumption = cp.vstack([params["fixed_demand"][i] + served[i] for i in range(n)])

    eta_ch = np.array([d.battery.eta_charge for d in days])[:, None]
    eta_dis = np.array([d.battery.eta_discharge for d in days])[:, None]
    net_import = (consumption + heat + cp.multiply(1.0 / eta_ch, charge)
                  - cp.multiply(eta_dis, discharge) - params["pv"])
    # An explicit variable keeps the loss term parameter-times-variable,
    # so the built program stays fast to re-solve after rebinding.
    g = cp.Variable(t_end, name="g")

    constraints = [
        g == cp.sum(net_import, axis=0),
        level[:, 0] == np.array([d.battery.initial_level for d in days]),
        level[:, t_end] == np.array([d.battery.initial_level for d in days]),
        level[:, 1:] == level[:, :-1] + charge - discharge - params["ev_demand"],
        level >= 0.0,
        level <= np.array([d.battery.capacity for d in days])[:, None],
        level[:, :t_end] >= cp.multiply(
            np.array([d.battery.min_level for d in days])[:, None], params["home"]),
        charge <= cp.multiply(
            np.array([d.battery.max_charge for d in days])[:, None], params["home"]),
        discharge <= cp.multiply(
            np.array([d.battery.capacity for d in days])[:, None], params["home"]),
        t_mass[:, 0] == params["init_thermal"],
        export >= -net_import,
    ]

    b_mass = np.array([d.kappa.mass_row[1] for d in days])[:, None]
    e_mass = np.array([d.kappa.mass_row[4] for d in days])[:, None]
    constraints.append(
        t_mass[:, 1:] == params["temp_drive"] + cp.multiply(b_mass, t_mass[:, :t_end])
        + cp.multiply(e_mass, heat))
    b_air = np.array([d.kappa.air_row[1] for d in days])[:, None]
    e_air = np.array([d.kappa.air_row[4] for d in days])[:, None]
    t_air = (params["air_drive"] + cp.multiply(b_air, t_mass[:, :t_end])
             + cp.multiply(e_air, heat))
    low = np.array([d.comfort_low for d in days])
    high = np.array([d.comfort_high for d in days])
    constraints += [t_air >= low, t_air <= high]

    for i, day in enumerate(days):
        rows = np.zeros((t_end, len(slots[i])))
        for j, (s, _) in enumerate(slots[i]):
            rows[s, j] = 1.0
        constraints.append(rows @ flex[i] == params["flex_demand"][i])

    throughput = np.array([d.battery.throughput_cost for d in days])
    objective = (params["import_cost"] @ g
                 + cp.sum_squares(cp.multiply(params["loss_weight"], g))
                 + grid.export_charge * cp.sum(export)
                 + throughput @ cp.sum(charge + discharge, axis=1))

    problem = cp.Problem(cp.Minimize(objective), constraints)
    dp = DayProblem(days=days, grid=grid, problem=problem,
                    variables={"charge": charge, "discharge": discharge,
                               "heat": heat, "export": export, "level": level,
                               "t_mass": t_mass, "flex": flex,
                               "net_import": net_import, "t_air": t_air},
                    parameters=params, slots=slots)
    _bind(dp, days, grid)
    return dp


@dataclass(frozen=True)
class OptimalSchedule:
    """Solved day schedule with the environment's cost bookkeeping applied."""

    charge: np.ndarray          # (n_agents, n_steps)
    discharge: np.ndarray
    heat: np.ndarray
    consumption: np.ndarray
    net_import: np.ndarray
    levels: np.ndarray          # (n_agents, n_steps + 1)
    t_mass: np.ndarray          # (n_agents, n_steps + 1)
    t_air: np.ndarray           # (n_agents, n_steps), after each step
    flex_alloc: list[dict]      # per agent, (demand_step, service_step) -> kWh
    objective: float
    step_rewards: list[RewardBreakdown]
    total: RewardBreakdown

    @property
    def n_agents(self) -> int:
        return self.charge.shape[0]

    @property
    def n_steps(self) -> int:
        return self.charge.shape[1]


def solve_day(dp: DayProblem, solver: str = cp.CLARABEL) -> OptimalSchedule:
    """Solve the bound day and package the schedule.

    Raises RuntimeError when the solver does not reach an optimal point,
    including the day's status in the message.
    """
    dp.problem.solve(solver=solver)
    if dp.problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise RuntimeError(f"day problem not solved: status {dp.problem.status}")

    v = dp.variables
    charge = np.maximum(v["charge"].value, 0.0)
    discharge = np.maximum(v["discharge"].value, 0.0)
    # Solver noise can leave a whisker of simultaneous charge and discharge;
    # cancel the overlap, which never increases the true cost.
    overlap = np.minimum(charge, discharge)
    charge = charge - overlap
    discharge = discharge - overlap
    charge[charge < SNAP_TOL] = 0.0
    discharge[discharge < SNAP_TOL] = 0.0
    heat = np.maximum(v["heat"].value, 0.0)
    heat[heat < SNAP_TOL] = 0.0

    n, t_end = charge.shape
    flex_alloc = []
    consumption = np.array(dp.parameters["fixed_demand"].value, copy=True)
    for i in range(n):
        values = np.maximum(v["flex"][i].value, 0.0)
        alloc = {}
        for (s, t), amount in zip(dp.slots[i], values):
            if amount > 0.0:
                alloc[(s, t)] = float(amount)
                consumption[i, t] += amount
        flex_alloc.append(alloc)

    pv = dp.parameters["pv"].value
    eta_ch = np.array([d.battery.eta_charge for d in dp.days])[:, None]
    eta_dis = np.array([d.battery.eta_discharge for d in dp.days])[:, None]
    net_import = consumption + heat + charge / eta_ch - eta_dis * discharge - pv

    step_rewards = []
    total = RewardBreakdown()
    batteries = [d.battery for d in dp.days]
    for t in range(t_end):
        decisions = [Decisions(charge=float(charge[i, t]),
                               discharge=float(discharge[i, t]),
                               heat=float(heat[i, t]),
                               consumption=float(consumption[i, t]),
                               net_import=float(net_import[i, t]))
                     for i in range(n)]
        r = step_system(decisions, dp.grid, t, batteries)
        step_rewards.append(r)
        total = total + r

    return OptimalSchedule(
        charge=charge, discharge=discharge, heat=heat, consumption=consumption,
        net_import=net_import, levels=np.array(v["level"].value),
        t_mass=np.array(v["t_mass"].value), t_air=np.array(v["t_air"].value),
        flex_alloc=flex_alloc, objective=float(dp.problem.value),
        step_rewards=step_rewards, total=total)


def check_schedule(days: list[AgentDay], grid: GridParams,
                   schedule: OptimalSchedule) -> dict[str, float]:
    """Residuals of every constraint family, recomputed without the solver.

    Returns the maximum absolute violation per family; all should sit well
    below 1e-6 for a correctly solved day.
    """
    res = {}
    n, t_end = schedule.n_agents, schedule.n_steps
    balance = np.zeros((n, t_end))
    dynamics = np.zeros((n, t_end))
    thermal_res = np.zeros((n, t_end))
    comfort = np.zeros((n, t_end))
    corridor = np.zeros((n, t_end + 1))
    gating = np.zeros((n, t_end))
    windows = np.zeros(n)
    totals = np.zeros(n)
    for i, day in enumerate(days):
        prof = day.profile
        bat = day.battery
        home = prof.ev_at_home
        balance[i] = np.abs(
            schedule.consumption[i] + schedule.heat[i]
            + schedule.charge[i] / bat.eta_charge
            - bat.eta_discharge * schedule.discharge[i]
            - prof.pv_generation - schedule.net_import[i])
        dynamics[i] = np.abs(schedule.levels[i, 1:] - schedule.levels[i, :-1]
                             - schedule.charge[i] + schedule.discharge[i]
                             + prof.ev_demand)
        lo = np.where(home, bat.min_level, 0.0)
        corridor[i, :t_end] = np.maximum(lo - schedule.levels[i, :t_end], 0.0)
        corridor[i] = np.maximum(corridor[i],
                                 np.maximum(schedule.levels[i] - bat.capacity, 0.0))
        corridor[i] = np.maximum(corridor[i],
                                 np.maximum(-schedule.levels[i], 0.0))
        corridor[i, t_end] = max(corridor[i, t_end],
                                 abs(schedule.levels[i, t_end] - bat.initial_level))
        gating[i] = np.maximum(
            schedule.charge[i] - np.where(home, bat.max_charge, 0.0), 0.0)
        gating[i] = np.maximum(gating[i], np.maximum(
            schedule.discharge[i] - np.where(home, bat.capacity, 0.0), 0.0))
        state = ThermalState(t_mass=schedule.t_mass[i, 0],
                             t_air=day.initial_thermal.t_air)
        for t in range(t_end):
            nxt = step_thermal(day.kappa, state, float(prof.external_temp[t]),
                               float(prof.solar_gain[t]), float(schedule.heat[i, t]))
            thermal_res[i, t] = max(abs(nxt.t_mass - schedule.t_mass[i, t + 1]),
                                    abs(nxt.t_air - schedule.t_air[i, t]))
            comfort[i, t] = max(day.comfort_low[t] - schedule.t_air[i, t],
                                schedule.t_air[i, t] - day.comfort_high[t], 0.0)
            state = ThermalState(t_mass=schedule.t_mass[i, t + 1],
                                 t_air=schedule.t_air[i, t])
        flex_total = {}
        for (s, t), amount in schedule.flex_alloc[i].items():
            if not s <= t <= min(s + day.flex_window, t_end - 1):
                windows[i] = max(windows[i], abs(amount))
            flex_total[s] = flex_total.get(s, 0.0) + amount
        for s in range(t_end):
            want = day.flexible_share * float(prof.household_demand[s])
            totals[i] = max(totals[i], abs(flex_total.get(s, 0.0) - want))

    recost = sum((step_system(
        [Decisions(charge=float(schedule.charge[i, t]),
                   discharge=float(schedule.discharge[i, t]),
                   heat=float(schedule.heat[i, t]),
                   consumption=float(schedule.consumption[i, t]),
                   net_import=float(schedule.net_import[i, t]))
         for i in range(n)], grid, t, [d.battery for d in days]).reward
        for t in range(t_end)))
    res["energy_balance"] = float(balance.max())
    res["battery_dynamics"] = float(dynamics.max())
    res["battery_corridor"] = float(corridor.max())
    res["battery_gating"] = float(gating.max())
    res["thermal_recursion"] = float(thermal_res.max())
    res["comfort_band"] = float(comfort.max())
    res["deferral_window"] = float(windows.max())
    res["deferral_total"] = float(totals.max())
    res["objective_match"] = abs(schedule.objective - (-recost))
    return res


@dataclass(frozen=True)
class StepExperience:
    """One agent-step of a schedule projected onto the action ladder."""

    agent: int
    t: int
    action: int
    reward_total: float
    reward_marginal: float
    terminal: bool


def _reconstruct_states(day: AgentDay, schedule: OptimalSchedule,
                        agent: int) -> list[HouseholdState]:
    """Household states along the schedule, straight from its arrays."""
    states = []
    t_end = schedule.n_steps
    remaining = {}
    t_air_prev = day.initial_thermal.t_air
    for t in range(t_end):
        demand = float(day.profile.household_demand[t])
        amount = day.flexible_share * demand
        if amount > 0.0:
            remaining[t] = (amount, min(t + day.flex_window, t_end - 1))
        entries = tuple(FlexEntry(remaining=rem, demand_step=s, deadline=dl)
                        for s, (rem, dl) in sorted(remaining.items())
                        if rem > 1e-12)
        queue = FlexQueue(entries=entries, fixed_now=(1.0 - day.flexible_share) * demand)
        states.append(HouseholdState(
            battery_level=float(np.clip(schedule.levels[agent, t], 0.0,
                                        day.battery.capacity)),
            thermal=ThermalState(t_mass=float(schedule.t_mass[agent, t]),
                                 t_air=t_air_prev),
            queue=queue, t=t))
        t_air_prev = float(schedule.t_air[agent, t])
        for (s, tt), used in schedule.flex_alloc[agent].items():
            if tt == t and s in remaining:
                rem, dl = remaining[s]
                remaining[s] = (max(rem - used, 0.0), dl)
    return states


def extract_experience(days: list[AgentDay], grid: GridParams,
                       schedule: OptimalSchedule,
                       n_actions: int = 10) -> list[StepExperience]:
    """Project the schedule onto the action ladder and price its steps.

    The action for agent i at step t is the ladder point whose expanded
    decisions are nearest (L1 over charge, discharge, heat, consumption) to
    the scheduled ones, evaluated at the reconstructed schedule state. The
    marginal reward replaces agent i's step with the passive expansion and
    differences the system reward against the schedule's.
    """
    ladder = np.linspace(0.0, 1.0, n_actions)
    t_end = schedule.n_steps
    batteries = [d.battery for d in days]
    all_states = [_reconstruct_states(day, schedule, i)
                  for i, day in enumerate(days)]
    scheduled = [[Decisions(charge=float(schedule.charge[i, t]),
                            discharge=float(schedule.discharge[i, t]),
                            heat=float(schedule.heat[i, t]),
                            consumption=float(schedule.consumption[i, t]),
                            net_import=float(schedule.net_import[i, t]))
                  for t in range(t_end)] for i in range(len(days))]
    out = []
    for t in range(t_end):
        base_reward = schedule.step_rewards[t].reward
        for i, day in enumerate(days):
            state = all_states[i][t]
            target = scheduled[i][t]
            gaps = np.empty(n_actions)
            for a, psi in enumerate(ladder):
                d = map_action(float(psi), state, day)
                gaps[a] = (abs(d.charge - target.charge)
                           + abs(d.discharge - target.discharge)
                           + abs(d.heat - target.heat)
                           + abs(d.consumption - target.consumption))
            action = int(np.argmin(gaps))
            passive = map_action(1.0, state, day)
            swapped = [passive if j == i else scheduled[j][t]
                       for j in range(len(days))]
            counterfactual = step_system(swapped, grid, t, batteries).reward
            out.append(StepExperience(
                agent=i, t=t, action=action, reward_total=base_reward,
                reward_marginal=base_reward - counterfactual,
                terminal=t == t_end - 1))
    return out
