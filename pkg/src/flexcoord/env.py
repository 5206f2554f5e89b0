"""Single-day household flexibility environment.

Each agent controls one scalar per step, psi in [0, 1], which the
environment expands into battery charge/discharge, heating and consumption
decisions. Obligations are served first regardless of psi: non-deferrable
loads (including flexible loads whose deferral window closes this step), the
minimum heat keeping the zone at the comfort floor, and battery reservations
for upcoming vehicle trips and the end-of-day level. The remaining room is
laid out over five contiguous regimes swept by psi:

  1. export stored energy, from all dischargeable down to none;
  2. serve the non-deferrable residual from storage, then from imports;
  3. flexible consumption from none to all (loads by earliest deadline,
     then heat up to the comfort ceiling);
  4. the solar surplus left after all loads, from exported to stored;
  5. extra imports filling the battery up to its reachable ceiling.

Regime widths on the psi axis are proportional to the import-side energy
each regime can move, so the household's net import is piecewise-linear and
non-decreasing in psi. psi = 1 is the passive household: charge whenever the
vehicle is home, consume every load immediately, heat to the ceiling.

Battery reservations are back-propagated once per day: a floor from future
trip consumption (charging at the rate limit while home) and the terminal
level, and a mirror ceiling making the terminal level reachable from above
(discharge is only rate-limited by capacity). Both policies and the
day-horizon optimiser face the same boundary conditions, which keeps their
objectives directly comparable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .profiles import DayProfile
from .thermal import ThermalCoefficients, ThermalState, heating_bounds, step_thermal

BALANCE_TOL = 1e-9


@dataclass(frozen=True)
class BatteryParams:
    """One battery (the EV's) per household."""

    capacity: float = 75.0          # kWh
    min_level: float = 7.5          # kWh, enforced while the vehicle is home
    initial_level: float = 37.5     # kWh, start and end-of-day level
    max_charge: float = 22.0        # kWh per step
    eta_charge: float = math.sqrt(0.87)
    eta_discharge: float = math.sqrt(0.87)
    throughput_cost: float = 0.0156  # GBP per kWh in or out

    def __post_init__(self) -> None:
        if not 0.0 <= self.min_level <= self.initial_level <= self.capacity:
            raise ValueError("battery levels must satisfy 0 <= min <= initial <= capacity")
        if not (0.0 < self.eta_charge <= 1.0 and 0.0 < self.eta_discharge <= 1.0):
            raise ValueError("battery efficiencies must lie in (0, 1]")
        if self.max_charge < 0.0 or self.throughput_cost < 0.0:
            raise ValueError("max_charge and throughput_cost must be non-negative")


@dataclass(frozen=True)
class GridParams:
    """Import cost series and network characteristics for one day."""

    import_cost: np.ndarray         # GBP/kWh per step, price + carbon component
    carbon_cost: np.ndarray         # GBP/kWh per step, the carbon part alone
    export_charge: float = 0.01     # GBP/kWh on exported energy
    resistance: float = 0.084       # ohm
    voltage: float = 415.0          # V

    def __post_init__(self) -> None:
        cost = np.asarray(self.import_cost, dtype=float)
        carbon = np.asarray(self.carbon_cost, dtype=float)
        if cost.shape != carbon.shape or cost.ndim != 1:
            raise ValueError("import_cost and carbon_cost must be 1-d and share a length")
        if np.any(cost <= 0.0):
            raise ValueError("import cost must be strictly positive")
        if np.any(carbon < 0.0) or np.any(carbon > cost + 1e-12):
            raise ValueError("carbon component must lie within the import cost")
        if self.export_charge < 0.0 or self.resistance < 0.0 or self.voltage <= 0.0:
            raise ValueError("bad network parameters")
        object.__setattr__(self, "import_cost", cost)
        object.__setattr__(self, "carbon_cost", carbon)

    @property
    def loss_coefficient(self) -> float:
        # Quadratic network-loss coefficient: losses in kWh per (kWh net
        # import)^2 over one hourly step at nominal voltage.
        return 1000.0 * self.resistance / self.voltage ** 2

    @property
    def n_steps(self) -> int:
        return len(self.import_cost)


@dataclass(frozen=True)
class FlexEntry:
    """One deferrable load: remaining energy and its service window."""

    remaining: float
    demand_step: int
    deadline: int


@dataclass(frozen=True)
class FlexQueue:
    """Deferrable loads in flight plus the current step's fixed demand."""

    entries: tuple[FlexEntry, ...] = ()
    fixed_now: float = 0.0

    def due(self, t: int) -> float:
        """Energy whose deferral window closes at step t."""
        return sum(e.remaining for e in self.entries if e.deadline <= t)

    def deferrable(self, t: int) -> float:
        return sum(e.remaining for e in self.entries if e.deadline > t)


@dataclass(frozen=True)
class Decisions:
    """Expanded per-step decisions for one household, all kWh."""

    charge: float
    discharge: float
    heat: float
    consumption: float
    net_import: float
    flex_consumed: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if min(self.charge, self.discharge, self.heat, self.consumption) < 0.0:
            raise ValueError("decisions must be non-negative")
        if self.charge > 0.0 and self.discharge > 0.0:
            raise ValueError("simultaneous charge and discharge")


@dataclass(frozen=True)
class HouseholdState:
    """One agent's controllable state at one step."""

    battery_level: float
    thermal: ThermalState
    queue: FlexQueue
    t: int


@dataclass(frozen=True)
class RewardBreakdown:
    """System cost split for one step (or summed over steps), GBP."""

    grid_cost: float = 0.0
    emissions_cost: float = 0.0      # carbon share inside grid_cost
    distribution_cost: float = 0.0
    storage_cost: float = 0.0

    @property
    def reward(self) -> float:
        return -(self.grid_cost + self.distribution_cost + self.storage_cost)

    def __add__(self, other: "RewardBreakdown") -> "RewardBreakdown":
        return RewardBreakdown(
            grid_cost=self.grid_cost + other.grid_cost,
            emissions_cost=self.emissions_cost + other.emissions_cost,
            distribution_cost=self.distribution_cost + other.distribution_cost,
            storage_cost=self.storage_cost + other.storage_cost,
        )


@dataclass(frozen=True)
class AgentDay:
    """Immutable per-agent day context: profile, parameters, reservations."""

    profile: DayProfile
    battery: BatteryParams
    kappa: ThermalCoefficients
    comfort_low: np.ndarray
    comfort_high: np.ndarray
    initial_thermal: ThermalState
    flexible_share: float = 0.1
    flex_window: int = 5
    # Reachable battery-level corridor at each step boundary, length T+1;
    # filled in by make_agent_day.
    floor: np.ndarray = field(default=None, repr=False)
    ceiling: np.ndarray = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return self.profile.n_steps


def make_agent_day(profile: DayProfile, battery: BatteryParams,
                   kappa: ThermalCoefficients,
                   comfort_low: np.ndarray, comfort_high: np.ndarray,
                   flexible_share: float = 0.1, flex_window: int = 5,
                   initial_thermal: ThermalState | None = None) -> AgentDay:
    """Assemble the day context and back-propagate battery reservations.

    The floor at a step boundary is the least battery level from which all
    later trips and the end-of-day level stay reachable when charging at the
    rate limit whenever the vehicle is home. The ceiling mirrors it from
    above; discharge has no per-step rate limit beyond the capacity itself,
    so the ceiling only tightens across away periods and at the day end.
    """
    t_end = profile.n_steps
    comfort_low = np.asarray(comfort_low, dtype=float)
    comfort_high = np.asarray(comfort_high, dtype=float)
    if comfort_low.shape != (t_end,) or comfort_high.shape != (t_end,):
        raise ValueError("comfort bounds must match the profile length")
    if np.any(comfort_high < comfort_low):
        raise ValueError("comfort upper bound below lower bound")
    if not 0.0 <= flexible_share <= 1.0:
        raise ValueError("flexible_share must lie in [0, 1]")
    if flex_window < 0:
        raise ValueError("flex_window must be non-negative")

    home = profile.ev_at_home
    trips = profile.ev_demand
    floor = np.empty(t_end + 1)
    ceiling = np.empty(t_end + 1)
    floor[t_end] = battery.initial_level
    ceiling[t_end] = battery.initial_level
    for t in range(t_end - 1, -1, -1):
        charge_room = battery.max_charge if home[t] else 0.0
        discharge_room = battery.capacity if home[t] else 0.0
        floor[t] = max(battery.min_level if home[t] else 0.0,
                       floor[t + 1] + trips[t] - charge_room)
        ceiling[t] = min(battery.capacity, ceiling[t + 1] + trips[t] + discharge_room)
        if floor[t] > ceiling[t] + 1e-12 or floor[t] > battery.capacity + 1e-12:
            raise ValueError("infeasible EV schedule")
    if not floor[0] - 1e-12 <= battery.initial_level <= ceiling[0] + 1e-12:
        raise ValueError("infeasible EV schedule")

    if initial_thermal is None:
        mid = 0.5 * (comfort_low[0] + comfort_high[0])
        initial_thermal = ThermalState(t_mass=mid, t_air=mid)
    return AgentDay(profile=profile, battery=battery, kappa=kappa,
                    comfort_low=comfort_low, comfort_high=comfort_high,
                    initial_thermal=initial_thermal,
                    flexible_share=flexible_share, flex_window=flex_window,
                    floor=floor, ceiling=ceiling)


def _enqueue_demand(day: AgentDay, queue_entries: tuple[FlexEntry, ...],
                    t: int) -> FlexQueue:
    demand = float(day.profile.household_demand[t])
    flexible = day.flexible_share * demand
    entries = queue_entries
    if flexible > 0.0:
        deadline = min(t + day.flex_window, day.n_steps - 1)
        entries = entries + (FlexEntry(remaining=flexible, demand_step=t,
                                       deadline=deadline),)
    return FlexQueue(entries=entries, fixed_now=demand - flexible)


def initial_state(day: AgentDay) -> HouseholdState:
    """State at the start of the day, with the first demand enqueued."""
    return HouseholdState(
        battery_level=day.battery.initial_level,
        thermal=day.initial_thermal,
        queue=_enqueue_demand(day, (), 0),
        t=0,
    )


def _battery_room(state: HouseholdState, day: AgentDay):
    """Forced and maximal charge/discharge respecting the level corridor."""
    t = state.t
    home = bool(day.profile.ev_at_home[t])
    trip = float(day.profile.ev_demand[t])
    after_trip = state.battery_level - trip
    lo, hi = day.floor[t + 1], day.ceiling[t + 1]
    if not home:
        return 0.0, 0.0, 0.0, 0.0
    charge_forced = max(0.0, lo - after_trip)
    charge_cap = max(charge_forced, min(day.battery.max_charge, hi - after_trip))
    discharge_forced = max(0.0, after_trip - hi)
    discharge_cap = max(discharge_forced, after_trip - lo)
    return charge_forced, charge_cap, discharge_forced, discharge_cap


def flexibility_spans(state: HouseholdState, day: AgentDay) -> np.ndarray:
    """Import-side kWh each of the five regimes can move at this state."""
    t = state.t
    prof = day.profile
    eta_ch, eta_dis = day.battery.eta_charge, day.battery.eta_discharge
    h_min, h_max = heating_bounds(day.kappa, state.thermal,
                                  float(prof.external_temp[t]), float(prof.solar_gain[t]),
                                  float(day.comfort_low[t]), float(day.comfort_high[t]))
    charge_forced, charge_cap, discharge_forced, discharge_cap = _battery_room(state, day)

    c_min = state.queue.fixed_now + state.queue.due(t)
    flex_load = state.queue.deferrable(t)
    fixed_bus = c_min + h_min + charge_forced / eta_ch
    pv = float(prof.pv_generation[t])
    residual_fixed = max(0.0, fixed_bus - pv)

    free_discharge = discharge_cap - discharge_forced
    discharge_for_fixed = min(free_discharge, residual_fixed / eta_dis)
    span1 = eta_dis * (free_discharge - discharge_for_fixed)
    span2 = eta_dis * discharge_for_fixed
    span3 = flex_load + (h_max - h_min)
    pv_after_all = max(0.0, pv - fixed_bus - span3)
    charge_room = charge_cap - charge_forced
    pv_stored = min(eta_ch * pv_after_all, charge_room)
    span4 = pv_stored / eta_ch
    span5 = (charge_room - pv_stored) / eta_ch
    return np.array([span1, span2, span3, span4, span5])


def map_action(psi: float, state: HouseholdState, day: AgentDay) -> Decisions:
    """Expand the scalar action into battery, heat and consumption decisions."""
    if not 0.0 <= psi <= 1.0:
        raise ValueError("psi must lie in [0, 1]")
    t = state.t
    prof = day.profile
    eta_ch, eta_dis = day.battery.eta_charge, day.battery.eta_discharge
    h_min, h_max = heating_bounds(day.kappa, state.thermal,
                                  float(prof.external_temp[t]), float(prof.solar_gain[t]),
                                  float(day.comfort_low[t]), float(day.comfort_high[t]))
    charge_forced, charge_cap, discharge_forced, discharge_cap = _battery_room(state, day)

    entries = state.queue.entries
    due_idx = [i for i, e in enumerate(entries) if e.deadline <= t]
    open_idx = sorted((i for i, e in enumerate(entries) if e.deadline > t),
                      key=lambda i: (entries[i].deadline, entries[i].demand_step))
    c_min = state.queue.fixed_now + sum(entries[i].remaining for i in due_idx)
    flex_load = sum(entries[i].remaining for i in open_idx)
    fixed_bus = c_min + h_min + charge_forced / eta_ch
    pv = float(prof.pv_generation[t])
    residual_fixed = max(0.0, fixed_bus - pv)

    free_discharge = discharge_cap - discharge_forced
    discharge_for_fixed = min(free_discharge, residual_fixed / eta_dis)
    spans = np.array([
        eta_dis * (free_discharge - discharge_for_fixed),
        eta_dis * discharge_for_fixed,
        flex_load + (h_max - h_min),
        0.0, 0.0,
    ])
    pv_after_all = max(0.0, pv - fixed_bus - spans[2])
    charge_room = charge_cap - charge_forced
    pv_stored = min(eta_ch * pv_after_all, charge_room)
    spans[3] = pv_stored / eta_ch
    spans[4] = (charge_room - pv_stored) / eta_ch

    total = spans.sum()
    position = psi * total
    used = np.minimum(np.maximum(position - np.concatenate(([0.0], np.cumsum(spans)[:-1])), 0.0), spans)

    # Per-regime leftovers are exactly zero once a regime is fully used,
    # which keeps charge * discharge exactly zero in floats.
    discharge = discharge_forced + ((spans[0] - used[0]) + (spans[1] - used[1])) / eta_dis
    load_used = min(used[2], flex_load)
    heat = h_min + (used[2] - load_used)
    charge = charge_forced + eta_ch * (used[3] + used[4])

    flex_consumed = [0.0] * len(entries)
    for i in due_idx:
        flex_consumed[i] = entries[i].remaining
    remaining_alloc = load_used
    for i in open_idx:
        take = min(entries[i].remaining, remaining_alloc)
        flex_consumed[i] = take
        remaining_alloc -= take
        if remaining_alloc <= 0.0:
            break
    consumption = c_min + load_used

    net_import = (consumption + heat + charge / eta_ch
                  - eta_dis * discharge - pv)
    return Decisions(charge=charge, discharge=discharge, heat=heat,
                     consumption=consumption, net_import=net_import,
                     flex_consumed=tuple(flex_consumed))


def step_household(state: HouseholdState, decisions: Decisions,
                   day: AgentDay) -> HouseholdState:
    """Advance battery, thermal state and the deferrable-load queue."""
    t = state.t
    prof = day.profile
    home = bool(prof.ev_at_home[t])
    trip = float(prof.ev_demand[t])
    if decisions.charge > (day.battery.max_charge if home else 0.0) + BALANCE_TOL:
        raise RuntimeError("contract violation: charge beyond the gated rate limit")
    if decisions.discharge > (day.battery.capacity if home else 0.0) + BALANCE_TOL:
        raise RuntimeError("contract violation: discharge while away or beyond capacity")
    level = state.battery_level + decisions.charge - decisions.discharge - trip
    if not -BALANCE_TOL <= level <= day.battery.capacity + BALANCE_TOL:
        raise RuntimeError("contract violation: battery level outside its bounds")

    thermal = step_thermal(day.kappa, state.thermal,
                           float(prof.external_temp[t]), float(prof.solar_gain[t]),
                           decisions.heat)

    entries = state.queue.entries
    if len(decisions.flex_consumed) != len(entries):
        raise RuntimeError("contract violation: flex allocation shape mismatch")
    kept = []
    for entry, taken in zip(entries, decisions.flex_consumed):
        if taken > entry.remaining + BALANCE_TOL:
            raise RuntimeError("contract violation: consuming more than demanded")
        left = entry.remaining - taken
        if entry.deadline <= t and left > BALANCE_TOL:
            raise RuntimeError("contract violation: deferrable load missed its deadline")
        if left > BALANCE_TOL:
            kept.append(FlexEntry(remaining=left, demand_step=entry.demand_step,
                                  deadline=entry.deadline))
    t_next = t + 1
    if t_next < day.n_steps:
        queue = _enqueue_demand(day, tuple(kept), t_next)
    else:
        queue = FlexQueue(entries=tuple(kept), fixed_now=0.0)
    return HouseholdState(battery_level=level, thermal=thermal, queue=queue, t=t_next)


def step_system(decisions: list[Decisions], grid: GridParams, t: int,
                batteries: list[BatteryParams]) -> RewardBreakdown:
    """Shared step cost: grid energy with quadratic losses, exports, wear."""
    g = sum(d.net_import for d in decisions)
    losses = grid.loss_coefficient * g * g
    cost = float(grid.import_cost[t])
    grid_cost = cost * (g + losses)
    emissions = float(grid.carbon_cost[t]) / cost * grid_cost
    distribution = grid.export_charge * sum(max(0.0, -d.net_import) for d in decisions)
    storage = sum(b.throughput_cost * (d.charge + d.discharge)
                  for d, b in zip(decisions, batteries))
    return RewardBreakdown(grid_cost=grid_cost, emissions_cost=emissions,
                           distribution_cost=distribution, storage_cost=storage)


@dataclass(frozen=True)
class StepRecord:
    """One agent's state and expanded decisions at one step."""

    state: HouseholdState
    decisions: Decisions


@dataclass(frozen=True)
class DayResult:
    total: RewardBreakdown
    step_rewards: list[RewardBreakdown]
    traces: list[list[StepRecord]]        # per agent, per step
    final_states: list[HouseholdState]


def simulate_day(days: list[AgentDay], grid: GridParams, policy) -> DayResult:
    """Roll one day forward; ``policy(agent, t, state) -> psi``."""
    n_steps = days[0].n_steps
    if grid.n_steps != n_steps:
        raise ValueError("grid series length must match the day horizon")
    states = [initial_state(day) for day in days]
    traces: list[list[StepRecord]] = [[] for _ in days]
    step_rewards: list[RewardBreakdown] = []
    total = RewardBreakdown()
    for t in range(n_steps):
        decisions = []
        for i, day in enumerate(days):
            d = map_action(float(policy(i, t, states[i])), states[i], day)
            decisions.append(d)
            traces[i].append(StepRecord(state=states[i], decisions=d))
            states[i] = step_household(states[i], d, day)
        reward = step_system(decisions, grid, t, [day.battery for day in days])
        step_rewards.append(reward)
        total = total + reward
    return DayResult(total=total, step_rewards=step_rewards, traces=traces,
                     final_states=states)


def baseline_day(days: list[AgentDay], grid: GridParams) -> DayResult:
    """Every agent passive (psi = 1); the savings reference."""
    return simulate_day(days, grid, policy=lambda i, t, s: 1.0)


def validate_day(days: list[AgentDay], grid: GridParams, result: DayResult,
                 balance_tol: float = 1e-9, comfort_tol: float = 1e-6) -> None:
    """Independent day-trace checks, recomputed from raw series.

    Raises AssertionError on the first violated constraint family: energy
    balance, battery corridor and gating, deferral windows, comfort band,
    and the end-of-day battery level.
    """
    for i, day in enumerate(days):
        prof = day.profile
        bat = day.battery
        trace = result.traces[i]
        assert len(trace) == day.n_steps
        consumed_by_step: dict[tuple[int, int], float] = {}
        for t, rec in enumerate(trace):
            d, s = rec.decisions, rec.state
            assert s.t == t
            balance = (d.consumption + d.heat + d.charge / bat.eta_charge
                       - bat.eta_discharge * d.discharge - prof.pv_generation[t])
            assert abs(d.net_import - balance) < balance_tol, "energy balance"
            assert min(d.charge, d.discharge, d.heat, d.consumption) >= 0.0
            home = bool(prof.ev_at_home[t])
            assert d.charge <= (bat.max_charge if home else 0.0) + balance_tol, "charge gating"
            assert d.discharge <= (bat.capacity if home else 0.0) + balance_tol, "discharge gating"
            level_next = (s.battery_level + d.charge - d.discharge - prof.ev_demand[t])
            assert -balance_tol <= level_next <= bat.capacity + balance_tol, "battery capacity"
            if t + 1 < day.n_steps and bool(prof.ev_at_home[t + 1]):
                assert level_next >= bat.min_level - balance_tol, "battery floor"
            air_next = step_thermal(day.kappa, s.thermal, float(prof.external_temp[t]),
                                    float(prof.solar_gain[t]), d.heat).t_air
            assert day.comfort_low[t] - comfort_tol <= air_next <= day.comfort_high[t] + comfort_tol, "comfort"
            for entry, taken in zip(s.queue.entries, d.flex_consumed):
                key = (entry.demand_step, entry.deadline)
                consumed_by_step[key] = consumed_by_step.get(key, 0.0) + taken
                assert entry.demand_step <= t <= entry.deadline, "deferral window"
        # Every flexible demand fully served inside its window.
        for t in range(day.n_steps):
            flexible = day.flexible_share * float(prof.household_demand[t])
            if flexible > 0.0:
                key = (t, min(t + day.flex_window, day.n_steps - 1))
                assert abs(consumed_by_step.get(key, 0.0) - flexible) < balance_tol, "deferred load served"
        assert abs(result.final_states[i].battery_level - bat.initial_level) < balance_tol, "terminal battery level"
        assert not result.final_states[i].queue.entries, "queue drained"
