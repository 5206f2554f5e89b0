"""Tabular multi-agent Q-learning over the day environment.

Agents learn fixed-size Q-tables over a tiny state space (three uniform
grid-cost buckets per day) and the ten-point action ladder, so table size
never grows with the number of agents. Updates are hysteretic: pessimistic
news moves an estimate at a fraction beta of the optimistic rate, which
keeps concurrently-learning agents from unlearning good actions because of
teammates' exploration noise.

A strategy is the combination of an experience source (environment rollouts
with epsilon-greedy actions, or day-optimiser schedules projected onto the
action ladder), a reward definition (total system reward, an agent's
marginal contribution, an advantage bootstrapped from the total-reward
table, or plain visit counts), and a table structure (one table per agent,
or a single shared one). Each training epoch explores a fixed number of
episode days, applies the batch of experience in deterministic agent-major
order, then evaluates the greedy policy on a freshly drawn day against the
passive baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import (
    AgentDay,
    Decisions,
    GridParams,
    HouseholdState,
    baseline_day,
    initial_state,
    map_action,
    simulate_day,
    step_household,
    step_system,
)
from .optimiser import DayProblem, build_problem, extract_experience, solve_day

N_STATES = 3
N_ACTIONS = 10

SOURCES = ("environment", "optimisation")
REWARDS = ("total", "marginal", "advantage", "count")
STRUCTURES = ("distributed", "centralised")

# Named strategy presets; the letter pairs reward initial with source initial.
ACRONYMS = {
    "TE": ("environment", "total", "centralised"),
    "ME": ("environment", "marginal", "centralised"),
    "AE": ("environment", "advantage", "centralised"),
    "TO": ("optimisation", "total", "distributed"),
    "MO": ("optimisation", "marginal", "distributed"),
    "AO": ("optimisation", "advantage", "distributed"),
    "CO": ("optimisation", "count", "distributed"),
}


def action_ladder(n_actions: int = N_ACTIONS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_actions)


@dataclass
class QTable:
    """Estimates and visit counters over (state, action) pairs."""

    values: np.ndarray
    counts: np.ndarray

    @classmethod
    def zeros(cls, n_states: int = N_STATES, n_actions: int = N_ACTIONS) -> "QTable":
        return cls(values=np.zeros((n_states, n_actions)),
                   counts=np.zeros((n_states, n_actions), dtype=np.int64))

    def __post_init__(self) -> None:
        if self.values.shape != self.counts.shape or self.values.ndim != 2:
            raise ValueError("values and counts must share a 2-d shape")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite table entries")

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    def greedy(self, state: int) -> int:
        return int(np.argmax(self.values[state]))


@dataclass(frozen=True)
class LearningParams:
    gamma: float = 0.99
    alpha: float = 0.01
    beta: float = 0.5
    epsilon: float = 0.5
    epochs: int = 50
    episodes_per_epoch: int = 2
    repetitions: int = 10

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if min(self.epochs, self.episodes_per_epoch, self.repetitions) < 1:
            raise ValueError("epochs, episodes and repetitions must be positive")


@dataclass(frozen=True)
class ExperienceTuple:
    agent: int
    state: int
    action: int
    reward_total: float
    state_next: int
    reward_marginal: float | None = None
    terminal: bool = False


@dataclass(frozen=True)
class StrategyConfig:
    source: str
    reward: str
    structure: str

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.reward not in REWARDS:
            raise ValueError(f"unknown reward {self.reward!r}")
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown structure {self.structure!r}")
        if self.reward == "count" and self.source != "optimisation":
            raise ValueError("count learning consumes optimiser schedules only")

    @classmethod
    def from_acronym(cls, name: str) -> "StrategyConfig":
        try:
            source, reward, structure = ACRONYMS[name.upper()]
        except KeyError:
            raise ValueError(f"unknown strategy acronym {name!r}") from None
        return cls(source=source, reward=reward, structure=structure)

    @property
    def acronym(self) -> str | None:
        key = (self.source, self.reward, self.structure)
        for name, combo in ACRONYMS.items():
            if combo == key:
                return name
        return None


def discretize_state(cost: float, low: float, high: float,
                     n_states: int = N_STATES) -> int:
    """Uniform bucket of a grid cost within the day's [low, high] range."""
    if high <= low:
        return 0
    x = (cost - low) / (high - low) * n_states
    return min(int(x), n_states - 1)


def select_action(table: QTable, state: int, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy: explore with probability epsilon, else argmax."""
    if rng.random() < epsilon:
        return int(rng.integers(table.n_actions))
    return table.greedy(state)


def _td_update(table: QTable, state: int, action: int, reward: float,
               state_next: int, terminal: bool, params: LearningParams) -> None:
    bootstrap = 0.0 if terminal else params.gamma * float(np.max(table.values[state_next]))
    delta = reward + bootstrap - table.values[state, action]
    alpha = params.alpha if delta > 0.0 else params.alpha * params.beta
    table.values[state, action] += alpha * delta
    table.counts[state, action] += 1


def update_total(table: QTable, tup: ExperienceTuple,
                 params: LearningParams) -> None:
    """One hysteretic TD step on the total system reward."""
    _td_update(table, tup.state, tup.action, tup.reward_total, tup.state_next,
               tup.terminal, params)


def update_marginal(table: QTable, tup: ExperienceTuple,
                    params: LearningParams) -> None:
    """The same TD rule fed with the agent's marginal contribution."""
    if tup.reward_marginal is None:
        raise ValueError("tuple carries no marginal reward")
    _td_update(table, tup.state, tup.action, tup.reward_marginal,
               tup.state_next, tup.terminal, params)


def update_advantage(total_table: QTable, advantage_table: QTable,
                     tup: ExperienceTuple, params: LearningParams,
                     default_action: int | None = None) -> None:
    """Regress the gap between an action's value and the passive action's.

    The total-reward table must be kept up to date alongside; no extra
    simulation is involved, the target is a difference of its entries.
    """
    if default_action is None:
        default_action = advantage_table.n_actions - 1
    s, a = tup.state, tup.action
    target = total_table.values[s, a] - total_table.values[s, default_action]
    delta = target - advantage_table.values[s, a]
    alpha = params.alpha if delta > 0.0 else params.alpha * params.beta
    advantage_table.values[s, a] += alpha * delta
    advantage_table.counts[s, a] += 1


def update_count(table: QTable, tup: ExperienceTuple) -> None:
    """Tally how often the optimiser lands on each (state, action) pair."""
    table.values[tup.state, tup.action] += 1.0
    table.counts[tup.state, tup.action] += 1


def compute_marginal_reward(decisions: list[Decisions],
                            states: list[HouseholdState], deviant: int,
                            days: list[AgentDay], grid: GridParams,
                            t: int) -> float:
    """Step-reward gap between the taken joint step and one where the
    deviating agent plays the passive action instead."""
    batteries = [d.battery for d in days]
    taken = step_system(decisions, grid, t, batteries).reward
    passive = map_action(1.0, states[deviant], days[deviant])
    swapped = [passive if i == deviant else d for i, d in enumerate(decisions)]
    return taken - step_system(swapped, grid, t, batteries).reward


@dataclass(frozen=True)
class FixedScenario:
    """Always serves the same day; handy for deterministic toy problems."""

    days: list[AgentDay]
    grid: GridParams

    @property
    def n_agents(self) -> int:
        return len(self.days)

    def sample(self, rng: np.random.Generator):
        return self.days, self.grid


@dataclass(frozen=True)
class EvaluationResult:
    """Greedy-policy day versus the passive baseline, GBP per agent-hour."""

    savings: float
    reward: float
    baseline_reward: float
    grid_delta: float
    export_delta: float
    storage_delta: float
    emissions_delta: float


def evaluate(policy, days: list[AgentDay], grid: GridParams) -> EvaluationResult:
    """Savings of ``policy(agent, t, state) -> psi`` over the passive day."""
    result = simulate_day(days, grid, policy)
    base = baseline_day(days, grid)
    agent_hours = len(days) * days[0].n_steps
    return EvaluationResult(
        savings=(result.total.reward - base.total.reward) / agent_hours,
        reward=result.total.reward,
        baseline_reward=base.total.reward,
        grid_delta=(base.total.grid_cost - result.total.grid_cost) / agent_hours,
        export_delta=(base.total.distribution_cost - result.total.distribution_cost) / agent_hours,
        storage_delta=(base.total.storage_cost - result.total.storage_cost) / agent_hours,
        emissions_delta=(base.total.emissions_cost - result.total.emissions_cost) / agent_hours,
    )


def greedy_policy(tables: list[QTable], strategy: StrategyConfig,
                  grid: GridParams, n_actions: int = N_ACTIONS):
    """Deterministic argmax policy over the day's discretized grid costs."""
    ladder = action_ladder(n_actions)
    low = float(np.min(grid.import_cost))
    high = float(np.max(grid.import_cost))

    def policy(agent: int, t: int, state) -> float:
        table = tables[agent] if strategy.structure == "distributed" else tables[0]
        s = discretize_state(float(grid.import_cost[t]), low, high)
        return float(ladder[table.greedy(s)])

    return policy


def _rollout_episode(tables: list[QTable], strategy: StrategyConfig,
                     days: list[AgentDay], grid: GridParams,
                     params: LearningParams, rng: np.random.Generator,
                     n_actions: int) -> list[list[ExperienceTuple]]:
    """One epsilon-greedy day; returns tuples per agent in time order."""
    ladder = action_ladder(n_actions)
    low = float(np.min(grid.import_cost))
    high = float(np.max(grid.import_cost))
    t_end = days[0].n_steps
    batteries = [d.battery for d in days]
    states = [initial_state(day) for day in days]
    per_agent: list[list[ExperienceTuple]] = [[] for _ in days]
    buckets = [discretize_state(float(grid.import_cost[t]), low, high)
               for t in range(t_end)]
    for t in range(t_end):
        s_idx = buckets[t]
        s_next = buckets[t + 1] if t + 1 < t_end else s_idx
        actions = []
        decisions = []
        for i, day in enumerate(days):
            table = tables[i] if strategy.structure == "distributed" else tables[0]
            a = select_action(table, s_idx, params.epsilon, rng)
            actions.append(a)
            decisions.append(map_action(float(ladder[a]), states[i], day))
        reward = step_system(decisions, grid, t, batteries).reward
        for i, day in enumerate(days):
            marginal = None
            if strategy.reward == "marginal":
                marginal = compute_marginal_reward(decisions, states, i, days,
                                                   grid, t)
            per_agent[i].append(ExperienceTuple(
                agent=i, state=s_idx, action=actions[i], reward_total=reward,
                state_next=s_next, reward_marginal=marginal,
                terminal=t == t_end - 1))
        states = [step_household(states[i], decisions[i], day)
                  for i, day in enumerate(days)]
    return per_agent


def _schedule_episode(problem_cache: dict, days: list[AgentDay],
                      grid: GridParams,
                      n_actions: int) -> list[list[ExperienceTuple]]:
    """Solve the day, project it onto the ladder, bucket its prices."""
    if "dp" not in problem_cache:
        problem_cache["dp"] = build_problem(days, grid)
    else:
        problem_cache["dp"].rebind(days, grid)
    dp: DayProblem = problem_cache["dp"]
    schedule = solve_day(dp)
    steps = extract_experience(days, grid, schedule, n_actions=n_actions)
    low = float(np.min(grid.import_cost))
    high = float(np.max(grid.import_cost))
    t_end = days[0].n_steps
    buckets = [discretize_state(float(grid.import_cost[t]), low, high)
               for t in range(t_end)]
    per_agent: list[list[ExperienceTuple]] = [[] for _ in days]
    for step in steps:
        s_next = buckets[step.t + 1] if step.t + 1 < t_end else buckets[step.t]
        per_agent[step.agent].append(ExperienceTuple(
            agent=step.agent, state=buckets[step.t], action=step.action,
            reward_total=step.reward_total, state_next=s_next,
            reward_marginal=step.reward_marginal, terminal=step.terminal))
    return per_agent


def _apply_batch(strategy: StrategyConfig, tables: list[QTable],
                 aux_tables: list[QTable] | None,
                 batch: list[list[ExperienceTuple]],
                 params: LearningParams) -> None:
    """Agent-major, then time-major; one rule application per tuple."""
    n_tables = len(tables)
    for agent, tuples in enumerate(batch):
        slot = agent if n_tables > 1 else 0
        for tup in tuples:
            if strategy.reward == "total":
                update_total(tables[slot], tup, params)
            elif strategy.reward == "marginal":
                update_marginal(tables[slot], tup, params)
            elif strategy.reward == "advantage":
                update_total(aux_tables[slot], tup, params)
                update_advantage(aux_tables[slot], tables[slot], tup, params)
            else:
                update_count(tables[slot], tup)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    evaluation: EvaluationResult


@dataclass
class TrainResult:
    strategy: StrategyConfig
    params: LearningParams
    records: list[EpochRecord]
    tables: list[QTable]
    aux_tables: list[QTable] | None = None

    @property
    def savings(self) -> np.ndarray:
        return np.array([r.evaluation.savings for r in self.records])


def train(strategy: StrategyConfig, scenario, params: LearningParams,
          seed: int, n_actions: int = N_ACTIONS,
          n_states: int = N_STATES) -> TrainResult:
    """Run the explore/update/evaluate loop for one repetition.

    ``scenario`` provides ``n_agents`` and ``sample(rng) -> (days, grid)``;
    training and evaluation days come from independent streams spawned off
    the seed, so evaluation data is always fresh.
    """
    explore_ss, eval_ss = np.random.SeedSequence(seed).spawn(2)
    explore_rng = np.random.default_rng(explore_ss)
    eval_rng = np.random.default_rng(eval_ss)
    n_tables = scenario.n_agents if strategy.structure == "distributed" else 1
    tables = [QTable.zeros(n_states, n_actions) for _ in range(n_tables)]
    aux = ([QTable.zeros(n_states, n_actions) for _ in range(n_tables)]
           if strategy.reward == "advantage" else None)
    problem_cache: dict = {}
    records = []
    for epoch in range(params.epochs):
        batch: list[list[ExperienceTuple]] = [[] for _ in range(scenario.n_agents)]
        for _ in range(params.episodes_per_epoch):
            days, grid = scenario.sample(explore_rng)
            if strategy.source == "optimisation":
                episode = _schedule_episode(problem_cache, days, grid, n_actions)
            else:
                episode = _rollout_episode(tables, strategy, days, grid,
                                           params, explore_rng, n_actions)
            for i, tuples in enumerate(episode):
                batch[i].extend(tuples)
        _apply_batch(strategy, tables, aux, batch, params)
        eval_days, eval_grid = scenario.sample(eval_rng)
        policy = greedy_policy(tables, strategy, eval_grid, n_actions)
        records.append(EpochRecord(epoch=epoch,
                                   evaluation=evaluate(policy, eval_days, eval_grid)))
    return TrainResult(strategy=strategy, params=params, records=records,
                       tables=tables, aux_tables=aux)
