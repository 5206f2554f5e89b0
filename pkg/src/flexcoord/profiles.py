"""Day-profile synthesis and ingestion for EV, household load and PV.

Each component is described by three fitted objects: normalized daily
shapes (sum of the 24 values is 1) grouped into banks keyed by day type and
behaviour cluster, a cluster transition chain linking consecutive days, and
a scaling-factor chain giving each day's total energy. Chaining a day means
sampling the next cluster from the transition row, drawing a shape uniformly
from the target bank, and moving the scaling factor by a correlated
residual; the day's series is shape times factor.

Load and PV scaling factors move by a mean-shifted gamma residual; EV
factors follow a discrete interval-to-interval transition matrix. PV banks
are keyed by month with a single cluster per month, so the same machinery
covers all three components.
"""
from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

logger = logging.getLogger(__name__)

N_STEPS = 24  # hourly resolution, steps per day


@dataclass(frozen=True)
class DayProfile:
    """Exogenous per-step inputs for one agent over one day."""

    ev_demand: np.ndarray       # kWh consumed travelling, per step
    ev_at_home: np.ndarray      # bool, battery reachable
    household_demand: np.ndarray  # kWh per step
    pv_generation: np.ndarray   # kWh per step
    external_temp: np.ndarray   # degC per step
    solar_gain: np.ndarray      # W per step

    def __post_init__(self) -> None:
        arrays = {}
        for name in ("ev_demand", "household_demand", "pv_generation",
                     "external_temp", "solar_gain"):
            arrays[name] = np.asarray(getattr(self, name), dtype=float)
        arrays["ev_at_home"] = np.asarray(self.ev_at_home, dtype=bool)
        lengths = {a.shape for a in arrays.values()}
        if len(lengths) != 1 or arrays["ev_demand"].ndim != 1:
            raise ValueError("all DayProfile series must be 1-d and share one length")
        for name in ("ev_demand", "household_demand", "pv_generation"):
            if np.any(arrays[name] < 0.0):
                raise ValueError(f"DayProfile.{name} must be non-negative")
        if np.any((arrays["ev_demand"] > 0.0) & arrays["ev_at_home"]):
            raise ValueError("EV consumption requires the vehicle to be away")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def n_steps(self) -> int:
        return len(self.ev_demand)


def bank_key(day_type: str, cluster: int) -> str:
    return f"{day_type}/{cluster}"


def split_bank_key(key: str) -> tuple[str, int]:
    day_type, _, cluster = key.rpartition("/")
    return day_type, int(cluster)


@dataclass(frozen=True)
class ClusterModel:
    """Cluster structure per day type plus transition chain between days."""

    n_clusters: dict[str, int]
    centroids: dict[str, np.ndarray]                 # day type -> (K, T) normalized
    transitions: dict[tuple[str, str], np.ndarray]   # (w, w') -> (K_w, K_w') stochastic
    assignments: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for w, c in self.centroids.items():
            if c.shape[0] != self.n_clusters[w]:
                raise ValueError(f"centroid count mismatch for day type {w!r}")
            if not np.allclose(c.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError("centroids must be normalized to unit daily total")
        for (w, w_next), m in self.transitions.items():
            if m.shape != (self.n_clusters[w], self.n_clusters[w_next]):
                raise ValueError(f"transition shape mismatch for {(w, w_next)!r}")
            if np.any(m < 0.0) or not np.allclose(m.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError("transition rows must be stochastic")


@dataclass(frozen=True)
class GammaResidualScaling:
    """Scaling factor chain lambda' = max(0, lambda + x), x a shifted gamma.

    The residual is gamma-distributed minus its mean (shape*scale), so it is
    zero-mean but keeps the gamma skew. Parameters are keyed per
    (bank, next bank) pair; missing pairs fall back to ``default``.
    """

    shape: dict[tuple[str, str], float]
    scale: dict[tuple[str, str], float]
    default: tuple[float, float] = (2.0, 0.0)

    kind = "gamma-residual"

    def mean_shift(self, pair: tuple[str, str]) -> float:
        shape, scale = self.params(pair)
        return shape * scale

    def params(self, pair: tuple[str, str]) -> tuple[float, float]:
        if pair in self.shape:
            return self.shape[pair], self.scale[pair]
        return self.default

    def sample(self, pair: tuple[str, str], current: float, rng: np.random.Generator) -> float:
        shape, scale = self.params(pair)
        residual = rng.gamma(shape, scale) - shape * scale
        return max(0.0, current + residual)


@dataclass(frozen=True)
class DiscreteMatrixScaling:
    """Scaling factor chain over fixed intervals with a transition matrix.

    The next factor's interval is drawn from the row of the current one,
    conditioned on the (bank, next bank) pair where a matrix was fitted;
    sparse or unseen pairs use the marginal matrix. The factor itself is
    placed uniformly inside the drawn interval.
    """

    edges: np.ndarray                                   # n_intervals + 1 edges
    matrices: dict[tuple[str, str], np.ndarray]         # (b, b') -> (n, n) stochastic
    marginal: np.ndarray

    kind = "discrete-matrix"

    def __post_init__(self) -> None:
        n = len(self.edges) - 1
        for m in list(self.matrices.values()) + [self.marginal]:
            if m.shape != (n, n):
                raise ValueError("scaling matrices must match the interval count")
            if np.any(m < 0.0) or not np.allclose(m.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError("scaling matrix rows must be stochastic")

    def interval_of(self, value: float) -> int:
        n = len(self.edges) - 1
        return int(np.clip(np.searchsorted(self.edges, value, side="right") - 1, 0, n - 1))

    def sample(self, pair: tuple[str, str], current: float, rng: np.random.Generator) -> float:
        matrix = self.matrices.get(pair, self.marginal)
        row = matrix[self.interval_of(current)]
        nxt = rng.choice(len(row), p=row)
        return float(rng.uniform(self.edges[nxt], self.edges[nxt + 1]))


ScalingModel = GammaResidualScaling | DiscreteMatrixScaling


@dataclass(frozen=True)
class ProfileBank:
    """Normalized daily shapes grouped by bank key.

    EV banks carry a matching at-home pattern per shape; consumption is only
    placed on away steps.
    """

    profiles: dict[str, np.ndarray]                      # key -> (n, T) rows sum to 1
    availability: dict[str, np.ndarray] | None = None    # key -> (n, T) bool

    def __post_init__(self) -> None:
        for key, rows in self.profiles.items():
            if rows.ndim != 2 or rows.shape[0] == 0:
                raise ValueError(f"bank {key!r} must hold at least one profile")
            if np.any(rows < 0.0) or not np.allclose(rows.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError(f"bank {key!r} profiles must be normalized and non-negative")
            if self.availability is not None:
                avail = self.availability[key]
                if avail.shape != rows.shape:
                    raise ValueError(f"bank {key!r} availability shape mismatch")
                if np.any((rows > 0.0) & avail):
                    raise ValueError(f"bank {key!r} places consumption on at-home steps")


@dataclass(frozen=True)
class ComponentModels:
    """Everything needed to chain one component across days."""

    clusters: ClusterModel
    scaling: ScalingModel
    bank: ProfileBank


@dataclass(frozen=True)
class ChainState:
    """Position of one agent's chain for one component."""

    bank: str      # current bank key, e.g. "wd/2"
    scale: float   # current daily total (lambda)


# --- clustering -------------------------------------------------------------

def _features_load(profiles: np.ndarray) -> np.ndarray:
    t = profiles.shape[1]
    peak = profiles.max(axis=1)
    peak_time = profiles.argmax(axis=1) / (t - 1)
    morning = profiles[:, 7:10].mean(axis=1)
    evening = profiles[:, 17:22].mean(axis=1)
    return np.column_stack([peak, peak_time, morning, evening])


def _features_ev(profiles: np.ndarray) -> np.ndarray:
    # Hourly values covering 06:00-22:00.
    return profiles[:, 6:22]


_FEATURE_EXTRACTORS = {
    "raw": lambda profiles: profiles,
    "load": _features_load,
    "ev": _features_ev,
}


def fit_clusters(profiles: np.ndarray, n_clusters: int, features: str = "raw",
                 day_type: str = "wd", seed: int = 0) -> ClusterModel:
    """K-means over extracted features; centroids are mean daily shapes.

    Clustering runs in feature space, but the stored centroid of each
    cluster is the mean of its assigned normalized shapes so downstream
    consumers always see 24-vectors. Labels are relabelled in order of first
    appearance, which makes assignments deterministic for a given seed.
    """
    profiles = np.asarray(profiles, dtype=float)
    if n_clusters < 1:
        raise ValueError("n_clusters must be at least 1")
    if profiles.ndim != 2 or profiles.shape[0] < n_clusters:
        raise ValueError("insufficient data: need at least one profile per cluster")
    if features not in _FEATURE_EXTRACTORS:
        raise ValueError(f"unknown feature extractor {features!r}")
    x = _FEATURE_EXTRACTORS[features](profiles)
    km = KMeans(n_clusters=n_clusters, n_init=10, random_state=seed)
    raw_labels = km.fit_predict(x)
    # Stable relabelling: clusters numbered by first appearance in the data.
    order = {}
    for lab in raw_labels:
        if lab not in order:
            order[lab] = len(order)
    labels = np.array([order[lab] for lab in raw_labels])
    centroids = np.stack([profiles[labels == k].mean(axis=0) for k in range(n_clusters)])
    centroids /= centroids.sum(axis=1, keepdims=True)
    return ClusterModel(
        n_clusters={day_type: n_clusters},
        centroids={day_type: centroids},
        transitions={},
        assignments={day_type: labels},
    )


# --- day chaining -----------------------------------------------------------

def next_day(current: ChainState, day_type_next: str, models: ComponentModels,
             rng: np.random.Generator,
             ) -> tuple[np.ndarray, np.ndarray | None, ChainState]:
    """Advance one component by one day.

    Returns the day's series (shape times new factor), the at-home pattern
    for EV banks (None otherwise), and the updated chain state.
    """
    day_type, cluster = split_bank_key(current.bank)
    pair = (day_type, day_type_next)
    if pair not in models.clusters.transitions:
        raise ValueError(f"no transition fitted for day types {pair!r}")
    row = models.clusters.transitions[pair][cluster]
    cluster_next = int(rng.choice(len(row), p=row))
    key_next = bank_key(day_type_next, cluster_next)
    if key_next not in models.bank.profiles:
        raise ValueError(f"empty bank {key_next!r}")
    rows = models.bank.profiles[key_next]
    idx = int(rng.integers(rows.shape[0]))
    shape = rows[idx]
    scale_next = models.scaling.sample((current.bank, key_next), current.scale, rng)
    availability = None
    if models.bank.availability is not None:
        availability = models.bank.availability[key_next][idx]
    return shape * scale_next, availability, ChainState(bank=key_next, scale=scale_next)


def initial_chain_state(models: ComponentModels, day_type: str,
                        rng: np.random.Generator, scale: float) -> ChainState:
    """Uniformly pick a starting cluster for a day type."""
    k = int(rng.integers(models.clusters.n_clusters[day_type]))
    return ChainState(bank=bank_key(day_type, k), scale=scale)


# --- synthetic generation ---------------------------------------------------

@dataclass(frozen=True)
class SyntheticBankConfig:
    """Knobs for the synthetic stand-in for measured profile archives."""

    component: str                     # "load" | "ev" | "pv"
    day_types: tuple[str, ...] = ("wd", "we")
    n_clusters: int = 4
    bank_size: int = 20
    n_steps: int = N_STEPS
    scale_range: tuple[float, float] = (4.0, 16.0)   # daily kWh totals
    correlation: float = 0.7           # 1.0 freezes the factor chain
    gamma_shape: float = 2.0
    persistence: float = 0.6           # extra self-transition mass
    concentration: float = 300.0       # Dirichlet tightness around centroids
    n_intervals: int = 50

    def __post_init__(self) -> None:
        if self.component not in ("load", "ev", "pv"):
            raise ValueError("component must be one of load/ev/pv")
        if not 0.0 <= self.correlation <= 1.0:
            raise ValueError("correlation must lie in [0, 1]")
        if self.scale_range[0] < 0.0 or self.scale_range[1] <= self.scale_range[0]:
            raise ValueError("scale_range must be non-negative and increasing")
        if self.n_clusters < 1 or self.bank_size < 1:
            raise ValueError("n_clusters and bank_size must be at least 1")
        if self.persistence < 0.0:
            raise ValueError("persistence must be non-negative")


def _bump(hours: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((hours - center) / width) ** 2)


def _synthetic_centroids(cfg: SyntheticBankConfig, rng: np.random.Generator,
                         ) -> tuple[np.ndarray, np.ndarray | None]:
    """Cluster-mean shapes (K, T), plus at-home patterns for EV."""
    hours = np.arange(cfg.n_steps, dtype=float)
    shapes, away = [], []
    for k in range(cfg.n_clusters):
        if cfg.component == "load":
            morning = _bump(hours, center=rng.uniform(6.5, 9.0), width=rng.uniform(1.0, 2.0))
            evening = _bump(hours, center=rng.uniform(17.0, 20.5), width=rng.uniform(1.2, 2.5))
            w_morning = rng.uniform(0.3, 1.2)
            shape = 0.35 + w_morning * morning + evening
        elif cfg.component == "pv":
            shape = _bump(hours, center=rng.uniform(11.0, 13.0), width=rng.uniform(2.8, 3.8))
            shape += 1e-6  # keep strictly positive for Dirichlet sampling
        else:  # ev: consumption concentrated on away hours
            depart = int(rng.integers(7, 10))
            arrive = int(rng.integers(15, 19))
            is_away = (hours >= depart) & (hours < arrive)
            shape = np.where(is_away, 1.0, 0.0)
            away.append(is_away)
        shapes.append(shape / shape.sum())
    return np.stack(shapes), (np.stack(away) if away else None)


def _synthetic_transitions(cfg: SyntheticBankConfig, rng: np.random.Generator,
                           ) -> dict[tuple[str, str], np.ndarray]:
    transitions = {}
    k = cfg.n_clusters
    for w in cfg.day_types:
        for w_next in cfg.day_types:
            raw = rng.dirichlet(np.ones(k), size=k)
            raw += cfg.persistence * np.eye(k)
            transitions[(w, w_next)] = raw / raw.sum(axis=1, keepdims=True)
    return transitions


def generate_synthetic_bank(cfg: SyntheticBankConfig, rng: np.random.Generator) -> ComponentModels:
    """Build an internally consistent model triple for one component."""
    centroid_shapes, away = _synthetic_centroids(cfg, rng)
    lo, hi = cfg.scale_range

    profiles: dict[str, np.ndarray] = {}
    availability: dict[str, np.ndarray] | None = {} if cfg.component == "ev" else None
    centroids: dict[str, np.ndarray] = {}
    for w in cfg.day_types:
        centroids[w] = centroid_shapes
        for k in range(cfg.n_clusters):
            key = bank_key(w, k)
            if cfg.component == "ev":
                support = away[k]
                alpha = np.full(support.sum(), cfg.concentration / support.sum())
                rows = np.zeros((cfg.bank_size, cfg.n_steps))
                rows[:, support] = rng.dirichlet(alpha, size=cfg.bank_size)
                availability[key] = np.broadcast_to(~support, rows.shape).copy()
            else:
                alpha = np.maximum(centroid_shapes[k], 1e-4) * cfg.concentration
                rows = rng.dirichlet(alpha, size=cfg.bank_size)
            profiles[key] = rows

    clusters = ClusterModel(
        n_clusters={w: cfg.n_clusters for w in cfg.day_types},
        centroids=centroids,
        transitions=_synthetic_transitions(cfg, rng),
    )

    scaling: ScalingModel
    if cfg.component == "ev":
        n = cfg.n_intervals
        edges = np.linspace(lo, hi, n + 1)
        # Band matrix around the diagonal; tighter bands for stronger
        # day-to-day correlation. correlation = 1 pins the interval.
        width = max((1.0 - cfg.correlation) * n / 4.0, 1e-9)
        idx = np.arange(n)
        band = np.exp(-0.5 * ((idx[None, :] - idx[:, None]) / width) ** 2)
        band /= band.sum(axis=1, keepdims=True)
        scaling = DiscreteMatrixScaling(edges=edges, matrices={}, marginal=band)
    else:
        sd = (1.0 - cfg.correlation) * (hi - lo) / 4.0
        theta = sd / np.sqrt(cfg.gamma_shape)
        scaling = GammaResidualScaling(shape={}, scale={},
                                       default=(cfg.gamma_shape, float(theta)))
    return ComponentModels(clusters=clusters, scaling=scaling, bank=ProfileBank(
        profiles=profiles, availability=availability))


# --- CSV ingestion ----------------------------------------------------------

@dataclass(frozen=True)
class RawProfile:
    """One day of one metered series as read from disk."""

    profile_id: str
    date: dt.date
    day_type: str
    values: np.ndarray


CSV_HEADER = ["id", "date", "day_type"] + [f"h{h:02d}" for h in range(N_STEPS)]


def _fill_candidates(table: dict[tuple[str, dt.date], list[float | None]],
                     profile_id: str, date: dt.date, t: int) -> list[float]:
    candidates = []
    for delta in (-1, 1, -7, 7):
        neighbour = table.get((profile_id, date + dt.timedelta(days=delta)))
        if neighbour is not None and neighbour[t] is not None:
            candidates.append(neighbour[t])
    return candidates


def load_profiles_csv(path) -> list[RawProfile]:
    """Read daily profiles, filling isolated missing points.

    A single missing point is replaced by the value at the same time one day
    or one week before or after (same id), choosing the candidate with the
    lowest sum of squared differences to the points adjacent to the gap.
    Days with two consecutive missing points, or with a gap no candidate can
    fill, are dropped with a warning.
    """
    rows: list[tuple[int, str, dt.date, str, list[float | None]]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"line 1: expected header {','.join(CSV_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"line {line_no}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                date = dt.date.fromisoformat(row[1])
                values = [float(v) if v.strip() != "" else None for v in row[3:]]
            except ValueError as exc:
                raise ValueError(f"line {line_no}: {exc}") from None
            rows.append((line_no, row[0], date, row[2], values))

    table = {(pid, date): values for _, pid, date, _, values in rows}
    out: list[RawProfile] = []
    for line_no, pid, date, day_type, values in rows:
        missing = [t for t, v in enumerate(values) if v is None]
        if any(b - a == 1 for a, b in zip(missing, missing[1:])):
            logger.warning("line %d: dropping %s %s, consecutive missing points",
                           line_no, pid, date)
            continue
        filled = list(values)
        ok = True
        for t in missing:
            candidates = _fill_candidates(table, pid, date, t)
            if not candidates:
                logger.warning("line %d: dropping %s %s, no fill candidate for hour %d",
                               line_no, pid, date, t)
                ok = False
                break
            neighbours = [values[t - 1] if t > 0 else None,
                          values[t + 1] if t < len(values) - 1 else None]
            neighbours = [n for n in neighbours if n is not None]

            def score(v: float) -> float:
                return sum((v - n) ** 2 for n in neighbours)

            filled[t] = min(candidates, key=score)
        if ok:
            out.append(RawProfile(profile_id=pid, date=date, day_type=day_type,
                                  values=np.array(filled, dtype=float)))
    return out
