"""Run configuration: one YAML document covering every tunable constant.

Each physical constant defaults to the case-study input value so an empty
config file reproduces the reference setup. Sections are plain dataclasses;
``load_config`` rejects unknown keys rather than guessing.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .env import BatteryParams, GridParams
from .thermal import BuildingParams, ThermalCoefficients, comfort_band, derive_kappa

N_STEPS = 24


@dataclass(frozen=True)
class BatterySection:
    """EV battery constants; cost is metered per unit of throughput."""

    capacity_kwh: float = 75.0
    max_charge_kw: float = 22.0
    min_level_fraction: float = 0.1
    initial_level_fraction: float = 0.5
    roundtrip_efficiency: float = 0.87
    throughput_cost_usd_per_mwh: float = 20.0
    # Exchange rate for the USD-quoted storage cost; absolute savings
    # figures shift with it.
    usd_to_gbp: float = 0.78

    def to_params(self) -> BatteryParams:
        eta = math.sqrt(self.roundtrip_efficiency)
        return BatteryParams(
            capacity=self.capacity_kwh,
            min_level=self.min_level_fraction * self.capacity_kwh,
            initial_level=self.initial_level_fraction * self.capacity_kwh,
            max_charge=self.max_charge_kw,
            eta_charge=eta,
            eta_discharge=eta,
            throughput_cost=(self.throughput_cost_usd_per_mwh
                             * self.usd_to_gbp / 1000.0),
        )


@dataclass(frozen=True)
class GridSection:
    voltage_v: float = 415.0
    resistance_ohm: float = 0.084
    export_charge_gbp_per_kwh: float = 0.01
    scc_gbp_per_tonne: float = 70.0


@dataclass(frozen=True)
class PriceSection:
    """Grid price and carbon-intensity series.

    ``source`` is either "synthetic" (two-level time-of-use) or the path of
    a CSV with columns hour, price_gbp_per_kwh, intensity_kg_per_kwh.
    """

    source: str = "synthetic"
    night_price_gbp_per_kwh: float = 0.08
    day_price_gbp_per_kwh: float = 0.16
    day_start_hour: int = 7
    day_end_hour: int = 23
    intensity_kg_per_kwh: float = 0.2


@dataclass(frozen=True)
class ThermalSection:
    internal_gain_w_per_m2: float = 3.5
    day_target_c: float = 20.0
    setback_target_c: float = 16.0
    band_c: float = 3.0
    comfort_windows: tuple[tuple[int, int], ...] = ((7, 10), (17, 22))

    def to_kappa(self) -> ThermalCoefficients:
        return derive_kappa(BuildingParams(),
                            internal_gain_rate=self.internal_gain_w_per_m2)

    def to_band(self, n_steps: int = N_STEPS) -> tuple[np.ndarray, np.ndarray]:
        return comfort_band(n_steps, self.day_target_c, self.setback_target_c,
                            self.band_c, self.comfort_windows)


@dataclass(frozen=True)
class FlexibilitySection:
    share: float = 0.1
    window_steps: int = 5


@dataclass(frozen=True)
class LearningSection:
    gamma: float = 0.99
    alpha: float = 0.01
    beta: float = 0.5
    epsilon: float = 0.5
    epochs: int = 50
    episodes_per_epoch: int = 2


@dataclass(frozen=True)
class SyntheticSection:
    """Texture of the generated case study (profile banks and weather)."""

    n_clusters: int = 4
    bank_size: int = 20
    demand_kwh_range: tuple[float, float] = (8.0, 16.0)
    pv_kwh_range: tuple[float, float] = (1.0, 4.0)
    ev_kwh_range: tuple[float, float] = (4.0, 10.0)
    correlation: float = 0.7
    weekday_fraction: float = 5.0 / 7.0
    temp_mean_c: float = 6.0
    temp_swing_c: float = 4.0
    temp_noise_c: float = 0.5
    # January solar heat gains are negligible; left at zero by default.
    solar_gain_peak_w: float = 0.0


@dataclass(frozen=True)
class MatrixSection:
    agent_counts: tuple[int, ...] = (1, 3, 5, 10)
    strategies: tuple[str, ...] = ("TE", "ME", "AE", "TO", "MO", "AO", "CO")
    repetitions: int = 10
    seed: int = 0
    workers: int = 1


@dataclass(frozen=True)
class ScenarioConfig:
    battery: BatterySection = field(default_factory=BatterySection)
    grid: GridSection = field(default_factory=GridSection)
    prices: PriceSection = field(default_factory=PriceSection)
    thermal: ThermalSection = field(default_factory=ThermalSection)
    flexibility: FlexibilitySection = field(default_factory=FlexibilitySection)
    learning: LearningSection = field(default_factory=LearningSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    matrix: MatrixSection = field(default_factory=MatrixSection)
    n_steps: int = N_STEPS


_SECTIONS = {
    "battery": BatterySection,
    "grid": GridSection,
    "prices": PriceSection,
    "thermal": ThermalSection,
    "flexibility": FlexibilitySection,
    "learning": LearningSection,
    "synthetic": SyntheticSection,
    "matrix": MatrixSection,
}

# YAML carries lists; these fields want tuples back.
_TUPLE_FIELDS = {
    ("thermal", "comfort_windows"): lambda v: tuple(tuple(int(x) for x in w) for w in v),
    ("synthetic", "demand_kwh_range"): lambda v: tuple(float(x) for x in v),
    ("synthetic", "pv_kwh_range"): lambda v: tuple(float(x) for x in v),
    ("synthetic", "ev_kwh_range"): lambda v: tuple(float(x) for x in v),
    ("matrix", "agent_counts"): lambda v: tuple(int(x) for x in v),
    ("matrix", "strategies"): lambda v: tuple(str(x) for x in v),
}


def config_from_dict(raw: dict) -> ScenarioConfig:
    """Build a config from nested dicts, rejecting unknown keys."""
    raw = dict(raw or {})
    kwargs = {}
    n_steps = raw.pop("n_steps", N_STEPS)
    for name, cls in _SECTIONS.items():
        section = raw.pop(name, None)
        if section is None:
            continue
        if not isinstance(section, dict):
            raise ValueError(f"config section {name!r} must be a mapping")
        section = dict(section)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(section) - known
        if unknown:
            raise ValueError(
                f"unknown keys in config section {name!r}: {sorted(unknown)}")
        for key, conv in _TUPLE_FIELDS.items():
            if key[0] == name and key[1] in section:
                section[key[1]] = conv(section[key[1]])
        kwargs[name] = cls(**section)
    if raw:
        raise ValueError(f"unknown top-level config keys: {sorted(raw)}")
    return ScenarioConfig(n_steps=int(n_steps), **kwargs)


def config_to_dict(config: ScenarioConfig) -> dict:
    out: dict = {"n_steps": config.n_steps}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(config, name))
        for key, value in section.items():
            if isinstance(value, tuple):
                section[key] = [list(v) if isinstance(v, tuple) else v
                                for v in value]
        out[name] = section
    return out


def load_config(path) -> ScenarioConfig:
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValueError("config file must hold a mapping of sections")
    config = config_from_dict(raw)
    validate_config(config)
    return config


def save_config(config: ScenarioConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(config), sort_keys=False))


def validate_config(config: ScenarioConfig) -> None:
    """Raise ValueError on out-of-range values; cheap enough to run always."""
    config.battery.to_params()  # reuses the battery invariant checks
    if config.n_steps < 2:
        raise ValueError("n_steps must be at least 2")
    if not 0.0 < config.battery.roundtrip_efficiency <= 1.0:
        raise ValueError("roundtrip_efficiency must lie in (0, 1]")
    if config.grid.voltage_v <= 0.0 or config.grid.resistance_ohm < 0.0:
        raise ValueError("grid voltage must be positive, resistance non-negative")
    if config.grid.scc_gbp_per_tonne < 0.0:
        raise ValueError("social cost of carbon must be non-negative")
    p = config.prices
    if p.source == "synthetic":
        if p.night_price_gbp_per_kwh <= 0.0 or p.day_price_gbp_per_kwh <= 0.0:
            raise ValueError("prices must be strictly positive")
        if not 0 <= p.day_start_hour < p.day_end_hour <= config.n_steps:
            raise ValueError("day window hours must be ordered within the horizon")
        if p.intensity_kg_per_kwh < 0.0:
            raise ValueError("carbon intensity must be non-negative")
    elif not Path(p.source).exists():
        raise ValueError(f"price series file not found: {p.source}")
    if not 0.0 <= config.flexibility.share <= 1.0:
        raise ValueError("flexible share must lie in [0, 1]")
    if config.flexibility.window_steps < 0:
        raise ValueError("flexibility window must be non-negative")
    ln = config.learning
    if not (0.0 <= ln.gamma < 1.0 and 0.0 < ln.alpha <= 1.0
            and 0.0 <= ln.beta <= 1.0 and 0.0 <= ln.epsilon <= 1.0):
        raise ValueError("learning constants out of range")
    if ln.epochs < 1 or ln.episodes_per_epoch < 1:
        raise ValueError("epochs and episodes_per_epoch must be at least 1")
    m = config.matrix
    if not m.agent_counts or any(n < 1 for n in m.agent_counts):
        raise ValueError("agent_counts must be positive integers")
    if m.repetitions < 1 or m.workers < 1:
        raise ValueError("repetitions and workers must be at least 1")
    from .marl import StrategyConfig  # deferred to avoid an import cycle
    for acronym in m.strategies:
        StrategyConfig.from_acronym(acronym)
    s = config.synthetic
    for low, high in (s.demand_kwh_range, s.pv_kwh_range, s.ev_kwh_range):
        if low < 0.0 or high <= low:
            raise ValueError("synthetic kWh ranges must be non-negative and increasing")
    if not 0.0 <= s.weekday_fraction <= 1.0:
        raise ValueError("weekday_fraction must lie in [0, 1]")


def load_series(config: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Electricity price and carbon intensity per step.

    Synthetic source: a two-level time-of-use price with constant carbon
    intensity. CSV source: one row per step, error on length mismatch.
    """
    p = config.prices
    if p.source == "synthetic":
        hours = np.arange(config.n_steps)
        is_day = (hours >= p.day_start_hour) & (hours < p.day_end_hour)
        price = np.where(is_day, p.day_price_gbp_per_kwh, p.night_price_gbp_per_kwh)
        intensity = np.full(config.n_steps, p.intensity_kg_per_kwh)
        return price.astype(float), intensity
    import pandas as pd

    frame = pd.read_csv(p.source)
    for col in ("price_gbp_per_kwh", "intensity_kg_per_kwh"):
        if col not in frame.columns:
            raise ValueError(f"price series file lacks column {col!r}")
    if len(frame) != config.n_steps:
        raise ValueError(
            f"price series length {len(frame)} does not match horizon {config.n_steps}")
    return (frame["price_gbp_per_kwh"].to_numpy(dtype=float),
            frame["intensity_kg_per_kwh"].to_numpy(dtype=float))


def build_grid(config: ScenarioConfig) -> GridParams:
    """Grid coefficients with the carbon charge folded into the import cost."""
    price, intensity = load_series(config)
    scc_per_kg = config.grid.scc_gbp_per_tonne / 1000.0
    carbon = intensity * scc_per_kg
    return GridParams(
        import_cost=price + carbon,
        carbon_cost=carbon,
        export_charge=config.grid.export_charge_gbp_per_kwh,
        resistance=config.grid.resistance_ohm,
        voltage=config.grid.voltage_v,
    )
