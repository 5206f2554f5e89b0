"""Two-node building heating model with linear hourly coefficients.

A dwelling is reduced to a thermal mass node and an air node following the
simple hourly (Crank-Nicholson) method. All envelope inputs are collapsed
once into a 2x5 coefficient matrix so that stepping the model is a single
matrix-vector product,

    [T_m', T_air']^T = kappa . [1, T_m, T_e, phi, h]^T

with T_m the mass node temperature (degC), T_air the zone air temperature
(degC), T_e the outdoor temperature (degC), phi the solar gains (W) and h
the heat input over the step (kWh). The h column of kappa is scaled at
derivation time so heat is given in kWh per step rather than W.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Added surface resistance accounting for curtained glazing, m2K/W.
R_SE_CURTAIN = 0.04
# Volumetric heat capacity of air per air change, Wh/(m3.K).
AIR_HEAT_PER_VOLUME = 0.34


@dataclass(frozen=True)
class BuildingParams:
    """Envelope and zone inputs for a single dwelling.

    Defaults describe a 76 m2 one-storey old-build dwelling with eight
    windows and one door; U-values and air-change inputs follow common UK
    retrofit-survey figures.
    """

    floor_area: float = 76.0            # m2
    room_height: float = 2.4            # m
    window_area: float = 1.4 * 1.4      # m2, single window
    n_windows: int = 8
    door_area: float = 1.4 * 2.0        # m2
    u_wall: float = 1.5                 # W/(m2.K)
    u_roof: float = 1.0                 # W/(m2.K)
    u_ground: float = 1.0               # W/(m2.K)
    u_window: float = 4.3               # W/(m2.K)
    party_floor_fraction: float = 0.5   # share of floor facing another dwelling
    n_min: float = 0.5                  # 1/h, hygienic minimum air change
    n_50: float = 6.0                   # 1/h, air change at 50 Pa
    shielding: float = 0.03             # infiltration shielding coefficient
    height_correction: float = 1.0
    surface_ratio: float = 4.5          # internal surface area / floor area
    mass_ratio: float = 2.5             # effective mass area / floor area, medium class
    heat_capacity_per_area: float = 165_000.0  # J/(K.m2), medium class
    h_air_surface: float = 3.45         # W/(m2.K), air node to surface node
    h_mass_surface: float = 9.1         # W/(m2.K), mass node to surface node
    tau: float = 3600.0                 # s, step length

    def __post_init__(self) -> None:
        for name in ("floor_area", "room_height", "window_area", "door_area",
                     "u_wall", "u_roof", "u_ground", "u_window",
                     "surface_ratio", "mass_ratio", "heat_capacity_per_area",
                     "h_air_surface", "h_mass_surface", "tau"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"BuildingParams.{name} must be strictly positive")
        if self.n_windows < 0:
            raise ValueError("BuildingParams.n_windows must be non-negative")
        if not 0.0 <= self.party_floor_fraction <= 1.0:
            raise ValueError("BuildingParams.party_floor_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class ThermalCoefficients:
    """2x5 linear recursion coefficients, rows (mass, air).

    Columns multiply (1, T_m, T_e, phi, h); the constant column carries the
    internal gains. The h column expects kWh per step.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (2, 5):
            raise ValueError("ThermalCoefficients.matrix must have shape (2, 5)")
        object.__setattr__(self, "matrix", m)

    # Air-row accessors, used when inverting the recursion for heat bounds.
    @property
    def air_row(self) -> np.ndarray:
        return self.matrix[1]

    @property
    def mass_row(self) -> np.ndarray:
        return self.matrix[0]


@dataclass(frozen=True)
class ThermalState:
    """Temperatures of the mass and air nodes, degC."""

    t_mass: float
    t_air: float


def derive_kappa(params: BuildingParams, internal_gain_rate: float = 3.5) -> ThermalCoefficients:
    """Collapse envelope inputs into the 2x5 recursion matrix.

    ``internal_gain_rate`` is the average internal heat flow from appliances
    and occupants per floor area, W/m2.

    The derivation builds the usual conductance network (ventilation,
    glazing, opaque elements, surface and mass couplings), then rearranges
    the Crank-Nicholson update into an affine map of (T_m, T_e, phi, h).
    Glazed transmission (windows plus door behind curtains) couples the
    surface node to outside; opaque transmission goes through the mass node.
    """
    p = params
    a_f = p.floor_area

    a_m = p.mass_ratio * a_f                       # effective mass area, m2
    c_m = p.heat_capacity_per_area * a_f           # zone heat capacity, J/K
    a_tot = p.surface_ratio * a_f                  # internal surfaces area, m2

    h_tr_is = p.h_air_surface * a_tot              # air <-> surface, W/K
    h_tr_ms = p.h_mass_surface * a_m               # mass <-> surface, W/K

    # Opaque envelope: walls net of glazing, roof, ground floor share.
    wall_area = (4.0 * np.sqrt(a_f) * p.room_height
                 - p.n_windows * p.window_area - p.door_area)
    if wall_area <= 0.0:
        raise ValueError("glazed area exceeds the gross wall area")
    h_tr_op = (wall_area * p.u_wall
               + a_f * p.u_roof
               + a_f * (1.0 - p.party_floor_fraction) * p.u_ground)
    if h_tr_op >= h_tr_ms:
        raise ValueError("opaque transmission must stay below the mass coupling")
    h_tr_em = 1.0 / (1.0 / h_tr_op - 1.0 / h_tr_ms)

    # Glazed envelope, curtain-corrected U-value.
    u_wd_eff = 1.0 / (1.0 / p.u_window + R_SE_CURTAIN)
    h_tr_glz = (p.n_windows * p.window_area + p.door_area) * u_wd_eff

    # Ventilation: the larger of hygienic minimum and infiltration flows.
    volume = a_f * p.room_height
    v_min = p.n_min * volume
    v_inf = 2.0 * volume * p.n_50 * p.shielding * p.height_correction
    h_ve = AIR_HEAT_PER_VOLUME * max(v_min, v_inf)

    h_tr_1 = 1.0 / (1.0 / h_ve + 1.0 / h_tr_is)
    h_tr_2 = h_tr_1 + h_tr_glz
    h_tr_3 = 1.0 / (1.0 / h_tr_2 + 1.0 / h_tr_ms)

    phi_int = internal_gain_rate * a_f             # internal gains, W
    phi_ia = 0.5 * phi_int                         # share entering the air node

    # Mass-node recursion T_m' = a_t + b_t T_m + c_t T_e + d_t phi + e_t h.
    big_a = c_m / p.tau + 0.5 * (h_tr_3 + h_tr_em)
    big_b = 1.0 - a_m / a_tot - h_tr_glz / (p.h_mass_surface * a_tot)
    big_c = big_b * phi_int / 2.0
    big_d = (a_m * phi_int / (2.0 * a_tot)
             + h_tr_3 / h_tr_2 * (big_c + h_tr_1 * phi_ia / h_ve))
    big_e = h_tr_em + h_tr_3 / h_tr_2 * (h_tr_glz + h_tr_1)

    a_t = big_d / big_a
    b_t = (c_m / p.tau - 0.5 * (h_tr_3 + h_tr_em)) / big_a
    c_t = big_e / big_a
    d_t = (a_m / a_tot + h_tr_3 * big_b / h_tr_2) / big_a
    e_t = h_tr_3 * h_tr_1 / (h_tr_2 * h_ve * big_a)

    # Surface-node elimination, then the air node as an affine map.
    big_f = h_tr_ms + h_tr_glz + h_tr_1
    big_g = (h_tr_ms * a_t / 2.0 + big_c + h_tr_1 * phi_ia / h_ve) / big_f
    big_h = h_tr_ms * (1.0 + b_t) / (2.0 * big_f)
    big_i = (h_tr_ms * c_t / 2.0 + h_tr_glz + h_tr_1) / big_f
    big_j = (h_tr_ms * d_t / 2.0 + big_b) / big_f
    big_k = (h_tr_ms * e_t / 2.0 + h_tr_1 / h_ve) / big_f

    denom = h_tr_is + h_ve
    a_air = (h_tr_is * big_g + phi_ia) / denom
    b_air = h_tr_is * big_h / denom
    c_air = (h_tr_is * big_i + h_ve) / denom
    d_air = h_tr_is * big_j / denom
    e_air = (h_tr_is * big_k + 1.0) / denom

    kappa = np.array([
        [a_t, b_t, c_t, d_t, e_t],
        [a_air, b_air, c_air, d_air, e_air],
    ])
    # Heat input bookkeeping is kWh per step; the recursion wants W.
    kappa[:, 4] *= 1000.0 * 3600.0 / p.tau
    return ThermalCoefficients(matrix=kappa)


def step_thermal(coeffs: ThermalCoefficients, state: ThermalState,
                 outdoor_temp: float, solar_gain: float, heat: float) -> ThermalState:
    """Advance the two temperature nodes by one step.

    ``heat`` is the delivered heat over the step in kWh, ``solar_gain`` in W.
    """
    if heat < 0.0:
        raise ValueError("heat input must be non-negative")
    x = np.array([1.0, state.t_mass, outdoor_temp, solar_gain, heat])
    t_mass, t_air = coeffs.matrix @ x
    return ThermalState(t_mass=float(t_mass), t_air=float(t_air))


def heating_bounds(coeffs: ThermalCoefficients, state: ThermalState,
                   outdoor_temp: float, solar_gain: float,
                   t_low: float, t_high: float) -> tuple[float, float]:
    """Heat inputs (kWh) that land the next air temperature on the band edges.

    Returns ``(h_min, h_max)`` with ``h_min`` the least heat keeping the next
    air temperature at or above ``t_low`` and ``h_max`` the heat reaching
    ``t_high``, floored at ``h_min``. Both are clipped at zero since cooling
    is not modelled; a band already exceeded from below therefore yields
    ``(0, h_max)``, and one exceeded from above collapses to ``(h_min, h_min)``.
    """
    if t_high < t_low:
        raise ValueError("t_high must not be below t_low")
    a_air, b_air, c_air, d_air, e_air = coeffs.air_row
    free_air = a_air + b_air * state.t_mass + c_air * outdoor_temp + d_air * solar_gain
    h_min = max(0.0, (t_low - free_air) / e_air)
    h_max = max(h_min, (t_high - free_air) / e_air)
    return h_min, h_max


def comfort_band(n_steps: int = 24,
                 day_target: float = 20.0,
                 setback_target: float = 16.0,
                 band: float = 3.0,
                 comfort_windows: tuple[tuple[int, int], ...] = ((7, 10), (17, 22)),
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Per-step acceptable air-temperature band (lower, upper), degC.

    Hours inside a comfort window target ``day_target``; all others target
    ``setback_target``. The acceptable band is the target +/- ``band``.
    Windows are half-open hour ranges on a wrapping 24 h clock.
    """
    target = np.full(n_steps, setback_target, dtype=float)
    hours = np.arange(n_steps) % 24
    for start, stop in comfort_windows:
        target[(hours >= start) & (hours < stop)] = day_target
    return target - band, target + band
