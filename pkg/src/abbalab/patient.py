"""Virtual-patient glucose-insulin dynamics for T1D and T2D cohorts.

A reduced Hovorka-style model: two gut compartments, two-compartment
subcutaneous absorption separately for rapid and long-acting insulin, a
single remote insulin-action state, and hepatic glucose output suppressed
by insulin action, minus insulin-dependent and insulin-independent
disposal. Integrated with fixed-step RK4 at 1-minute resolution for
reproducibility.

All randomness flows through explicit numpy Generators; a cohort built
from one seed is bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

T1D = "T1D"
T2D = "T2D"

# Fixed physiologic constants shared by every patient. These are simulator
# calibration values, not per-patient parameters.
INSULIN_VOLUME_L_PER_KG = 0.12   # insulin distribution volume
INSULIN_CLEARANCE = 0.10         # plasma insulin elimination, 1/min
ACTION_TC_MIN = 60.0             # remote insulin action time constant
GLUCOSE_EFFECTIVENESS = 0.0045   # insulin-independent disposal, 1/min
ACTION_GLUCOSE_REF = 100.0       # mg/dL scale of insulin-dependent disposal
EGP_SUPPRESSION_HALF = 0.06      # U/L insulin action halving hepatic output
SECRETION_THRESHOLD = 100.0      # mg/dL, residual secretion kicks in above
SECRETION_SPAN = 80.0           # mg/dL, linear range before saturation
GLUCOSE_FLOOR = 10.0
GLUCOSE_CEIL = 600.0
SMBG_FLOOR = 20.0
SMBG_CEIL = 600.0

MINUTES_PER_DAY = 1440


class SimulationFault(RuntimeError):
    """Raised when integration produces a non-finite state."""


@dataclass(frozen=True)
class PatientParams:
    id: int
    diabetes_type: str
    body_weight: float                      # kg
    insulin_sensitivity_base: float         # (mg/dL/min) per (U/L) at 100 mg/dL
    carb_bioavailability: float             # fraction of CHO reaching plasma
    meal_absorption_time_constant: float    # min
    rapid_insulin_absorption_tc: float      # min
    long_insulin_absorption_tc: float       # min
    endogenous_glucose_production: float    # mg/dL/min
    residual_insulin_secretion_gain: float  # U/min per mg/dL above threshold
    glucose_distribution_volume: float      # dL

    def __post_init__(self):
        if self.diabetes_type not in (T1D, T2D):
            raise ValueError(f"unknown diabetes_type {self.diabetes_type!r}")
        if self.diabetes_type == T1D and self.residual_insulin_secretion_gain != 0.0:
            raise ValueError("T1D patients have no residual secretion")
        if not 40.0 <= self.body_weight <= 160.0:
            raise ValueError(f"body_weight {self.body_weight} outside [40, 160] kg")
        for name in ("meal_absorption_time_constant", "rapid_insulin_absorption_tc",
                     "long_insulin_absorption_tc"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def insulin_volume_l(self) -> float:
        return INSULIN_VOLUME_L_PER_KG * self.body_weight


@dataclass
class PatientState:
    plasma_glucose: float = 120.0   # mg/dL
    gut1: float = 0.0               # g CHO
    gut2: float = 0.0
    rapid1: float = 0.0             # U, subcutaneous rapid depot
    rapid2: float = 0.0
    long1: float = 0.0              # U, subcutaneous long-acting depot
    long2: float = 0.0
    plasma_insulin: float = 0.0     # U/L
    insulin_action: float = 0.0     # U/L, filtered
    sim_time: float = 0.0           # minutes since trial start


@dataclass(frozen=True)
class SensitivitySchedule:
    """Intra-day (dawn) and inter-day insulin-sensitivity modulation."""
    dawn_enabled: bool = False
    dawn_start_min: int = 240       # 04:00
    dawn_end_min: int = 480         # 08:00
    dawn_factor: float = 0.5
    transition_minutes: int = 30
    interday_variability_pct: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.dawn_factor <= 1.0:
            raise ValueError("dawn_factor must be in (0, 1]")
        if self.transition_minutes <= 0:
            raise ValueError("transition_minutes must be > 0")


def dawn_multiplier(schedule: SensitivitySchedule, clock_minute: float) -> float:
    """Sensitivity multiplier from the dawn window alone (1.0 outside it)."""
    if not schedule.dawn_enabled:
        return 1.0
    t0, t1 = schedule.dawn_start_min, schedule.dawn_end_min
    tr = schedule.transition_minutes
    f = schedule.dawn_factor
    t = clock_minute
    if t < t0 or t >= t1:
        return 1.0
    if t < t0 + tr:                       # ramp down into the window
        return 1.0 - (1.0 - f) * (t - t0) / tr
    if t > t1 - tr:                       # ramp back out before window end
        return f + (1.0 - f) * (t - (t1 - tr)) / tr
    return f


def draw_interday_factor(schedule: SensitivitySchedule, rng: np.random.Generator) -> float:
    """One per-day sensitivity factor, uniform in [1-v, 1+v]. Draw once per day."""
    v = schedule.interday_variability_pct
    if v == 0.0:
        return 1.0
    return float(rng.uniform(1.0 - v, 1.0 + v))


def effective_sensitivity(schedule: SensitivitySchedule, clock_minute: float,
                          day_factor: float = 1.0) -> float:
    """Combined multiplier applied to insulin-dependent glucose disposal.

    `day_factor` is the per-day draw from draw_interday_factor; it must be
    held constant across a simulated day.
    """
    if not 0.0 <= clock_minute < MINUTES_PER_DAY:
        raise ValueError("clock_minute must lie in [0, 1440)")
    return dawn_multiplier(schedule, clock_minute) * day_factor


def _model_constants(params: PatientParams) -> tuple:
    """Pre-reduced coefficients for the inner integration loop."""
    inv_tm = 1.0 / params.meal_absorption_time_constant
    inv_tr = 1.0 / params.rapid_insulin_absorption_tc
    inv_tl = 1.0 / params.long_insulin_absorption_tc
    # grams in gut2 -> mg/dL/min of glucose appearance
    ra_coef = 1000.0 * params.carb_bioavailability * inv_tm / params.glucose_distribution_volume
    inv_vi = 1.0 / params.insulin_volume_l
    s_i = params.insulin_sensitivity_base / ACTION_GLUCOSE_REF
    return (inv_tm, inv_tr, inv_tl, ra_coef, inv_vi, s_i,
            params.endogenous_glucose_production,
            params.residual_insulin_secretion_gain)


def _rk4_minute(y: tuple, c: tuple, sens: float, dt: float) -> tuple:
    """One RK4 step over the 9 dynamic states. Pure float math, hot path."""
    inv_tm, inv_tr, inv_tl, ra_coef, inv_vi, s_i, egp, k_sec = c
    inv_tx = 1.0 / ACTION_TC_MIN
    k_e = INSULIN_CLEARANCE
    s_g = GLUCOSE_EFFECTIVENESS

    x_half2 = EGP_SUPPRESSION_HALF * EGP_SUPPRESSION_HALF

    def deriv(d1, d2, r1, r2, l1, l2, ip, x, g):
        u_in = r2 * inv_tr + l2 * inv_tl
        if k_sec > 0.0 and g > SECRETION_THRESHOLD:
            exc = g - SECRETION_THRESHOLD
            if exc > SECRETION_SPAN:
                exc = SECRETION_SPAN
            u_in += k_sec * exc
        egp_eff = egp * x_half2 / (x_half2 + x * x)
        return (-d1 * inv_tm,
                (d1 - d2) * inv_tm,
                -r1 * inv_tr,
                (r1 - r2) * inv_tr,
                -l1 * inv_tl,
                (l1 - l2) * inv_tl,
                u_in * inv_vi - k_e * ip,
                (ip - x) * inv_tx,
                egp_eff - s_g * g - sens * s_i * x * g + ra_coef * d2)

    d1, d2, r1, r2, l1, l2, ip, x, g = y
    k1 = deriv(d1, d2, r1, r2, l1, l2, ip, x, g)
    h = 0.5 * dt
    k2 = deriv(d1 + h * k1[0], d2 + h * k1[1], r1 + h * k1[2], r2 + h * k1[3],
               l1 + h * k1[4], l2 + h * k1[5], ip + h * k1[6], x + h * k1[7],
               g + h * k1[8])
    k3 = deriv(d1 + h * k2[0], d2 + h * k2[1], r1 + h * k2[2], r2 + h * k2[3],
               l1 + h * k2[4], l2 + h * k2[5], ip + h * k2[6], x + h * k2[7],
               g + h * k2[8])
    k4 = deriv(d1 + dt * k3[0], d2 + dt * k3[1], r1 + dt * k3[2], r2 + dt * k3[3],
               l1 + dt * k3[4], l2 + dt * k3[5], ip + dt * k3[6], x + dt * k3[7],
               g + dt * k3[8])
    w = dt / 6.0
    d1 += w * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0])
    d2 += w * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1])
    r1 += w * (k1[2] + 2.0 * (k2[2] + k3[2]) + k4[2])
    r2 += w * (k1[3] + 2.0 * (k2[3] + k3[3]) + k4[3])
    l1 += w * (k1[4] + 2.0 * (k2[4] + k3[4]) + k4[4])
    l2 += w * (k1[5] + 2.0 * (k2[5] + k3[5]) + k4[5])
    ip += w * (k1[6] + 2.0 * (k2[6] + k3[6]) + k4[6])
    x += w * (k1[7] + 2.0 * (k2[7] + k3[7]) + k4[7])
    g += w * (k1[8] + 2.0 * (k2[8] + k3[8]) + k4[8])

    # Hard physiologic saturation; depots clipped against roundoff.
    if g < GLUCOSE_FLOOR:
        g = GLUCOSE_FLOOR
    elif g > GLUCOSE_CEIL:
        g = GLUCOSE_CEIL
    if d1 < 0.0:
        d1 = 0.0
    if d2 < 0.0:
        d2 = 0.0
    if r1 < 0.0:
        r1 = 0.0
    if r2 < 0.0:
        r2 = 0.0
    if l1 < 0.0:
        l1 = 0.0
    if l2 < 0.0:
        l2 = 0.0
    if ip < 0.0:
        ip = 0.0
    if x < 0.0:
        x = 0.0

    total = d1 + d2 + r1 + r2 + l1 + l2 + ip + x + g
    if total != total or total == math.inf:     # NaN / overflow guard
        raise SimulationFault(
            f"non-finite state after step: G={g} gut=({d1},{d2}) "
            f"rapid=({r1},{r2}) long=({l1},{l2}) I={ip} X={x}")
    return (d1, d2, r1, r2, l1, l2, ip, x, g)


def step(state: PatientState, params: PatientParams, schedule: SensitivitySchedule,
         cho_g: float = 0.0, rapid_insulin_u: float = 0.0, long_insulin_u: float = 0.0,
         dt: float = 1.0, day_factor: float = 1.0) -> PatientState:
    """Advance the patient by one fixed RK4 step of `dt` minutes.

    Inputs are impulses deposited into the gut / subcutaneous depots at the
    start of the step. Sensitivity is evaluated at the step's start clock
    time and held constant across the step.
    """
    if not 0.0 < dt <= 5.0:
        raise ValueError("dt must lie in (0, 5] minutes")
    if cho_g < 0.0 or rapid_insulin_u < 0.0 or long_insulin_u < 0.0:
        raise ValueError("inputs must be non-negative")
    sens = effective_sensitivity(schedule, state.sim_time % MINUTES_PER_DAY, day_factor)
    y = (state.gut1 + cho_g, state.gut2,
         state.rapid1 + rapid_insulin_u, state.rapid2,
         state.long1 + long_insulin_u, state.long2,
         state.plasma_insulin, state.insulin_action, state.plasma_glucose)
    d1, d2, r1, r2, l1, l2, ip, x, g = _rk4_minute(y, _model_constants(params), sens, dt)
    return PatientState(plasma_glucose=g, gut1=d1, gut2=d2, rapid1=r1, rapid2=r2,
                        long1=l1, long2=l2, plasma_insulin=ip, insulin_action=x,
                        sim_time=state.sim_time + dt)


def fasting_glucose(params: PatientParams, basal_u_per_day: float) -> float:
    """Steady-state glucose under a continuous-equivalent basal rate (bisection)."""
    c = _model_constants(params)
    _, _, _, _, inv_vi, s_i, egp, k_sec = c
    rate = basal_u_per_day / MINUTES_PER_DAY

    x_half2 = EGP_SUPPRESSION_HALF * EGP_SUPPRESSION_HALF

    def x_of(g: float) -> float:
        u = rate
        if k_sec > 0.0 and g > SECRETION_THRESHOLD:
            u += k_sec * min(g - SECRETION_THRESHOLD, SECRETION_SPAN)
        return u * inv_vi / INSULIN_CLEARANCE

    def balance(g: float) -> float:
        x = x_of(g)
        egp_eff = egp * x_half2 / (x_half2 + x * x)
        return egp_eff - GLUCOSE_EFFECTIVENESS * g - s_i * x * g

    lo, hi = GLUCOSE_FLOOR, GLUCOSE_CEIL
    if balance(hi) > 0.0:
        return hi
    if balance(lo) < 0.0:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if balance(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def equilibrium_state(params: PatientParams, basal_u_per_day: float) -> PatientState:
    """Fasting fixed point with the long-acting depot at its periodic mean."""
    g = fasting_glucose(params, basal_u_per_day)
    rate = basal_u_per_day / MINUTES_PER_DAY
    u = rate
    if params.residual_insulin_secretion_gain > 0.0 and g > SECRETION_THRESHOLD:
        u += params.residual_insulin_secretion_gain * min(g - SECRETION_THRESHOLD,
                                                          SECRETION_SPAN)
    ip = u / (params.insulin_volume_l * INSULIN_CLEARANCE)
    depot = rate * params.long_insulin_absorption_tc
    return PatientState(plasma_glucose=g, long1=depot, long2=depot,
                        plasma_insulin=ip, insulin_action=ip, sim_time=0.0)


def read_smbg(state: PatientState | float, rng: np.random.Generator,
              cv: float = 0.05) -> float:
    """Fingerstick reading: multiplicative Gaussian noise, clamped to [20, 600]."""
    g = state.plasma_glucose if isinstance(state, PatientState) else float(state)
    if cv > 0.0:
        g = g * (1.0 + cv * rng.standard_normal())
    return min(max(g, SMBG_FLOOR), SMBG_CEIL)


# --- cohort generation -------------------------------------------------------

_COHORT_TAG = 0x5EED_C0B0

# (mean, cv) per parameter; weights track the in-silico population tables.
_T1D_NOMINAL = {
    "body_weight": (69.7, 0.178),
    "insulin_sensitivity_base": (63.0, 0.28),
    "carb_bioavailability": (0.85, 0.06),
    "meal_absorption_time_constant": (40.0, 0.18),
    "rapid_insulin_absorption_tc": (55.0, 0.15),
    "long_insulin_absorption_tc": (230.0, 0.10),
    "endogenous_glucose_production": (1.70, 0.10),
    "residual_insulin_secretion_gain": (0.0, 0.0),
}
_T2D_NOMINAL = {
    "body_weight": (95.0, 0.174),
    "insulin_sensitivity_base": (47.0, 0.45),
    "carb_bioavailability": (0.85, 0.06),
    "meal_absorption_time_constant": (45.0, 0.18),
    "rapid_insulin_absorption_tc": (55.0, 0.15),
    "long_insulin_absorption_tc": (230.0, 0.10),
    "endogenous_glucose_production": (1.41, 0.15),
    "residual_insulin_secretion_gain": (2.0e-4, 0.35),
}
_VG_PER_KG = (1.6, 0.08)   # dL/kg


def _lognormal(rng: np.random.Generator, mean: float, cv: float) -> float:
    """Log-normal draw with the requested arithmetic mean."""
    if mean == 0.0 or cv == 0.0:
        return mean
    sigma2 = math.log(1.0 + cv * cv)
    mu = math.log(mean) - 0.5 * sigma2
    return float(rng.lognormal(mu, math.sqrt(sigma2)))


def sample_patient(diabetes_type: str, patient_id: int,
                   rng: np.random.Generator) -> PatientParams:
    nominal = _T1D_NOMINAL if diabetes_type == T1D else _T2D_NOMINAL
    draws = {}
    for name, (mean, cv) in nominal.items():
        draws[name] = _lognormal(rng, mean, cv)
    draws["body_weight"] = min(max(draws["body_weight"], 40.0), 160.0)
    draws["carb_bioavailability"] = min(max(draws["carb_bioavailability"], 0.5), 0.98)
    vg_per_kg = _lognormal(rng, *_VG_PER_KG)
    return PatientParams(
        id=patient_id,
        diabetes_type=diabetes_type,
        glucose_distribution_volume=vg_per_kg * draws["body_weight"],
        **draws,
    )


def generate_cohort(n: int, diabetes_type: str, seed: int) -> list[PatientParams]:
    """n parameter sets, bit-reproducible, prefix-stable under growing n."""
    if n < 1:
        raise ValueError("cohort size must be >= 1")
    type_code = 1 if diabetes_type == T1D else 2
    cohort = []
    for i in range(n):
        rng = np.random.default_rng(
            np.random.SeedSequence([_COHORT_TAG, int(seed), type_code, i]))
        cohort.append(sample_patient(diabetes_type, i, rng))
    return cohort


# --- simulator-provided nominal therapy (T1D path) ---------------------------

T1D_FASTING_TARGET = 105.0   # mg/dL, fasting level the starting basal titrates to

# Empirical correction of the closed-form dose responses: the algebra below
# ignores the glucose-dependent disposal a meal excursion recruits on its own
# (glucose effectiveness plus basal insulin action at elevated G), so the raw
# CF and ICR are rescaled by factors fitted against simulated dose responses.
_CF_SCALE = 0.62
_ICR_SCALE = 2.37


@dataclass(frozen=True)
class NominalTherapy:
    basal_u_per_day: float
    icr_g_per_u: float
    cf_mgdl_per_u: float


def nominal_therapy(params: PatientParams,
                    fasting_target: float = T1D_FASTING_TARGET) -> NominalTherapy:
    """Starting therapy a clinician would prescribe for a T1D patient.

    Bolus factors and basal rest on different evidence. Meal responses are
    observable: a few days of pre/post-meal readings pin down how far one
    unit drops glucose and how much one gram raises it, so CF and ICR use
    the patient's own sensitivity, bioavailability, and distribution
    volume. The overnight fasting need is not separable from those same
    readings, so basal falls back on a population model: it solves the
    fasting fixed point at `fasting_target` for a patient with nominal
    physiology and this body weight. The basal misfit is what the adaptive
    arm has available to learn. (T2D uses weight-based rules.)
    """
    s_i_pop = _T1D_NOMINAL["insulin_sensitivity_base"][0]
    pop = PatientParams(
        id=params.id, diabetes_type=T1D, body_weight=params.body_weight,
        insulin_sensitivity_base=s_i_pop,
        carb_bioavailability=_T1D_NOMINAL["carb_bioavailability"][0],
        meal_absorption_time_constant=_T1D_NOMINAL["meal_absorption_time_constant"][0],
        rapid_insulin_absorption_tc=_T1D_NOMINAL["rapid_insulin_absorption_tc"][0],
        long_insulin_absorption_tc=_T1D_NOMINAL["long_insulin_absorption_tc"][0],
        endogenous_glucose_production=_T1D_NOMINAL["endogenous_glucose_production"][0],
        residual_insulin_secretion_gain=0.0,
        glucose_distribution_volume=_VG_PER_KG[0] * params.body_weight)
    lo, hi = 0.05 * params.body_weight, 2.0 * params.body_weight
    if fasting_glucose(pop, lo) < fasting_target:
        raise ValueError("fasting target unreachable with basal alone")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if fasting_glucose(pop, mid) > fasting_target:
            lo = mid
        else:
            hi = mid
    basal = 0.5 * (lo + hi)
    clearance = params.insulin_volume_l * INSULIN_CLEARANCE
    cf = _CF_SCALE * params.insulin_sensitivity_base * 1.10 / clearance
    rise_per_gram = (1000.0 * params.carb_bioavailability
                     / params.glucose_distribution_volume)
    icr = _ICR_SCALE * cf / rise_per_gram
    return NominalTherapy(basal_u_per_day=basal, icr_g_per_u=icr, cf_mgdl_per_u=cf)


# --- cohort text round trip ---------------------------------------------------

_COHORT_FIELDS = (
    "id", "diabetes_type", "body_weight", "insulin_sensitivity_base",
    "carb_bioavailability", "meal_absorption_time_constant",
    "rapid_insulin_absorption_tc", "long_insulin_absorption_tc",
    "endogenous_glucose_production", "residual_insulin_secretion_gain",
    "glucose_distribution_volume",
)


def cohort_to_text(cohort: list[PatientParams]) -> str:
    lines = ["\t".join(_COHORT_FIELDS)]
    for p in cohort:
        row = []
        for name in _COHORT_FIELDS:
            v = getattr(p, name)
            row.append(v if isinstance(v, str) else repr(v))
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def cohort_from_text(text: str) -> list[PatientParams]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split("\t")
    if tuple(header) != _COHORT_FIELDS:
        raise ValueError("unrecognized cohort header")
    out = []
    for ln in lines[1:]:
        vals = ln.split("\t")
        kw = {}
        for name, raw in zip(_COHORT_FIELDS, vals):
            if name == "diabetes_type":
                kw[name] = raw
            elif name == "id":
                kw[name] = int(raw)
            else:
                kw[name] = float(raw)
        out.append(PatientParams(**kw))
    return out
