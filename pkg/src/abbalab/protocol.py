"""Trial engine: day scheduling, meal sampling and misestimation, injection
timing, the rescue controller, and the three-phase pipeline (two-week
collection under the static advisor, initialization, on-line learning).

run_trial is single-threaded per patient; the cohort runner fans out with
disjoint per-patient seed streams derived from the master seed, so the arm
never perturbs the environment draws (meals, noise) of its twin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import advisor as adv
from . import initialisation as init
from . import patient as pat

MINUTES_PER_DAY = 1440
ABBA = "abba"
BBA = "bba"

# Scenario table: per-meal CHO ranges (g) and clock windows (minutes).
MEAL_TABLE = (
    ("breakfast", (420, 540), (42.0, 98.0)),
    ("lunch", (750, 810), (60.0, 140.0)),
    ("dinner", (1140, 1200), (54.0, 126.0)),
)
SNACK_WINDOWS = ((600, 660), (900, 1080), (1260, 1350))
SNACK_CHO_RANGE = (5.0, 21.0)
MEAL_DURATION_RANGE = (15, 30)
SNACK_DURATION_RANGE = (3, 8)
BOLUS_LEAD_RANGE = (5, 15)
BASAL_WINDOW = (1320, 1440)          # 22:00 .. 00:00
POST_PRANDIAL_DELAY = 120            # minutes after meal start (scenario 4)
RESCUE_GRAMS = 20.0

PRE_MEAL_SLOTS = ("pre_breakfast", "pre_lunch", "pre_dinner")

_TRIAL_TAG = 0x7121A1


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    misestimation: tuple[float, float] | None = (0.70, 1.10)
    interday_sensitivity: float = 0.0
    correction_boluses: bool = False
    days: int = 90

    @property
    def code(self) -> int:
        return int(self.id[1:])


SCENARIOS = {
    "S1": ScenarioSpec("S1"),
    "S2": ScenarioSpec("S2", interday_sensitivity=0.30),
    "S3": ScenarioSpec("S3", misestimation=(0.50, 1.50)),
    "S4": ScenarioSpec("S4", correction_boluses=True),
}


@dataclass(frozen=True)
class MealPlan:
    slot: int                      # 0 breakfast, 1 lunch, 2 dinner, 3 snack
    start_minute: int
    duration_min: int
    cho_g: float
    bolus_minute: int | None       # None for the unannounced snack


@dataclass(frozen=True)
class DaySchedule:
    meals: tuple[MealPlan, ...]
    basal_minute: int


def sample_day(spec: ScenarioSpec, rng: np.random.Generator) -> DaySchedule:
    """One day's meals, bolus times, and basal injection time.

    Draw order is fixed; the basal injection is forced after the last meal
    so no intake or bolus ever follows it.
    """
    meals = []
    for slot, (name, (t_lo, t_hi), (c_lo, c_hi)) in enumerate(MEAL_TABLE):
        start = int(rng.integers(t_lo, t_hi + 1))
        cho = float(rng.uniform(c_lo, c_hi))
        duration = int(rng.integers(MEAL_DURATION_RANGE[0], MEAL_DURATION_RANGE[1] + 1))
        lead = int(rng.integers(BOLUS_LEAD_RANGE[0], BOLUS_LEAD_RANGE[1] + 1))
        meals.append(MealPlan(slot=slot, start_minute=start, duration_min=duration,
                              cho_g=cho, bolus_minute=start - lead))
    window = SNACK_WINDOWS[int(rng.integers(0, len(SNACK_WINDOWS)))]
    s_start = int(rng.integers(window[0], window[1] + 1))
    s_cho = float(rng.uniform(*SNACK_CHO_RANGE))
    s_dur = int(rng.integers(SNACK_DURATION_RANGE[0], SNACK_DURATION_RANGE[1] + 1))
    meals.append(MealPlan(slot=3, start_minute=s_start, duration_min=s_dur,
                          cho_g=s_cho, bolus_minute=None))
    snack_end = s_start + s_dur
    basal_lo = max(BASAL_WINDOW[0], snack_end + 1)
    basal_minute = int(rng.integers(basal_lo, BASAL_WINDOW[1]))
    return DaySchedule(meals=tuple(meals), basal_minute=basal_minute)


def announce_cho(true_cho: float, spec: ScenarioSpec, rng: np.random.Generator) -> float:
    """What the patient tells the advisor; the gut digests the true grams."""
    if true_cho <= 0:
        raise ValueError("true CHO must be > 0")
    if spec.misestimation is None:
        return true_cho
    return true_cho * float(rng.uniform(*spec.misestimation))


@dataclass
class RescueController:
    """20 g fast glucose when true BG crosses the rescue floor, re-armed at 70."""
    threshold: float = 30.0
    rearm_level: float = 70.0
    grams: float = RESCUE_GRAMS
    armed: bool = True

    def poll(self, g: float) -> float:
        """Returns grams to ingest this minute (0 when no rescue fires)."""
        if self.armed:
            if g < self.threshold:
                self.armed = False
                return self.grams
        elif g >= self.rearm_level:
            self.armed = True
        return 0.0


@dataclass(frozen=True)
class MealEvent:
    slot: int
    minute: int
    duration_min: int
    cho_g: float
    announced_g: float | None


@dataclass(frozen=True)
class RescueEvent:
    minute: int
    trigger_mgdl: float


@dataclass(frozen=True)
class TherapySnapshot:
    icr: tuple[float, float, float]
    ps: tuple[float, float, float]
    cf: float
    basal: float


@dataclass
class DayTrace:
    day: int
    glucose: np.ndarray
    measurements: list
    insulin: list
    meals: list
    rescues: list
    therapy: TherapySnapshot
    total_insulin_u: float


@dataclass
class TrialResult:
    patient: pat.PatientParams
    arm: str
    scenario: str
    days: int
    collection_days: int
    day_traces: list
    final_agents: adv.AgentBundle | None
    transfer_entropy_bits: float | None
    risk_class: init.RiskClass | None
    initial_therapy: TherapySnapshot


def initial_therapy_for(params: pat.PatientParams,
                        rng: np.random.Generator) -> adv.TherapyParams:
    """Starting therapy: simulator-derived for T1D, weight-based for T2D,
    then the protocol's one-time +/-10% uniform perturbation on ICRs and basal."""
    if params.diabetes_type == pat.T1D:
        nom = pat.nominal_therapy(params)
        icr, cf, basal = nom.icr_g_per_u, nom.cf_mgdl_per_u, nom.basal_u_per_day
    else:
        _, basal, icr, cf = init.t2d_initial_therapy(params.body_weight)
    icr_slots = [icr * float(rng.uniform(0.9, 1.1)) for _ in range(3)]
    basal_p = basal * float(rng.uniform(0.9, 1.1))
    return adv.TherapyParams(icr=icr_slots, ps=[1.0, 1.0, 1.0], cf=cf, basal=basal_p)


def _trial_streams(master_seed: int, spec: ScenarioSpec,
                   params: pat.PatientParams) -> dict[str, np.random.Generator]:
    type_code = 1 if params.diabetes_type == pat.T1D else 2
    root = np.random.SeedSequence(
        [_TRIAL_TAG, int(master_seed), spec.code, type_code, params.id])
    names = ("schedule", "announce", "smbg", "cgm", "sens", "therapy", "agents")
    children = root.spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def run_trial(params: pat.PatientParams, advisor_kind: str, spec: ScenarioSpec,
              master_seed: int, days: int | None = None, collection_days: int = 14,
              smbg_cv: float = 0.05, dawn: str = "auto",
              rescue_threshold: float = 30.0,
              checkpoint_cb=None) -> TrialResult:
    """Simulate one patient under one advisor arm for the whole trial.

    Environment randomness (meals, misestimation, readings, sensitivity) is
    seeded independently of the arm, so paired arms face the same world.
    """
    if advisor_kind not in (ABBA, BBA):
        raise ValueError(f"unknown advisor arm {advisor_kind!r}")
    days = spec.days if days is None else int(days)
    if days <= collection_days:
        raise ValueError("trial must extend past the collection phase")

    streams = _trial_streams(master_seed, spec, params)
    therapy = initial_therapy_for(params, streams["therapy"])
    initial_snapshot = TherapySnapshot(icr=tuple(therapy.icr), ps=tuple(therapy.ps),
                                       cf=therapy.cf, basal=therapy.basal)

    dawn_enabled = (params.diabetes_type == pat.T1D) if dawn == "auto" else (dawn == "on")
    schedule = pat.SensitivitySchedule(
        dawn_enabled=dawn_enabled,
        interday_variability_pct=spec.interday_sensitivity)
    dawn_base = [pat.dawn_multiplier(schedule, m) for m in range(MINUTES_PER_DAY)]
    consts = pat._model_constants(params)
    beta = adv.beta_for(params.diabetes_type)
    th = adv.DEFAULT_THRESHOLDS

    state = pat.equilibrium_state(params, therapy.basal)
    y = (state.gut1, state.gut2, state.rapid1, state.rapid2, state.long1,
         state.long2, state.plasma_insulin, state.insulin_action,
         state.plasma_glucose)

    rescue = RescueController(threshold=rescue_threshold)
    bundle: adv.AgentBundle | None = None
    te_bits: float | None = None
    risk: init.RiskClass | None = None

    # Collection accumulators (ABBA initialization inputs).
    cgm_vals: list[float] = []
    cgm_times: list[float] = []
    cgm_basal: list[float] = []
    all_insulin: list[adv.InsulinRecord] = []

    # Feature bookkeeping.
    slot_features: dict[int, np.ndarray] = {}
    open_slot: int | None = None
    open_values: list[float] = []
    day_pool: list[float] = []
    basal_state_prev: np.ndarray | None = None
    prev_day_last_reading: float | None = None
    today_first_reading: float | None = None
    last_reading_today: float | None = None
    tdd_yesterday: float | None = None

    recent_insulin: list[adv.InsulinRecord] = []
    day_traces: list[DayTrace] = []

    def b_today() -> np.ndarray:
        return adv.overnight_delta(today_first_reading, prev_day_last_reading, th)

    def take_reading(now: float, slot: str) -> float:
        nonlocal today_first_reading, last_reading_today
        value = pat.read_smbg(y[8], streams["smbg"], cv=smbg_cv)
        measurements.append(adv.Measurement(value=value, timestamp=now, slot=slot))
        day_pool.append(value)
        if today_first_reading is None:
            today_first_reading = value
        last_reading_today = value
        return value

    def close_window(closing_value: float, learning: bool) -> None:
        nonlocal open_slot, open_values
        if open_slot is None:
            return
        slot = open_slot
        window_vals = open_values + [closing_value]
        feats = adv.bolus_features(window_vals, th)
        f_new = feats.as_array()
        if learning and slot in slot_features and bundle is not None:
            b_k = b_today()
            f_prev = slot_features[slot]
            for kind in (adv.ICR_AGENTS[slot], adv.PS_AGENTS[slot]):
                agent = bundle[kind]
                s_t = adv.build_state(kind, f_prev, b_k)
                s_n = adv.build_state(kind, f_new, b_k)
                d = adv.critic_update(agent, s_t, s_n, beta)
                if np.isfinite(d):
                    adv.actor_update(agent, d, s_t)
        slot_features[slot] = f_new
        open_slot = None
        open_values = []

    def record_insulin(dose: float, kind: str, now: float) -> None:
        nonlocal day_insulin
        rec = adv.InsulinRecord(dose_u=dose, kind=kind, timestamp=now)
        insulin_today.append(rec)
        recent_insulin.append(rec)
        if day <= collection_days:
            all_insulin.append(rec)
        day_insulin += dose

    for day in range(1, days + 1):
        day_factor = pat.draw_interday_factor(schedule, streams["sens"])
        sched = sample_day(spec, streams["schedule"])
        learning = advisor_kind == ABBA and day > collection_days

        # Per-minute CHO delivery for today's meals.
        cho_by_minute = [0.0] * MINUTES_PER_DAY
        for meal in sched.meals:
            per_min = meal.cho_g / meal.duration_min
            for m in range(meal.start_minute, meal.start_minute + meal.duration_min):
                if m < MINUTES_PER_DAY:
                    cho_by_minute[m] += per_min

        bolus_at = {meal.bolus_minute: meal for meal in sched.meals
                    if meal.bolus_minute is not None}
        ppr_at = {}
        if spec.correction_boluses:
            for meal in sched.meals:
                if meal.slot < 3:
                    m = meal.start_minute + POST_PRANDIAL_DELAY
                    if m < sched.basal_minute:
                        ppr_at[m] = meal

        measurements = []
        insulin_today = []
        meals_today = [MealEvent(slot=m.slot, minute=m.start_minute,
                                 duration_min=m.duration_min, cho_g=m.cho_g,
                                 announced_g=None)
                       for m in sched.meals]
        rescues_today = []
        day_insulin = 0.0
        g_day = [0.0] * MINUTES_PER_DAY
        snapshot = TherapySnapshot(icr=tuple(therapy.icr), ps=tuple(therapy.ps),
                                   cf=therapy.cf, basal=therapy.basal)
        day_offset = (day - 1) * MINUTES_PER_DAY

        for minute in range(MINUTES_PER_DAY):
            now = float(day_offset + minute)
            cho_in = cho_by_minute[minute]
            rapid_in = 0.0
            long_in = 0.0

            grams = rescue.poll(y[8])
            if grams > 0.0:
                cho_in += grams
                value = take_reading(now, "rescue")
                if open_slot is not None:
                    open_values.append(value)
                rescues_today.append(RescueEvent(minute=minute, trigger_mgdl=value))

            meal = bolus_at.get(minute)
            if meal is not None:
                slot = meal.slot
                reading = take_reading(now, PRE_MEAL_SLOTS[slot])
                close_window(reading, learning)
                if learning and slot in slot_features:
                    f_prev = slot_features[slot]
                    fv = adv.FeatureVector(float(f_prev[0]), float(f_prev[1]))
                    b_k = b_today()
                    for kind in (adv.ICR_AGENTS[slot], adv.PS_AGENTS[slot]):
                        agent = bundle[kind]
                        s_t = adv.build_state(kind, f_prev, b_k)
                        p = adv.policy(agent, s_t, fv)
                        new_a = adv.apply_action(kind, p, therapy.current(kind),
                                                 therapy.a_init(kind), agent.m_smooth)
                        therapy.set_current(kind, new_a)
                announced = announce_cho(meal.cho_g, spec, streams["announce"])
                meals_today[slot] = MealEvent(slot=slot, minute=meal.start_minute,
                                              duration_min=meal.duration_min,
                                              cho_g=meal.cho_g, announced_g=announced)
                iob_now = adv.iob(recent_insulin, now)
                if learning:
                    dose = adv.bolus_recommendation(announced, reading, therapy,
                                                    slot, iob_now, th)
                else:
                    dose = adv.bba_recommendation(announced, reading, therapy,
                                                  iob_now, slot, th)
                if dose > 0.0:
                    rapid_in += dose
                    record_insulin(dose, "bolus", now)
                open_slot = slot
                open_values = []

            ppr = ppr_at.get(minute)
            if ppr is not None:
                reading = take_reading(now, "post_prandial")
                if open_slot is not None:
                    open_values.append(reading)
                ps = therapy.ps[ppr.slot] if learning else 1.0
                iob_now = adv.iob(recent_insulin, now)
                dose = adv.correction_bolus(reading, therapy, ps, iob_now, th)
                if dose is not None and dose > 0.0:
                    rapid_in += dose
                    record_insulin(dose, "correction", now)

            if minute == sched.basal_minute:
                reading = take_reading(now, "bedtime")
                close_window(reading, learning)
                if learning:
                    feats = adv.basal_features(day_pool, th)
                    s_now = adv.build_state(adv.AgentKind.BASAL, feats, b_today())
                    agent = bundle[adv.AgentKind.BASAL]
                    if basal_state_prev is not None:
                        d = adv.critic_update(agent, basal_state_prev, s_now, beta)
                        if np.isfinite(d):
                            adv.actor_update(agent, d, basal_state_prev)
                    p = adv.policy(agent, s_now,
                                   adv.FeatureVector(float(s_now[0]), float(s_now[1])))
                    new_basal = adv.apply_action(adv.AgentKind.BASAL, p, therapy.basal,
                                                 therapy.basal_init, agent.m_smooth,
                                                 prev_tdd=tdd_yesterday)
                    therapy.basal = new_basal
                    basal_state_prev = s_now
                elif day <= collection_days:
                    feats = adv.basal_features(day_pool, th)
                    if feats is not None:
                        basal_state_prev = adv.build_state(adv.AgentKind.BASAL,
                                                           feats, b_today())
                long_in += therapy.basal
                record_insulin(therapy.basal, "basal", now)
                day_pool = []

            if cho_in > 0.0 or rapid_in > 0.0 or long_in > 0.0:
                y = (y[0] + cho_in, y[1], y[2] + rapid_in, y[3],
                     y[4] + long_in, y[5], y[6], y[7], y[8])
            y = pat._rk4_minute(y, consts, dawn_base[minute] * day_factor, 1.0)
            g_day[minute] = y[8]

            if day <= collection_days and minute % init.CGM_INTERVAL_MIN == 0:
                cgm_vals.append(pat.read_smbg(y[8], streams["cgm"], cv=smbg_cv))
                cgm_times.append(now)
                cgm_basal.append(therapy.basal / MINUTES_PER_DAY)

        # Midnight housekeeping.
        prev_day_last_reading = last_reading_today
        today_first_reading = None
        last_reading_today = None
        tdd_yesterday = day_insulin
        cutoff = day_offset + MINUTES_PER_DAY - adv.DIA_MIN
        recent_insulin = [r for r in recent_insulin if r.timestamp >= cutoff]

        day_traces.append(DayTrace(
            day=day, glucose=np.array(g_day), measurements=measurements,
            insulin=insulin_today, meals=meals_today, rescues=rescues_today,
            therapy=snapshot, total_insulin_u=day_insulin))

        if day == collection_days and advisor_kind == ABBA:
            log = init.CollectionLog(cgm=np.array(cgm_vals),
                                     cgm_times=np.array(cgm_times),
                                     insulin_records=tuple(all_insulin),
                                     basal_rates=np.array(cgm_basal))
            bundle, te_bits, risk = init.initialise_agents(
                log, params.diabetes_type, streams["agents"])

        if checkpoint_cb is not None and bundle is not None:
            checkpoint_cb(day, bundle)

    return TrialResult(patient=params, arm=advisor_kind, scenario=spec.id,
                       days=days, collection_days=collection_days,
                       day_traces=day_traces, final_agents=bundle,
                       transfer_entropy_bits=te_bits, risk_class=risk,
                       initial_therapy=initial_snapshot)


# --- trace persistence ------------------------------------------------------------
#
# One trial serializes to a columnar text file, one row per event:
#
#     day,minute,kind,value,aux
#
# Kind codes:
#     T  therapy field active that day (aux = icr1|icr2|icr3|ps1|ps2|ps3|cf|basal)
#     G  plasma glucose for the minute (mg/dL)
#     M  SMBG reading (aux = measurement slot label)
#     I  insulin delivery (aux = kind:dia_minutes)
#     C  carbohydrate intake (aux = slot:duration:announced, announced "-" if none)
#     R  rescue controller firing (value = trigger reading mg/dL)
#     U  day's total delivered insulin, written once at minute 1439
#
# Floats are written with repr() so parsing returns the exact values and a
# rewrite of a parsed file reproduces it byte for byte.

TRACE_SCHEMA = "abbalab-trace v1"

_PATIENT_FIELDS = ("id", "diabetes_type", "body_weight", "insulin_sensitivity_base",
                   "carb_bioavailability", "meal_absorption_time_constant",
                   "rapid_insulin_absorption_tc", "long_insulin_absorption_tc",
                   "endogenous_glucose_production", "residual_insulin_secretion_gain",
                   "glucose_distribution_volume")
_THERAPY_FIELDS = ("icr1", "icr2", "icr3", "ps1", "ps2", "ps3", "cf", "basal")


def _fmt(x) -> str:
    return repr(float(x))


def _therapy_values(snapshot: TherapySnapshot) -> tuple:
    return (*snapshot.icr, *snapshot.ps, snapshot.cf, snapshot.basal)


def trace_to_text(result: TrialResult, headers: dict[str, str] | None = None) -> str:
    """Serialize one trial to the columnar trace document."""
    lines = [f"# {TRACE_SCHEMA}"]
    for key, value in (headers or {}).items():
        lines.append(f"# {key} {value}")
    patient_vals = " ".join(
        str(getattr(result.patient, f)) if f in ("id", "diabetes_type")
        else _fmt(getattr(result.patient, f)) for f in _PATIENT_FIELDS)
    lines.append(f"# patient {patient_vals}")
    lines.append(f"# arm {result.arm}")
    lines.append(f"# scenario {result.scenario}")
    lines.append(f"# days {result.days} {result.collection_days}")
    te = result.transfer_entropy_bits
    lines.append(f"# transfer_entropy {'-' if te is None else _fmt(te)}")
    rc = result.risk_class
    lines.append("# risk_class " +
                 ("-" if rc is None else f"{rc.variability}:{rc.nocturnal_risk}"))
    lines.append("# initial_therapy " +
                 " ".join(_fmt(v) for v in _therapy_values(result.initial_therapy)))
    lines.append("day,minute,kind,value,aux")
    for trace in result.day_traces:
        d = trace.day
        for name, value in zip(_THERAPY_FIELDS, _therapy_values(trace.therapy)):
            lines.append(f"{d},0,T,{_fmt(value)},{name}")
        offset = float((d - 1) * MINUTES_PER_DAY)
        for minute, g in enumerate(trace.glucose):
            lines.append(f"{d},{minute},G,{_fmt(g)},")
        for meas in trace.measurements:
            lines.append(f"{d},{_fmt(meas.timestamp - offset)},M,"
                         f"{_fmt(meas.value)},{meas.slot}")
        for rec in trace.insulin:
            lines.append(f"{d},{_fmt(rec.timestamp - offset)},I,"
                         f"{_fmt(rec.dose_u)},{rec.kind}:{_fmt(rec.dia)}")
        for meal in trace.meals:
            announced = "-" if meal.announced_g is None else _fmt(meal.announced_g)
            lines.append(f"{d},{meal.minute},C,{_fmt(meal.cho_g)},"
                         f"{meal.slot}:{meal.duration_min}:{announced}")
        for rescue in trace.rescues:
            lines.append(f"{d},{rescue.minute},R,{_fmt(rescue.trigger_mgdl)},")
        lines.append(f"{d},{MINUTES_PER_DAY - 1},U,{_fmt(trace.total_insulin_u)},")
    return "\n".join(lines) + "\n"


def _parse_header(lines: list[str]) -> tuple[dict[str, str], int]:
    fields = {}
    i = 1                       # line 0 is the schema tag
    while i < len(lines) and lines[i].startswith("# "):
        key, _, rest = lines[i][2:].partition(" ")
        fields[key] = rest
        i += 1
    return fields, i


def trace_from_text(text: str) -> tuple[TrialResult, dict[str, str]]:
    """Parse a trace document back into a TrialResult (agents are not stored).

    Returns the result plus every header field, so a rerun of the analytics
    can carry the original provenance lines through to its own outputs.
    """
    lines = text.splitlines()
    if not lines or lines[0] != f"# {TRACE_SCHEMA}":
        raise ValueError(f"unsupported trace schema; expected '# {TRACE_SCHEMA}'")
    fields, body_start = _parse_header(lines)
    required = ("patient", "arm", "scenario", "days", "initial_therapy")
    missing = [k for k in required if k not in fields]
    if missing:
        raise ValueError(f"trace header missing fields: {', '.join(missing)}")
    if body_start >= len(lines) or lines[body_start] != "day,minute,kind,value,aux":
        raise ValueError("trace column header missing; file truncated?")

    raw = fields["patient"].split()
    params = pat.PatientParams(
        id=int(raw[0]), diabetes_type=raw[1],
        **{f: float(v) for f, v in zip(_PATIENT_FIELDS[2:], raw[2:])})
    arm = fields["arm"]
    scenario = fields["scenario"]
    days, collection_days = (int(x) for x in fields["days"].split())
    te_raw = fields.get("transfer_entropy", "-")
    te = None if te_raw == "-" else float(te_raw)
    rc_raw = fields.get("risk_class", "-")
    risk = None
    if rc_raw != "-":
        variability, nocturnal = rc_raw.split(":")
        risk = init.RiskClass(variability=variability, nocturnal_risk=nocturnal)

    def snapshot_from(values: list[float]) -> TherapySnapshot:
        return TherapySnapshot(icr=tuple(values[0:3]), ps=tuple(values[3:6]),
                               cf=values[6], basal=values[7])

    initial = snapshot_from([float(v) for v in fields["initial_therapy"].split()])

    per_day: dict[int, dict] = {}
    for lineno, line in enumerate(lines[body_start + 1:], body_start + 2):
        parts = line.split(",", 4)
        if len(parts) != 5:
            raise ValueError(f"malformed trace row at line {lineno}: {line!r}")
        d = int(parts[0])
        bucket = per_day.setdefault(d, {
            "therapy": {}, "glucose": {}, "measurements": [], "insulin": [],
            "meals": [], "rescues": [], "total": None})
        minute, kind, value, aux = parts[1], parts[2], parts[3], parts[4]
        offset = float((d - 1) * MINUTES_PER_DAY)
        if kind == "T":
            bucket["therapy"][aux] = float(value)
        elif kind == "G":
            bucket["glucose"][int(minute)] = float(value)
        elif kind == "M":
            bucket["measurements"].append(adv.Measurement(
                value=float(value), timestamp=float(minute) + offset, slot=aux))
        elif kind == "I":
            rec_kind, _, dia = aux.partition(":")
            bucket["insulin"].append(adv.InsulinRecord(
                dose_u=float(value), kind=rec_kind,
                timestamp=float(minute) + offset, dia=float(dia)))
        elif kind == "C":
            slot, duration, announced = aux.split(":")
            bucket["meals"].append(MealEvent(
                slot=int(slot), minute=int(minute), duration_min=int(duration),
                cho_g=float(value),
                announced_g=None if announced == "-" else float(announced)))
        elif kind == "R":
            bucket["rescues"].append(RescueEvent(minute=int(minute),
                                                 trigger_mgdl=float(value)))
        elif kind == "U":
            bucket["total"] = float(value)
        else:
            raise ValueError(f"unknown trace kind {kind!r} at line {lineno}")

    day_traces = []
    for d in sorted(per_day):
        bucket = per_day[d]
        if len(bucket["glucose"]) != MINUTES_PER_DAY or bucket["total"] is None:
            raise ValueError(f"day {d} incomplete; file truncated?")
        missing_therapy = [f for f in _THERAPY_FIELDS if f not in bucket["therapy"]]
        if missing_therapy:
            raise ValueError(f"day {d} missing therapy rows: {missing_therapy}")
        glucose = np.array([bucket["glucose"][m] for m in range(MINUTES_PER_DAY)])
        day_traces.append(DayTrace(
            day=d, glucose=glucose, measurements=bucket["measurements"],
            insulin=bucket["insulin"], meals=bucket["meals"],
            rescues=bucket["rescues"],
            therapy=snapshot_from([bucket["therapy"][f] for f in _THERAPY_FIELDS]),
            total_insulin_u=bucket["total"]))
    if len(day_traces) != days:
        raise ValueError(f"expected {days} days, found {len(day_traces)}")

    result = TrialResult(patient=params, arm=arm, scenario=scenario, days=days,
                         collection_days=collection_days, day_traces=day_traces,
                         final_agents=None, transfer_entropy_bits=te,
                         risk_class=risk, initial_therapy=initial)
    reserved = {"patient", "arm", "scenario", "days", "transfer_entropy",
                "risk_class", "initial_therapy"}
    extra = {k: v for k, v in fields.items() if k not in reserved}
    return result, extra
