"""Adaptive basal-bolus advisor: seven actor-critic agents plus the static
baseline calculator.

One basal agent and three ICR / three PS meal-slot agents adjust insulin
therapy from sparse fingerstick readings. Each agent runs TD(lambda) with a
linear value function, a linear deterministic policy blended with a
supervisory policy for the ICR agents, and a from-scratch Adam step on the
policy parameters. Everything here is pure given (state, inputs) except the
explicit mutations in critic_update / actor_update.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

GAMMA = 0.9
LAMBDA = 0.5
ALPHA_SP = 0.1
STATE_EPS = 0.05          # floor for |s_i| in the actor gradient
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DIA_MIN = 240.0           # rapid-acting duration of insulin action
HYPER_DIVISOR = 220.0     # feature normalization, 400 - 180
HYPO_DIVISOR = 50.0       # feature normalization, 70 - 20

BETA_T1D = (1.0, 10.0)    # (beta_hyper, beta_hypo)
BETA_T2D = (10.0, 1.0)

MEAL_SLOTS = ("breakfast", "lunch", "dinner")


class AgentKind(enum.Enum):
    BASAL = "Basal"
    ICR1 = "ICR1"
    ICR2 = "ICR2"
    ICR3 = "ICR3"
    PS1 = "PS1"
    PS2 = "PS2"
    PS3 = "PS3"

    @property
    def state_dim(self) -> int:
        return 4 if self in (AgentKind.BASAL, AgentKind.ICR3) else 2

    @property
    def is_icr(self) -> bool:
        return self in (AgentKind.ICR1, AgentKind.ICR2, AgentKind.ICR3)

    @property
    def is_ps(self) -> bool:
        return self in (AgentKind.PS1, AgentKind.PS2, AgentKind.PS3)

    @property
    def is_basal(self) -> bool:
        return self is AgentKind.BASAL

    @property
    def meal_slot(self) -> int | None:
        """0 = breakfast, 1 = lunch, 2 = dinner; None for the basal agent."""
        if self.is_basal:
            return None
        return int(self.value[-1]) - 1


ICR_AGENTS = (AgentKind.ICR1, AgentKind.ICR2, AgentKind.ICR3)
PS_AGENTS = (AgentKind.PS1, AgentKind.PS2, AgentKind.PS3)


@dataclass(frozen=True)
class Thresholds:
    g_hyper: float = 180.0
    g_hypo: float = 70.0
    g_low_morning: float = 90.0   # morning bound of the overnight-delta rule
    hypo_severe: float = 50.0
    rescue: float = 30.0
    target: float = 110.0

    def __post_init__(self):
        if not (self.rescue < self.hypo_severe < self.g_hypo
                < self.g_low_morning < self.target < self.g_hyper):
            raise ValueError("threshold ordering violated")


@dataclass(frozen=True)
class NormalizationSpec:
    hyper_divisor: float = HYPER_DIVISOR
    hypo_divisor: float = HYPO_DIVISOR


DEFAULT_THRESHOLDS = Thresholds()
DEFAULT_NORM = NormalizationSpec()


@dataclass(frozen=True)
class Measurement:
    value: float          # mg/dL
    timestamp: float      # minutes since trial start
    slot: str             # pre_breakfast / pre_lunch / pre_dinner / bedtime /
                          # post_prandial / rescue


@dataclass(frozen=True)
class InsulinRecord:
    dose_u: float
    kind: str             # bolus / basal / correction
    timestamp: float      # minutes since trial start
    dia: float = DIA_MIN

    def __post_init__(self):
        if self.dose_u < 0:
            raise ValueError("insulin dose must be >= 0")


@dataclass(frozen=True)
class FeatureVector:
    f_hyper: float
    f_hypo: float

    def __iter__(self):
        yield self.f_hyper
        yield self.f_hypo

    def as_array(self) -> np.ndarray:
        return np.array([self.f_hyper, self.f_hypo], dtype=float)


def glucose_error(g: float, th: Thresholds = DEFAULT_THRESHOLDS) -> float:
    """Signed excursion outside [g_hypo, g_hyper]; zero inside."""
    if g > th.g_hyper:
        return g - th.g_hyper
    if g < th.g_hypo:
        return g - th.g_hypo
    return 0.0


def _values(window) -> list[float]:
    return [m.value if isinstance(m, Measurement) else float(m) for m in window]


def bolus_features(window, th: Thresholds = DEFAULT_THRESHOLDS,
                   norm: NormalizationSpec = DEFAULT_NORM) -> FeatureVector | None:
    """Feature vector of one post-meal window; None signals skip-update."""
    vals = _values(window)
    if not vals:
        return None
    hyper_sum = hypo_sum = 0.0
    n_h = n_l = 0
    for v in vals:
        e = glucose_error(v, th)
        if e > 0.0:
            hyper_sum += e
            n_h += 1
        elif e < 0.0:
            hypo_sum += -e
            n_l += 1
    f_hyper = (hyper_sum / n_h) / norm.hyper_divisor if n_h else 0.0
    f_hypo = (hypo_sum / n_l) / norm.hypo_divisor if n_l else 0.0
    return FeatureVector(min(f_hyper, 1.0), min(f_hypo, 1.0))


def basal_features(day_measurements, th: Thresholds = DEFAULT_THRESHOLDS,
                   norm: NormalizationSpec = DEFAULT_NORM) -> FeatureVector | None:
    """Same form as bolus_features, pooling every measurement of the day."""
    return bolus_features(day_measurements, th, norm)


def overnight_delta(first_morning, last_night,
                    th: Thresholds = DEFAULT_THRESHOLDS,
                    norm: NormalizationSpec = DEFAULT_NORM) -> np.ndarray:
    """Morning-vs-night excursion pair, normalized; zeros when either is missing."""
    if first_morning is None or last_night is None:
        return np.zeros(2)
    g_m = first_morning.value if isinstance(first_morning, Measurement) else float(first_morning)
    g_n = last_night.value if isinstance(last_night, Measurement) else float(last_night)
    b_hyper = b_hypo = 0.0
    if g_m > th.g_hyper and g_n < th.g_hyper:
        b_hyper = g_m - g_n
    if g_m < th.g_low_morning and g_n > th.g_low_morning:
        b_hypo = g_n - g_m
    return np.array([min(b_hyper / norm.hyper_divisor, 1.0),
                     min(b_hypo / norm.hypo_divisor, 1.0)])


def build_state(kind: AgentKind, features: FeatureVector,
                b_k: np.ndarray | None = None) -> np.ndarray:
    f = features.as_array() if isinstance(features, FeatureVector) else np.asarray(features, dtype=float)
    if kind.state_dim == 2:
        return f.copy()
    if b_k is None:
        log.warning("missing overnight delta for %s; treated as (0, 0)", kind.value)
        b_k = np.zeros(2)
    return np.concatenate([f, np.asarray(b_k, dtype=float)])


def cost(next_state, beta: tuple[float, float]) -> float:
    """Weighted post-action excursion cost; uses the feature part of the state."""
    b_hyper, b_hypo = beta
    if b_hyper <= 0 or b_hypo <= 0:
        raise ValueError("cost weights must be > 0")
    s = list(next_state)
    return b_hyper * float(s[0]) + b_hypo * float(s[1])


@dataclass
class AgentState:
    kind: AgentKind
    theta: np.ndarray
    w: np.ndarray
    z: np.ndarray
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    step_count: int = 0
    lr_a: float = 0.1
    lr_c: float = 0.1
    gamma: float = GAMMA
    lam: float = LAMBDA
    alpha_sp: float = ALPHA_SP
    m_smooth: float = 0.5
    frozen_faults: int = 0

    def __post_init__(self):
        dim = self.kind.state_dim
        for name in ("theta", "w", "z"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (dim,):
                raise ValueError(f"{name} must have dim {dim} for {self.kind.value}")
            setattr(self, name, arr.copy())
        if self.adam_m is None:
            self.adam_m = np.zeros(dim)
        if self.adam_v is None:
            self.adam_v = np.zeros(dim)
        self.adam_m = np.asarray(self.adam_m, dtype=float).copy()
        self.adam_v = np.asarray(self.adam_v, dtype=float).copy()
        if self.lr_a <= 0 or self.lr_c <= 0:
            raise ValueError("learning rates must be > 0")


def critic_update(agent: AgentState, s_t: np.ndarray, s_next: np.ndarray,
                  beta: tuple[float, float]) -> float:
    """TD(lambda) step: returns the TD error and mutates w and z."""
    s_t = np.asarray(s_t, dtype=float)
    s_next = np.asarray(s_next, dtype=float)
    c_next = cost(s_next, beta)
    d = c_next + agent.gamma * float(agent.w @ s_next) - float(agent.w @ s_t)
    if not math.isfinite(d):
        agent.frozen_faults += 1
        log.error("non-finite TD error for %s; agent frozen this step", agent.kind.value)
        return d
    agent.w = agent.w + agent.lr_c * d * agent.z
    agent.z = agent.lam * agent.z + s_next
    return d


def policy(agent: AgentState, s_t: np.ndarray,
           f_prev_day: FeatureVector | np.ndarray) -> float:
    """Blended policy output P (fractional change driver).

    The linear policy reads the full state; for ICR agents a supervisory
    policy computed from the previous day's post-meal features provides a
    conservative pull, weighted by alpha_LP. Basal and PS agents use the
    linear policy alone.
    """
    lp = float(np.asarray(agent.theta) @ np.asarray(s_t, dtype=float))
    if not agent.kind.is_icr:
        return lp
    f = list(f_prev_day)
    f0, f1 = float(f[0]), float(f[1])
    if f0 == 0.0 and f1 == 0.0:
        return 0.0                                   # alpha_LP = 0 and SP = 0
    if (f0 > 0.0 and f1 == 0.0) or f0 > f1:
        sp = -agent.alpha_sp * f0
        alpha_lp = 0.5
    elif (f1 > 0.0 and f0 == 0.0) or f1 > f0:
        sp = agent.alpha_sp * f1
        alpha_lp = 0.5
    else:                                            # F[0] == F[1] > 0
        sp = 0.0
        alpha_lp = 1.0
    return alpha_lp * lp + (1.0 - alpha_lp) * sp


def actor_update(agent: AgentState, td_error: float, s_t: np.ndarray) -> None:
    """One Adam step on theta along d/s (descent direction of cost)."""
    s = np.asarray(s_t, dtype=float)
    floored = np.where(np.abs(s) >= STATE_EPS, s, np.where(s < 0, -STATE_EPS, STATE_EPS))
    g = td_error / floored
    if not np.all(np.isfinite(g)):
        agent.frozen_faults += 1
        log.error("non-finite actor gradient for %s; update skipped", agent.kind.value)
        return
    if td_error == 0.0:
        # Zero gradient: moments decay, theta stays put.
        agent.adam_m = ADAM_BETA1 * agent.adam_m
        agent.adam_v = ADAM_BETA2 * agent.adam_v
        agent.step_count += 1
        return
    agent.step_count += 1
    t = agent.step_count
    agent.adam_m = ADAM_BETA1 * agent.adam_m + (1.0 - ADAM_BETA1) * g
    agent.adam_v = ADAM_BETA2 * agent.adam_v + (1.0 - ADAM_BETA2) * g * g
    m_hat = agent.adam_m / (1.0 - ADAM_BETA1 ** t)
    v_hat = agent.adam_v / (1.0 - ADAM_BETA2 ** t)
    agent.theta = agent.theta - agent.lr_a * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def apply_action(kind: AgentKind, p: float, current: float, a_init: float,
                 m: float, prev_tdd: float | None = None) -> float:
    """Multiplicative therapy update with clamp and the basal TDD guard."""
    if current <= 0 or a_init <= 0:
        raise ValueError("therapy values must be > 0")
    a_new = current + m * p * current
    a_new = min(max(a_new, 0.5 * a_init), 2.0 * a_init)
    if kind.is_basal and prev_tdd is not None and a_new < 0.25 * prev_tdd:
        return current                                # revert
    return a_new


def iob(records, now: float) -> float:
    """Linear-decay insulin on board from bolus and correction records."""
    total = 0.0
    for r in records:
        if r.kind == "basal":
            continue
        elapsed = now - r.timestamp
        if 0.0 <= elapsed < r.dia:
            total += r.dose_u * (1.0 - elapsed / r.dia)
    return total


# --- dose calculators ---------------------------------------------------------

@dataclass
class TherapyParams:
    """Current adjustable therapy with initial values fixing the clamp bounds."""
    icr: list[float]            # g/U per meal slot
    ps: list[float]             # dimensionless per meal slot
    cf: float                   # mg/dL per U
    basal: float                # U/day
    icr_init: list[float] = None
    ps_init: list[float] = None
    basal_init: float = None

    def __post_init__(self):
        self.icr = [float(v) for v in self.icr]
        self.ps = [float(v) for v in self.ps]
        if self.icr_init is None:
            self.icr_init = list(self.icr)
        if self.ps_init is None:
            self.ps_init = list(self.ps)
        if self.basal_init is None:
            self.basal_init = self.basal
        if min(self.icr) <= 0 or min(self.ps) <= 0 or self.cf <= 0 or self.basal <= 0:
            raise ValueError("therapy values must be > 0")

    def a_init(self, kind: AgentKind) -> float:
        if kind.is_basal:
            return self.basal_init
        slot = kind.meal_slot
        return self.icr_init[slot] if kind.is_icr else self.ps_init[slot]

    def current(self, kind: AgentKind) -> float:
        if kind.is_basal:
            return self.basal
        slot = kind.meal_slot
        return self.icr[slot] if kind.is_icr else self.ps[slot]

    def set_current(self, kind: AgentKind, value: float) -> None:
        if kind.is_basal:
            self.basal = value
        elif kind.is_icr:
            self.icr[kind.meal_slot] = value
        else:
            self.ps[kind.meal_slot] = value


def bolus_recommendation(cho_g: float, g_c: float, therapy: TherapyParams,
                         meal_slot: int, iob_u: float,
                         th: Thresholds = DEFAULT_THRESHOLDS) -> float:
    """Meal bolus: (CHO/ICR + (G - target)/CF) * PS - IOB, floored at 0."""
    if cho_g < 0:
        raise ValueError("cho must be >= 0")
    raw = (cho_g / therapy.icr[meal_slot]
           + (g_c - th.target) / therapy.cf) * therapy.ps[meal_slot] - iob_u
    return max(raw, 0.0)


def bba_recommendation(cho_g: float, g_c: float, therapy: TherapyParams,
                       iob_u: float, meal_slot: int = 0,
                       th: Thresholds = DEFAULT_THRESHOLDS) -> float:
    """Static baseline calculator: the meal bolus with PS fixed at 1."""
    if cho_g < 0:
        raise ValueError("cho must be >= 0")
    raw = (cho_g / therapy.icr[meal_slot]
           + (g_c - th.target) / therapy.cf) - iob_u
    return max(raw, 0.0)


def correction_bolus(g_c: float, therapy: TherapyParams, ps_slot: float,
                     iob_u: float, th: Thresholds = DEFAULT_THRESHOLDS) -> float | None:
    """Between-meal correction, only above the hyper bound; None otherwise."""
    if g_c <= th.g_hyper:
        return None
    return max(((g_c - th.target) / therapy.cf) * ps_slot - iob_u, 0.0)


# --- agent bundle -------------------------------------------------------------

@dataclass
class AgentBundle:
    agents: dict[AgentKind, AgentState]

    def __getitem__(self, kind: AgentKind) -> AgentState:
        return self.agents[kind]

    def __iter__(self):
        return iter(self.agents.values())


def make_bundle(theta_by_kind: dict[AgentKind, np.ndarray],
                hyper_by_kind: dict[AgentKind, dict],
                rng: np.random.Generator) -> AgentBundle:
    """Assemble the seven agents; critic weights and traces start small-random."""
    agents = {}
    for kind in AgentKind:
        dim = kind.state_dim
        hp = hyper_by_kind[kind]
        agents[kind] = AgentState(
            kind=kind,
            theta=np.asarray(theta_by_kind[kind], dtype=float),
            w=rng.uniform(0.0, 0.01, dim),
            z=rng.uniform(0.0, 0.01, dim),
            lr_a=hp["lr_a"],
            lr_c=hp["lr_c"],
            m_smooth=hp["m"],
            alpha_sp=hp.get("alpha_sp", ALPHA_SP),
        )
    return AgentBundle(agents)


# Serialization: versioned human-readable key-value text.

_BUNDLE_SCHEMA = "abbalab-agents v1"
_VEC_FIELDS = ("theta", "w", "z", "adam_m", "adam_v")
_SCALAR_FIELDS = ("step_count", "lr_a", "lr_c", "gamma", "lam", "alpha_sp",
                  "m_smooth", "frozen_faults")


def bundle_to_text(bundle: AgentBundle, header_lines: list[str] | None = None) -> str:
    lines = [f"# {_BUNDLE_SCHEMA}"]
    for h in header_lines or ():
        lines.append(f"# {h}")
    for kind in AgentKind:
        a = bundle.agents[kind]
        for f in _VEC_FIELDS:
            vec = " ".join(repr(float(v)) for v in getattr(a, f))
            lines.append(f"{kind.value}.{f} = {vec}")
        for f in _SCALAR_FIELDS:
            lines.append(f"{kind.value}.{f} = {getattr(a, f)!r}")
    return "\n".join(lines) + "\n"


def bundle_from_text(text: str) -> AgentBundle:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(f"# {_BUNDLE_SCHEMA}"):
        raise ValueError("not an agent bundle file (schema tag missing)")
    raw: dict[str, dict[str, str]] = {}
    for ln in lines:
        if not ln or ln.startswith("#"):
            continue
        key, _, value = ln.partition(" = ")
        name, _, fieldname = key.partition(".")
        raw.setdefault(name, {})[fieldname] = value
    agents = {}
    for kind in AgentKind:
        fields = raw[kind.value]
        vecs = {f: np.array([float(x) for x in fields[f].split()]) for f in _VEC_FIELDS}
        agents[kind] = AgentState(
            kind=kind,
            theta=vecs["theta"], w=vecs["w"], z=vecs["z"],
            adam_m=vecs["adam_m"], adam_v=vecs["adam_v"],
            step_count=int(fields["step_count"]),
            lr_a=float(fields["lr_a"]), lr_c=float(fields["lr_c"]),
            gamma=float(fields["gamma"]), lam=float(fields["lam"]),
            alpha_sp=float(fields["alpha_sp"]), m_smooth=float(fields["m_smooth"]),
            frozen_faults=int(fields["frozen_faults"]),
        )
    return AgentBundle(agents)


def beta_for(diabetes_type: str) -> tuple[float, float]:
    return BETA_T1D if diabetes_type == "T1D" else BETA_T2D
