"""Day-long simulation runs wiring tariff, fleet, forecasts, caps and dispatch.

A run covers one day in 96 slots of 15 minutes.  Each slot the harness
classifies candidate EVs, computes the scheme's discharge cap, lets the GA
pick operations, steps every parked vehicle's battery, resolves the power
flows and accumulates cost.  Results carry full per-slot traces so every
constraint can be audited after the fact.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from chargesim import powerflow
from chargesim.fleet import (
    CHARGE,
    DISCHARGE,
    IDLE,
    ChargingMode,
    EvState,
    FleetConfig,
    classify_candidates,
    count_transitions,
    sample_fleet,
    step_soc,
)
from chargesim.forecast import ForecastModel
from chargesim.scheduler import (
    SCHEME_CHARGE_ONLY,
    SCHEME_CONVENTIONAL,
    SCHEME_PROPOSED,
    SCHEMES,
    GaParams,
    SchedulerConfig,
    discharge_cap_conventional,
    discharge_cap_proposed,
    optimize_slot,
)
from chargesim.tariff import TariffSchedule


def synth_profiles(seed: int, slots_per_day: int = 96, dt_hours: float = 0.25,
                   pv_capacity_kw: float = 90.0) -> tuple[np.ndarray, np.ndarray]:
    """Generate one day of local load and PV output, kW per slot.

    The load is double-peaked with the higher peak in the evening; PV is a
    daylight bell that is exactly zero outside 06:00-20:00.  Levels are
    scaled so load minus PV clears the 86 kW discharge flag in the morning
    and evening but stays under it across midday.  Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    hours = np.arange(slots_per_day) * dt_hours

    def bump(center, width):
        return np.exp(-(((hours - center) / width) ** 2))

    load = 68.0 + 48.0 * bump(8.5, 2.0) + 62.0 * bump(19.3, 3.2)
    load = np.maximum(load + rng.normal(0.0, 1.5, slots_per_day), 0.0)

    pv = pv_capacity_kw * bump(13.0, 2.8)
    pv = pv + rng.normal(0.0, 1.0, slots_per_day)
    pv[(hours < 6.0) | (hours >= 20.0)] = 0.0
    pv = np.clip(pv, 0.0, pv_capacity_kw)
    return load, pv


def pv_from_weather(irradiance_wm2, temp_c, pv_capacity_kw: float) -> np.ndarray:
    """Map irradiance and ambient temperature to PV power.

    Linear in irradiance relative to 1000 W/m2 with a 0.4 %/degC derate above
    25 degC, clipped to the array rating.
    """
    irr = np.asarray(irradiance_wm2, dtype=float)
    temp = np.asarray(temp_c, dtype=float)
    power = pv_capacity_kw * (irr / 1000.0) * (1.0 - 0.004 * (temp - 25.0))
    return np.clip(power, 0.0, pv_capacity_kw)


def load_series_csv(path, n_slots: int | None = None) -> np.ndarray:
    """Read a kW series from a CSV with columns slot,value_kw."""
    values = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            values[int(row["slot"])] = float(row["value_kw"])
    if not values:
        raise ValueError(f"series CSV {path} is empty")
    size = n_slots if n_slots is not None else max(values) + 1
    series = np.zeros(size)
    for slot in range(size):
        if slot not in values:
            raise ValueError(f"series CSV {path} missing slot {slot}")
        series[slot] = values[slot]
    return series


def load_weather_csv(path, pv_capacity_kw: float, n_slots: int = 96) -> np.ndarray:
    """Read slot,irradiance_wm2,temp_c rows and convert to PV power."""
    irr = np.zeros(n_slots)
    temp = np.full(n_slots, 25.0)
    seen = set()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            slot = int(row["slot"])
            irr[slot] = float(row["irradiance_wm2"])
            temp[slot] = float(row["temp_c"])
            seen.add(slot)
    missing = set(range(n_slots)) - seen
    if missing:
        raise ValueError(f"weather CSV {path} missing slot {min(missing)}")
    return pv_from_weather(irr, temp, pv_capacity_kw)


class PerfectForesight:
    """Forecast source that reads the actual series, wrapping at midnight."""

    def __init__(self, load_series, pv_series, horizon: int = 7):
        self.load = np.asarray(load_series, dtype=float)
        self.pv = np.asarray(pv_series, dtype=float)
        self.horizon = horizon

    def __call__(self, t: int):
        n = len(self.load)
        return [(float(self.load[(t + k) % n]), float(self.pv[(t + k) % n]))
                for k in range(1, self.horizon + 1)]


class ModelForecast:
    """Forecast source backed by trained load and PV models.

    Feeds each model the last 12 measured samples; slots without enough
    history return None, which makes the cap rule fall back to the
    conventional comparison.
    """

    def __init__(self, load_model: ForecastModel, pv_model: ForecastModel,
                 load_series, pv_series):
        self.load_model = load_model
        self.pv_model = pv_model
        self.load = np.asarray(load_series, dtype=float)
        self.pv = np.asarray(pv_series, dtype=float)

    def __call__(self, t: int):
        width = self.load_model.input_len
        if t + 1 < width:
            return None
        window = slice(t + 1 - width, t + 1)
        load_hat = self.load_model.predict(self.load[window])
        pv_hat = self.pv_model.predict(self.pv[window])
        return list(zip(load_hat.tolist(), pv_hat.tolist()))


@dataclass
class Scenario:
    """Everything one day's simulation needs apart from scheme and seed."""

    tariff: TariffSchedule = field(default_factory=TariffSchedule)
    fleet_cfg: FleetConfig = field(default_factory=FleetConfig)
    sched_cfg: SchedulerConfig = field(default_factory=SchedulerConfig)
    slots_per_day: int = 96
    dt_hours: float = 0.25
    pv_capacity_kw: float = 90.0
    load_series: np.ndarray | None = None   # None selects synthetic profiles
    pv_series: np.ndarray | None = None
    fleet: list[EvState] | None = None      # explicit fleet override
    forecast_mode: str = "perfect"          # "perfect" or "model"
    load_model: ForecastModel | None = None
    pv_model: ForecastModel | None = None

    def __post_init__(self):
        if abs(self.slots_per_day * self.dt_hours - 24.0) > 1e-9:
            raise ValueError("slots_per_day x dt_hours must cover 24 h")
        for name in ("load_series", "pv_series"):
            series = getattr(self, name)
            if series is None:
                continue
            series = np.asarray(series, dtype=float)
            if series.shape != (self.slots_per_day,):
                raise ValueError(f"{name} must have {self.slots_per_day} samples")
            if np.any(series < 0):
                raise ValueError(f"{name} must be non-negative")
            setattr(self, name, series)
        if self.pv_series is not None and np.any(self.pv_series > self.pv_capacity_kw + 1e-9):
            raise ValueError("pv_series exceeds pv_capacity_kw")
        if self.forecast_mode not in ("perfect", "model"):
            raise ValueError(f"unknown forecast_mode {self.forecast_mode!r}")

    @classmethod
    def paper_like(cls, ga_profile: str = "desk") -> "Scenario":
        """Station setup used for the scheme comparison studies.

        Keeps the published station constants (50 EVs of 64 kWh, 86 kW flag,
        12/2 kW caps, 157 kW grid limit) on the synthetic day profiles.  The
        commuter fleet parks roughly 10:20-18:00, so its aggregate energy
        demand must fit through the 157 kW limit net of the local load; the
        initial-SOC mean is therefore set to 60 % rather than 15 %, which
        would require about 2 MWh of charging, more than the window can
        physically admit.
        """
        ga = GaParams.desk() if ga_profile == "desk" else GaParams()
        return cls(
            tariff=TariffSchedule(smp=0.13, rec_price=0.075),
            fleet_cfg=FleetConfig(n_evs=50, init_soc_mean=60.0, init_soc_std=5.0),
            sched_cfg=SchedulerConfig(ga=ga, weights=(1.0, 0.2, 0.05, 0.4, 1.2)),
        )


@dataclass
class DayResult:
    """Full trace of one simulated day for one scheme and seed."""

    scheme: str
    seed: int
    load: np.ndarray
    pv: np.ndarray
    caps: np.ndarray
    dispatches: list
    costs: np.ndarray
    ops: list                 # per slot: {ev_id: op} for parked admitted EVs
    soc_before: list          # per slot: {ev_id: soc at slot start}
    fleet: list
    total_cost: float = 0.0
    aux_load_cost: float = 0.0
    grid_purchase_kwh: float = 0.0
    grid_sold_kwh: float = 0.0
    pv_used_kwh: float = 0.0
    ev_charge_kwh: float = 0.0
    ev_discharge_kwh: float = 0.0
    target_attained: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def attainment_rate(self) -> float:
        if not self.target_attained:
            return 1.0
        return sum(self.target_attained.values()) / len(self.target_attained)


def charge_increment(ev: EvState, cfg: FleetConfig, dt_hours: float) -> float:
    """SOC gained by one charging slot at the EV's assigned mode, percent."""
    return 100.0 * cfg.eta_ch * ev.mode.power_kw * dt_hours / ev.capacity_kwh


def _build_forecaster(scenario: Scenario, load, pv):
    if scenario.forecast_mode == "model":
        if scenario.load_model is None or scenario.pv_model is None:
            raise ValueError("forecast_mode 'model' needs load_model and pv_model")
        return ModelForecast(scenario.load_model, scenario.pv_model, load, pv)
    return PerfectForesight(load, pv, horizon=max(scenario.sched_cfg.lookahead_k, 1))


def run_day(scenario: Scenario, scheme: str, seed: int,
            forecaster=None) -> DayResult:
    """Simulate one day under the given scheme.  Deterministic per seed.

    The same seed yields the same fleet and profiles for every scheme, so
    scheme comparisons are paired.  Constraint violations do not abort the
    run; they are collected on the result.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    children = np.random.SeedSequence(seed).spawn(3)
    fleet_seed = int(children[0].generate_state(1)[0])
    profile_seed = int(children[1].generate_state(1)[0])
    ga_rng = np.random.default_rng(children[2])

    cfg = scenario.fleet_cfg
    dt = scenario.dt_hours
    if scenario.fleet is not None:
        evs = copy.deepcopy(scenario.fleet)
    else:
        evs = sample_fleet(replace(cfg, rng_seed=fleet_seed), dt)

    if scenario.load_series is not None:
        load = scenario.load_series
        pv = scenario.pv_series if scenario.pv_series is not None \
            else np.zeros(scenario.slots_per_day)
    else:
        load, pv = synth_profiles(profile_seed, scenario.slots_per_day, dt,
                                  scenario.pv_capacity_kw)

    if forecaster is None and scheme == SCHEME_PROPOSED:
        forecaster = _build_forecaster(scenario, load, pv)

    sched = scenario.sched_cfg
    n_slots = scenario.slots_per_day
    caps = np.zeros(n_slots)
    costs = np.zeros(n_slots)
    dispatches = []
    ops_trace = []
    soc_trace = []
    aux_load_cost = 0.0

    for t in range(n_slots):
        charge_set, discharge_set = classify_candidates(evs, t, cfg, dt)
        if scheme == SCHEME_CHARGE_ONLY:
            cap = 0.0
            discharge_set = []
        elif scheme == SCHEME_CONVENTIONAL:
            cap = discharge_cap_conventional(load[t], pv[t], sched)
        else:
            cap = discharge_cap_proposed(load[t], pv[t], forecaster(t), sched)
        caps[t] = cap

        decision = optimize_slot(charge_set, discharge_set, cap, load[t],
                                 pv[t], scenario.tariff, t, sched, ga_rng,
                                 dt, n_slots)

        slot_ops = {}
        slot_soc = {}
        for ev in evs:
            if ev.mode is ChargingMode.M0 or not ev.is_parked(t):
                continue
            op = decision.ops.get(ev.id, IDLE)
            slot_soc[ev.id] = ev.soc
            step_soc(ev, op, cfg, dt)
            slot_ops[ev.id] = op

        d = decision.dispatch
        dispatches.append(d)
        ops_trace.append(slot_ops)
        soc_trace.append(slot_soc)
        costs[t] = powerflow.slot_cost(d, scenario.tariff, t, dt)
        aux_load_cost += scenario.tariff.purchase_price(t) * d.pw_grid_load * dt

    result = DayResult(
        scheme=scheme, seed=seed, load=load, pv=pv, caps=caps,
        dispatches=dispatches, costs=costs, ops=ops_trace,
        soc_before=soc_trace, fleet=evs,
        total_cost=float(costs.sum()),
        aux_load_cost=aux_load_cost,
        grid_purchase_kwh=sum(grid_p * dt for grid_p, _, _ in map(powerflow.grid_power, dispatches)),
        grid_sold_kwh=sum(sold * dt for _, sold, _ in map(powerflow.grid_power, dispatches)),
        pv_used_kwh=sum(d.pv_used * dt for d in dispatches),
        ev_charge_kwh=sum(d.ev_charge_total * dt for d in dispatches),
        ev_discharge_kwh=sum(d.ev_discharge_total * dt for d in dispatches),
    )
    for ev in evs:
        if ev.mode is ChargingMode.M0:
            continue
        threshold = ev.target_soc - charge_increment(ev, cfg, dt) - 1e-9
        result.target_attained[ev.id] = ev.soc >= threshold
    result.violations = verify_day(result, scenario)
    return result


def verify_day(result: DayResult, scenario: Scenario) -> list[str]:
    """Audit every slot of a result against the model's constraints.

    Checks power-balance identities, PV limits, the per-slot discharge cap,
    the net grid limit, SOC operation rules, mutual exclusion of charge and
    discharge, and per-EV switch budgets.  Returns human-readable violation
    strings, empty when the day is clean.
    """
    tol = powerflow.BALANCE_TOL
    cfg = scenario.fleet_cfg
    problems = []
    by_id = {ev.id: ev for ev in result.fleet}
    for t, d in enumerate(result.dispatches):
        if min(d.pw_grid_load, d.pw_grid_ev, d.pw_pv_load, d.pw_pv_ev,
               d.pw_ev_load, d.pw_ev_ev) < -tol:
            problems.append(f"slot {t}: negative flow")
        if abs(d.pw_grid_load + d.pw_pv_load + d.pw_ev_load - d.pw_load) > tol:
            problems.append(f"slot {t}: load balance broken")
        if abs(d.pw_grid_ev + d.pw_pv_ev + d.pw_ev_ev - d.ev_charge_total) > tol:
            problems.append(f"slot {t}: charge balance broken")
        if abs(d.pw_ev_load + d.pw_ev_ev - d.ev_discharge_total) > tol:
            problems.append(f"slot {t}: discharge balance broken")
        if d.pv_used > d.pw_pv_avail + tol:
            problems.append(f"slot {t}: PV use exceeds availability")
        if d.ev_discharge_total > result.caps[t] + tol:
            problems.append(f"slot {t}: discharge above cap")
        if powerflow.grid_cap_lhs(d) > scenario.sched_cfg.pw_max + tol:
            problems.append(f"slot {t}: net grid draw above limit")

        ops = result.ops[t]
        soc = result.soc_before[t]
        discharge_kw = 0.0
        for ev_id, op in ops.items():
            ev = by_id[ev_id]
            if op == CHARGE and soc[ev_id] >= ev.target_soc:
                problems.append(f"slot {t}: EV {ev_id} charged at/above target")
            if op == DISCHARGE:
                discharge_kw += ev.mode.power_kw
                if soc[ev_id] <= ev.soc_min:
                    problems.append(f"slot {t}: EV {ev_id} discharged at/below floor")
                if not ev.v2g_eligible:
                    problems.append(f"slot {t}: EV {ev_id} discharged without eligibility")
        if discharge_kw > result.caps[t] + tol:
            problems.append(f"slot {t}: requested discharge above cap")
        if result.scheme == SCHEME_CHARGE_ONLY and discharge_kw > 0:
            problems.append(f"slot {t}: discharge under charge-only scheme")

    for ev in result.fleet:
        transitions = count_transitions(ev.o_ch) + count_transitions(ev.o_dch)
        if transitions != ev.switch_events:
            problems.append(f"EV {ev.id}: switch accounting mismatch")
        if transitions > cfg.n_max_switches:
            problems.append(f"EV {ev.id}: {transitions} switch events over budget")
        if any(c and d for c, d in zip(ev.o_ch, ev.o_dch)):
            problems.append(f"EV {ev.id}: simultaneous charge and discharge")
        if not (0.0 <= ev.soc <= 100.0):
            problems.append(f"EV {ev.id}: SOC out of range")
    return problems


# -- reporting ----------------------------------------------------------------

SUMMARY_FIELDS = (
    "scheme", "seed", "total_cost_usd", "grid_purchase_kwh", "grid_sold_kwh",
    "pv_used_kwh", "ev_charge_kwh", "ev_discharge_kwh", "pct_at_target",
    "aux_load_cost_usd", "violations",
)


def emit_reports(results: list[DayResult], out_dir) -> dict[str, Path]:
    """Write dispatch, fleet trajectory and summary CSVs for a set of runs.

    Produces ``dispatch_<scheme>.csv`` and ``fleet_<scheme>.csv`` per scheme
    (seed column distinguishes days) plus one ``summary.csv`` row per run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for r in results:
            writer.writerow([
                r.scheme, r.seed, f"{r.total_cost:.6f}",
                f"{r.grid_purchase_kwh:.6f}", f"{r.grid_sold_kwh:.6f}",
                f"{r.pv_used_kwh:.6f}", f"{r.ev_charge_kwh:.6f}",
                f"{r.ev_discharge_kwh:.6f}", f"{100.0 * r.attainment_rate:.2f}",
                f"{r.aux_load_cost:.6f}", len(r.violations),
            ])
    paths["summary"] = summary_path

    for scheme in sorted({r.scheme for r in results}):
        runs = [r for r in results if r.scheme == scheme]

        dispatch_path = out / f"dispatch_{scheme}.csv"
        with open(dispatch_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "slot", "load_kw", "pv_avail_kw",
                             "grid_load_kw", "grid_ev_kw", "pv_load_kw",
                             "pv_ev_kw", "ev_load_kw", "ev_ev_kw",
                             "ev_charge_kw", "ev_discharge_kw", "cap_kw",
                             "cost_usd"])
            for r in runs:
                for t, d in enumerate(r.dispatches):
                    writer.writerow([
                        r.seed, t, f"{d.pw_load:.9f}", f"{d.pw_pv_avail:.9f}",
                        f"{d.pw_grid_load:.9f}", f"{d.pw_grid_ev:.9f}",
                        f"{d.pw_pv_load:.9f}", f"{d.pw_pv_ev:.9f}",
                        f"{d.pw_ev_load:.9f}", f"{d.pw_ev_ev:.9f}",
                        f"{d.ev_charge_total:.9f}", f"{d.ev_discharge_total:.9f}",
                        f"{r.caps[t]:.9f}", f"{r.costs[t]:.9f}",
                    ])
        paths[f"dispatch_{scheme}"] = dispatch_path

        fleet_path = out / f"fleet_{scheme}.csv"
        with open(fleet_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "ev_id", "slot", "op", "soc_before_pct"])
            for r in runs:
                for t, ops in enumerate(r.ops):
                    for ev_id in sorted(ops):
                        writer.writerow([r.seed, ev_id, t, ops[ev_id],
                                         f"{r.soc_before[t][ev_id]:.6f}"])
        paths[f"fleet_{scheme}"] = fleet_path
    return paths


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def resummed_cost(dispatch_path, seed: int) -> float:
    """Re-total the cost column of a dispatch CSV for one seed."""
    total = 0.0
    with open(dispatch_path, newline="") as fh:
        for row in csv.DictReader(fh):
            if int(row["seed"]) == seed:
                total += float(row["cost_usd"])
    return total
