"""EV population model: arrivals, charging modes, SOC dynamics, candidacy.

Vehicles commute to the workplace hosting the station; arrival times follow
the morning (workplace) pattern and departure times the evening (home)
pattern.  Each admitted EV is assigned a fixed on-off charging mode sized so
the target SOC is reachable within its parking window with margin to spare
for discharging service.

Per-slot operation histories are kept as binary on/off records.  A switch
event is one 0-to-1 or 1-to-0 transition in either history; the combined
count per EV is budgeted by ``n_max_switches`` to limit battery cycling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SLOTS_PER_DAY = 96

# Per-slot operations assignable to an EV.
CHARGE = "charge"
DISCHARGE = "discharge"
IDLE = "idle"
OPS = (IDLE, CHARGE, DISCHARGE)


class ChargingMode(Enum):
    """On-off charger power levels, kW."""

    M0 = 0.0     # entry denied
    M1 = 7.0
    M2 = 19.2

    @property
    def power_kw(self) -> float:
        return self.value


@dataclass
class FleetConfig:
    """Population and battery parameters.

    SOC values are percent of capacity.  Times are counted in 15-minute
    slots.  ``margin_slots`` is padding added to the minimum charge time when
    sizing charging modes, reserving room for discharge service; an EV whose
    window cannot fit even the fast mode plus margin is denied entry.
    """

    n_evs: int = 50
    capacity_kwh: float = 64.0
    init_soc_mean: float = 15.0
    init_soc_std: float = 5.0
    target_soc: float = 80.0
    soc_min: float = 20.0
    eta_ch: float = 0.95
    eta_dch: float = 0.95
    margin_slots: int = 8
    n_max_switches: int = 6
    v2g_min_park_slots: int = 40          # 10 h rule
    arrival_mean_hour: float = 10.333     # workplace arrivals peak mid-morning
    arrival_std_hours: float = 2.0
    departure_mean_hour: float = 18.0     # home arrivals peak early evening
    departure_std_hours: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_evs < 0:
            raise ValueError("n_evs must be non-negative")
        if not (0 < self.eta_ch <= 1 and 0 < self.eta_dch <= 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        if not (self.soc_min <= self.target_soc <= 100):
            raise ValueError("need soc_min <= target_soc <= 100")


@dataclass
class EvState:
    """One vehicle's battery and scheduling state.

    ``o_ch``/``o_dch`` record the binary charge/discharge switch value for
    every slot the EV has been stepped, starting at its arrival; the
    implicit state before arrival is off.  ``switch_events`` counts all
    on/off transitions across both histories.
    """

    id: int
    capacity_kwh: float
    soc: float
    soc_min: float
    target_soc: float
    arrival_slot: int
    departure_slot: int
    mode: ChargingMode = ChargingMode.M0
    v2g_eligible: bool = False
    o_ch: list = field(default_factory=list)
    o_dch: list = field(default_factory=list)
    switch_events: int = 0

    def is_parked(self, t: int) -> bool:
        """Whether the EV occupies a charger at slot t; windows may wrap midnight."""
        if self.arrival_slot <= self.departure_slot:
            return self.arrival_slot <= t < self.departure_slot
        return t >= self.arrival_slot or t < self.departure_slot

    def parking_slots(self) -> int:
        return (self.departure_slot - self.arrival_slot) % SLOTS_PER_DAY

    def remaining_slots(self, t: int) -> int:
        """Slots left before scheduled departure."""
        return (self.departure_slot - t) % SLOTS_PER_DAY

    @property
    def charging_now(self) -> bool:
        return bool(self.o_ch) and self.o_ch[-1] == 1

    @property
    def discharging_now(self) -> bool:
        return bool(self.o_dch) and self.o_dch[-1] == 1


def min_charge_slots(soc: float, target: float, capacity_kwh: float,
                     eta_ch: float, power_kw: float, dt_hours: float) -> int:
    """Slots of continuous charging needed to lift soc to target."""
    deficit_kwh = max(0.0, (target - soc) / 100.0 * capacity_kwh)
    if deficit_kwh == 0.0:
        return 0
    per_slot_kwh = eta_ch * power_kw * dt_hours
    return math.ceil(deficit_kwh / per_slot_kwh - 1e-12)


def assign_mode(ev: EvState, cfg: FleetConfig, dt_hours: float = 0.25) -> ChargingMode:
    """Pick the slowest charging mode that still fits the parking window.

    The slow mode wins whenever the window covers its minimum charge time
    plus the margin; otherwise the fast mode is tried; failing both, the EV
    is denied entry (M0).
    """
    t_park = ev.parking_slots()
    for mode in (ChargingMode.M1, ChargingMode.M2):
        t_charge = min_charge_slots(ev.soc, ev.target_soc, ev.capacity_kwh,
                                    cfg.eta_ch, mode.power_kw, dt_hours)
        if t_park >= t_charge + cfg.margin_slots:
            return mode
    return ChargingMode.M0


def _hour_to_slot(hour: float) -> int:
    return int(np.clip(round(hour * 4), 0, SLOTS_PER_DAY - 1))


def sample_fleet(cfg: FleetConfig, dt_hours: float = 0.25) -> list[EvState]:
    """Draw the day's EV population from the commuter arrival patterns.

    Arrival and departure hours are normal draws discretized to slots and
    clamped to the day; pairs are redrawn until departure follows arrival.
    Initial SOC is normal, clamped to [1, target - 1] so no vehicle arrives
    empty or already full.  Deterministic for a fixed ``rng_seed``.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    fleet = []
    for i in range(cfg.n_evs):
        while True:
            arr = _hour_to_slot(rng.normal(cfg.arrival_mean_hour, cfg.arrival_std_hours))
            dep = _hour_to_slot(rng.normal(cfg.departure_mean_hour, cfg.departure_std_hours))
            if dep > arr:
                break
        soc = float(np.clip(rng.normal(cfg.init_soc_mean, cfg.init_soc_std),
                            1.0, cfg.target_soc - 1.0))
        ev = EvState(
            id=i,
            capacity_kwh=cfg.capacity_kwh,
            soc=soc,
            soc_min=cfg.soc_min,
            target_soc=cfg.target_soc,
            arrival_slot=arr,
            departure_slot=dep,
            v2g_eligible=(dep - arr) % SLOTS_PER_DAY > cfg.v2g_min_park_slots,
        )
        ev.mode = assign_mode(ev, cfg, dt_hours)
        fleet.append(ev)
    return fleet


def load_fleet_csv(path, cfg: FleetConfig, dt_hours: float = 0.25) -> list[EvState]:
    """Build a fleet from a CSV override with columns id,arrival_slot,departure_slot,init_soc."""
    fleet = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ev = EvState(
                id=int(row["id"]),
                capacity_kwh=cfg.capacity_kwh,
                soc=float(row["init_soc"]),
                soc_min=cfg.soc_min,
                target_soc=cfg.target_soc,
                arrival_slot=int(row["arrival_slot"]) % SLOTS_PER_DAY,
                departure_slot=int(row["departure_slot"]) % SLOTS_PER_DAY,
            )
            ev.v2g_eligible = ev.parking_slots() > cfg.v2g_min_park_slots
            ev.mode = assign_mode(ev, cfg, dt_hours)
            fleet.append(ev)
    return fleet


def soc_delta(ev: EvState, op: str, cfg: FleetConfig, dt_hours: float) -> float:
    """SOC change in percent for one slot of the given operation.

    Charging banks ``eta_ch * P * dt`` of energy; discharging drains
    ``P * dt / eta_dch`` from the battery to deliver P at the bus, so a
    charge/discharge round trip always loses energy for efficiencies < 1.
    """
    power = ev.mode.power_kw
    if op == CHARGE:
        return 100.0 * cfg.eta_ch * power * dt_hours / ev.capacity_kwh
    if op == DISCHARGE:
        return -100.0 * power * dt_hours / (cfg.eta_dch * ev.capacity_kwh)
    return 0.0


def step_soc(ev: EvState, op: str, cfg: FleetConfig, dt_hours: float = 0.25) -> EvState:
    """Apply one slot of operation to the EV in place.

    Updates the SOC, appends to the on/off histories, and accumulates switch
    events against the previous slot's state (off before arrival).  Callers
    must have filtered ops through the candidate rules; a step that would
    push SOC outside [0, 100] raises.
    """
    if op not in OPS:
        raise ValueError(f"unknown operation {op!r}")
    new_soc = ev.soc + soc_delta(ev, op, cfg, dt_hours)
    if not -1e-9 <= new_soc <= 100.0 + 1e-9:
        raise ValueError(
            f"EV {ev.id}: op {op} drives soc to {new_soc:.2f}%, outside [0, 100]")
    prev_ch = ev.o_ch[-1] if ev.o_ch else 0
    prev_dch = ev.o_dch[-1] if ev.o_dch else 0
    now_ch = 1 if op == CHARGE else 0
    now_dch = 1 if op == DISCHARGE else 0
    ev.switch_events += abs(now_ch - prev_ch) + abs(now_dch - prev_dch)
    ev.o_ch.append(now_ch)
    ev.o_dch.append(now_dch)
    ev.soc = min(max(new_soc, 0.0), 100.0)
    return ev


def count_transitions(history) -> int:
    """Number of 0/1 flips in a switch history, counting the leading turn-on."""
    events = 0
    prev = 0
    for bit in history:
        events += abs(bit - prev)
        prev = bit
    return events


# Switch-budget reservations.  Assigning an operation must leave room for
# the transitions it implies now plus the ones it commits to later: every
# started episode eventually turns off, and a discharge additionally commits
# to a recharge episode to get back to target.  Without the reservation the
# budget either strands an EV below target or forces an over-budget stop.


def charge_budget_ok(ev: EvState, n_max: int) -> bool:
    cost = (0 if ev.charging_now else 1) + (1 if ev.discharging_now else 0)
    cost += 1  # eventual charge-off
    return n_max - ev.switch_events >= cost


def discharge_budget_ok(ev: EvState, n_max: int) -> bool:
    cost = (0 if ev.discharging_now else 1) + (1 if ev.charging_now else 0)
    cost += 1 + 2  # eventual discharge-off, then recharge on/off
    return n_max - ev.switch_events >= cost


def classify_candidates(fleet, t: int, cfg: FleetConfig,
                        dt_hours: float = 0.25) -> tuple[list[EvState], list[EvState]]:
    """Split parked EVs into charge and discharge candidates for slot t.

    Charge candidates are admitted EVs below target with switch budget left.
    Discharge candidates must additionally be V2G-eligible (long parkers),
    above the SOC floor, and keep enough remaining time to charge back to
    target at their assigned mode.  An EV may appear in both lists; the
    optimizer picks one operation.  SOC bounds act on operations only:
    charging below the floor is always allowed, discharging at or below it
    never is.
    """
    charge_set: list[EvState] = []
    discharge_set: list[EvState] = []
    for ev in fleet:
        if ev.mode is ChargingMode.M0 or not ev.is_parked(t):
            continue
        if ev.soc < ev.target_soc and charge_budget_ok(ev, cfg.n_max_switches):
            charge_set.append(ev)
        if (ev.v2g_eligible
                and ev.soc > ev.soc_min
                and discharge_budget_ok(ev, cfg.n_max_switches)
                and ev.remaining_slots(t) > min_charge_slots(
                    ev.soc, ev.target_soc, ev.capacity_kwh,
                    cfg.eta_ch, ev.mode.power_kw, dt_hours)):
            discharge_set.append(ev)
    return charge_set, discharge_set
