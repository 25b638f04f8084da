"""Per-slot power balance bookkeeping.

Six flows connect the three sources (grid, PV, discharging EVs) to the two
sinks (local load, charging EVs).  Allocation follows a fixed merit order:
EV discharge first serves EV charging demand (vehicle-to-vehicle), then the
local load; PV then serves remaining EV demand, then remaining load; the
grid covers whatever is left.  PV beyond total demand is curtailed, never
exported on its own.

All powers are kW for one slot; multiply by the slot length in hours to get
energy.  Balance identities hold to 1e-9 kW:

    grid_load + pv_load + ev_load == load
    grid_ev + pv_ev + ev_ev == ev_charge_total
    ev_load + ev_ev == ev_discharge_total
    pv_load + pv_ev <= pv_avail
"""

from __future__ import annotations

from dataclasses import dataclass

BALANCE_TOL = 1e-9


def split_flows(load: float, pv_avail: float, ch: float, dch: float):
    """Allocate source powers to sinks under the merit order.

    Returns (grid_load, grid_ev, pv_load, pv_ev, ev_load, ev_ev).  Discharge
    beyond the total demand load + ch has no sink in this model and is
    trimmed; callers keep requested discharge at or below demand.
    """
    dch = min(dch, load + ch)
    ev_ev = min(dch, ch)
    ev_load = min(dch - ev_ev, load)
    pv_ev = min(pv_avail, ch - ev_ev)
    pv_load = min(pv_avail - pv_ev, load - ev_load)
    grid_ev = ch - ev_ev - pv_ev
    grid_load = load - ev_load - pv_load
    return grid_load, grid_ev, pv_load, pv_ev, ev_load, ev_ev


@dataclass(frozen=True)
class SlotDispatch:
    """Resolved power flows for one slot, all kW."""

    pw_grid_load: float
    pw_grid_ev: float
    pw_pv_load: float
    pw_pv_ev: float
    pw_ev_load: float
    pw_ev_ev: float
    pw_load: float
    pw_pv_avail: float
    ev_charge_total: float
    ev_discharge_total: float

    @property
    def pv_used(self) -> float:
        return self.pw_pv_load + self.pw_pv_ev

    @property
    def pv_curtailed(self) -> float:
        return self.pw_pv_avail - self.pv_used


def dispatch(load: float, pv_avail: float, ev_charge_total: float,
             ev_discharge_total: float) -> SlotDispatch:
    """Build the slot dispatch for the given demands and availabilities.

    Pure and idempotent.  Inputs must be non-negative; the grid acts as the
    slack source so any demand is always met.
    """
    if min(load, pv_avail, ev_charge_total, ev_discharge_total) < 0:
        raise ValueError("dispatch inputs must be non-negative")
    grid_load, grid_ev, pv_load, pv_ev, ev_load, ev_ev = split_flows(
        load, pv_avail, ev_charge_total, ev_discharge_total)
    return SlotDispatch(
        pw_grid_load=grid_load,
        pw_grid_ev=grid_ev,
        pw_pv_load=pv_load,
        pw_pv_ev=pv_ev,
        pw_ev_load=ev_load,
        pw_ev_ev=ev_ev,
        pw_load=load,
        pw_pv_avail=pv_avail,
        ev_charge_total=ev_charge_total,
        ev_discharge_total=ev_load + ev_ev,
    )


def grid_power(d: SlotDispatch) -> tuple[float, float, float]:
    """Grid exchange of a dispatch: (purchased kW, sold kW, net kW).

    Purchased power feeds load and EV charging; sold power is the PV and EV
    discharge share that serves the local load.  Net is purchased minus sold,
    negative when the station is a net exporter.
    """
    purchased = d.pw_grid_load + d.pw_grid_ev
    sold = d.pw_pv_load + d.pw_ev_load
    return purchased, sold, purchased - sold


def grid_cap_lhs(d: SlotDispatch) -> float:
    """Net station draw compared against the grid limit, kW."""
    return (d.pw_load + d.ev_charge_total
            - (d.pv_used + d.ev_discharge_total))


def check_grid_cap(d: SlotDispatch, pw_max: float) -> bool:
    """True iff total demand net of PV and EV discharge stays within pw_max."""
    return grid_cap_lhs(d) <= pw_max + BALANCE_TOL


def slot_cost(d: SlotDispatch, tariff, t: int, dt_hours: float = 0.25) -> float:
    """Operating cost of one slot, USD.  Negative values are net revenue.

    Grid-sourced EV charging is bought at the TOU rate; PV and EV discharge
    serving the local load earn the selling price.  Grid purchases for the
    local load itself are outside this cost and reported separately by the
    harness.
    """
    buy = tariff.purchase_price(t)
    sell = tariff.selling_price(t)
    grid_ev = d.ev_charge_total - d.pw_pv_ev - d.pw_ev_ev
    return (buy * grid_ev - sell * (d.pw_pv_load + d.pw_ev_load)) * dt_hours
