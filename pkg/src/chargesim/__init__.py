"""Simulation and scheduling engine for a PV-backed multi-EV charging station.

The package models one day of station operation in 96 slots of 15 minutes:
a time-of-use tariff prices grid purchases, PV output and vehicle discharge
are sold at SMP plus weighted REC, and a per-slot genetic algorithm assigns
charge/discharge/idle operations to parked EVs under SOC, switching, cap and
grid-limit constraints.  Three scheduling schemes are supported: charge-only,
a conventional load-minus-PV discharge cap, and a forecast-lookahead cap
driven by a recurrent load/PV forecaster.
"""

from chargesim.tariff import TariffSchedule
from chargesim.fleet import ChargingMode, EvState, FleetConfig, sample_fleet
from chargesim.powerflow import SlotDispatch, dispatch, grid_power, slot_cost
from chargesim.scheduler import (
    SchedulerConfig,
    GaParams,
    ScheduleDecision,
    discharge_cap_conventional,
    discharge_cap_proposed,
    optimize_slot,
)
from chargesim.harness import Scenario, DayResult, run_day, synth_profiles

__version__ = "0.1.0"

__all__ = [
    "TariffSchedule",
    "ChargingMode",
    "EvState",
    "FleetConfig",
    "sample_fleet",
    "SlotDispatch",
    "dispatch",
    "grid_power",
    "slot_cost",
    "SchedulerConfig",
    "GaParams",
    "ScheduleDecision",
    "discharge_cap_conventional",
    "discharge_cap_proposed",
    "optimize_slot",
    "Scenario",
    "DayResult",
    "run_day",
    "synth_profiles",
]
