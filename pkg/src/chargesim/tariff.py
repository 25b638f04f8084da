"""Electricity pricing for the charging station.

Two prices exist per 15-minute slot:

* purchase price: the time-of-use (TOU) band rate of the demand-response
  program, USD/kWh, paid for any power bought from the grid;
* selling price: SMP plus weighted REC, USD/kWh, earned for PV or EV
  discharge power that serves the local load.

Band tables are validated once at load time; price queries never fail.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

SLOTS_PER_DAY = 96
SLOT_MINUTES = 24 * 60 // SLOTS_PER_DAY

# Default demand-response bands, USD/kWh.  The overnight band wraps midnight.
DEFAULT_TOU_BANDS = (
    ("23:00", "09:00", 0.055),
    ("09:00", "10:00", 0.108),
    ("10:00", "12:00", 0.179),
    ("12:00", "13:00", 0.108),
    ("13:00", "17:00", 0.179),
    ("17:00", "23:00", 0.108),
)

DEFAULT_SMP = 0.10        # USD/kWh, flat stand-in for a monthly-average series
DEFAULT_REC_PRICE = 0.05  # USD/kWh per certificate unit
DEFAULT_REC_WEIGHT = 1.2  # small rooftop installations earn a 1.2x REC weight


def hhmm_to_slot(text: str) -> int:
    """Convert "HH:MM" to a slot index. The time must fall on a slot boundary."""
    hh, mm = text.strip().split(":")
    minutes = int(hh) * 60 + int(mm)
    if minutes % SLOT_MINUTES != 0:
        raise ValueError(f"time {text!r} is not on a {SLOT_MINUTES}-minute boundary")
    if not 0 <= minutes <= 24 * 60:
        raise ValueError(f"time {text!r} out of range")
    return (minutes // SLOT_MINUTES) % SLOTS_PER_DAY


def parse_band(spec: str) -> tuple[int, int, float]:
    """Parse one "HH:MM-HH:MM=price" band spec into (start_slot, end_slot, price)."""
    try:
        span, price_text = spec.split("=")
        start_text, end_text = span.split("-")
    except ValueError as exc:
        raise ValueError(f"malformed band spec {spec!r}") from exc
    price = float(price_text)
    return hhmm_to_slot(start_text), hhmm_to_slot(end_text), price


def _expand_bands(bands) -> np.ndarray:
    """Expand band tuples into a per-slot price vector, validating the partition.

    Bands are half-open [start, end) in slots and may wrap midnight
    (start >= end).  Every slot of the day must be covered exactly once.
    """
    prices = np.full(SLOTS_PER_DAY, np.nan)
    for start, end, price in bands:
        if price < 0:
            raise ValueError(f"negative band price {price}")
        if start == end:
            raise ValueError(f"band {start}-{end} is empty")
        span = range(start, end) if start < end else [*range(start, SLOTS_PER_DAY), *range(0, end)]
        for slot in span:
            if not np.isnan(prices[slot]):
                raise ValueError(f"band overlap at slot {slot}")
            prices[slot] = price
    gaps = np.flatnonzero(np.isnan(prices))
    if gaps.size:
        raise ValueError(f"band table leaves slot {gaps[0]} unpriced")
    return prices


@dataclass
class TariffSchedule:
    """Per-slot purchase and selling prices.

    Immutable after construction; safe to share across concurrent fitness
    evaluations.

    Attributes:
        tou_bands: list of (start_slot, end_slot, USD/kWh), half-open, wrapping
            allowed for the overnight band.
        smp: per-slot system marginal price, USD/kWh, length SLOTS_PER_DAY.
        rec_price: certificate unit price, USD/kWh.
        rec_weight: dimensionless certificate weight, > 0.
    """

    tou_bands: list = field(default_factory=lambda: [parse_band(f"{a}-{b}={p}") for a, b, p in DEFAULT_TOU_BANDS])
    smp: np.ndarray = None
    rec_price: float = DEFAULT_REC_PRICE
    rec_weight: float = DEFAULT_REC_WEIGHT

    def __post_init__(self):
        if self.smp is None:
            self.smp = np.full(SLOTS_PER_DAY, DEFAULT_SMP)
        else:
            self.smp = np.asarray(self.smp, dtype=float)
            if self.smp.ndim == 0:
                self.smp = np.full(SLOTS_PER_DAY, float(self.smp))
        if self.smp.shape != (SLOTS_PER_DAY,):
            raise ValueError(f"smp series must have {SLOTS_PER_DAY} samples, got {self.smp.shape}")
        if np.any(self.smp < 0) or not np.all(np.isfinite(self.smp)):
            raise ValueError("smp prices must be finite and non-negative")
        if self.rec_price < 0:
            raise ValueError("rec_price must be non-negative")
        if self.rec_weight <= 0:
            raise ValueError("rec_weight must be positive")
        self._slot_prices = _expand_bands(self.tou_bands)

    def purchase_price(self, t: int) -> float:
        """TOU purchase price, USD/kWh, at slot t (reduced mod 96)."""
        return float(self._slot_prices[t % SLOTS_PER_DAY])

    def selling_price(self, t: int) -> float:
        """Selling price SMP(t) + weight * REC, USD/kWh, at slot t."""
        return float(self.smp[t % SLOTS_PER_DAY] + self.rec_weight * self.rec_price)


def load_smp_csv(path) -> np.ndarray:
    """Read an SMP series from a CSV with columns slot,smp_usd_per_kwh."""
    series = np.full(SLOTS_PER_DAY, np.nan)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            series[int(row["slot"]) % SLOTS_PER_DAY] = float(row["smp_usd_per_kwh"])
    missing = np.flatnonzero(np.isnan(series))
    if missing.size:
        raise ValueError(f"SMP CSV {path} missing slot {missing[0]}")
    return series
