"""Per-slot decision engine: discharge caps and GA operation assignment.

Each slot the engine first bounds total fleet discharge power.  The
conventional rule compares the instantaneous load-minus-PV difference with a
flag level; the lookahead rule compares the cumulative difference over the
next K forecast steps with K+1 times the flag, so a short spike no longer
unlocks the high cap and an approaching ramp unlocks it early.

Operations are then assigned by a genetic algorithm over the candidate EVs.
A genome holds one gene per candidate restricted to its legal operations;
infeasible genomes are repaired rather than penalized.  Fitness is a
weighted sum of five normalized objectives: slot operating cost, grid draw
minus PV use, remaining-time priority, SOC-gap priority, and (negated)
charger utilization.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from chargesim import powerflow
from chargesim.fleet import CHARGE, DISCHARGE, IDLE, EvState

log = logging.getLogger(__name__)

SCHEME_CHARGE_ONLY = "charge_only"
SCHEME_CONVENTIONAL = "conventional"
SCHEME_PROPOSED = "proposed"
SCHEMES = (SCHEME_CHARGE_ONLY, SCHEME_CONVENTIONAL, SCHEME_PROPOSED)

_IDLE, _CH, _DCH = 0, 1, 2
_OP_NAMES = {_IDLE: IDLE, _CH: CHARGE, _DCH: DISCHARGE}


@dataclass
class GaParams:
    """Genetic-algorithm knobs."""

    population: int = 500
    generations: int = 100
    crossover: float = 0.8
    mutation: float = 0.01
    tournament: int = 3
    elitism: int = 1

    @classmethod
    def desk(cls, **overrides) -> "GaParams":
        base = dict(population=100, generations=40)
        base.update(overrides)
        return cls(**base)


@dataclass
class SchedulerConfig:
    """Cap-rule levels, grid limit, lookahead depth and GA setup.

    ``weights`` scales the five objective components after normalization;
    the first (cost) weight must stay positive.
    """

    pw_flag: float = 86.0
    dch_max_hi: float = 12.0
    dch_max_lo: float = 2.0
    pw_max: float = 157.0
    lookahead_k: int = 7
    ga: GaParams = field(default_factory=GaParams)
    weights: tuple = (1.0, 0.2, 0.2, 0.2, 0.2)
    scheme: str = SCHEME_PROPOSED

    def __post_init__(self):
        if not self.dch_max_hi > self.dch_max_lo >= 0:
            raise ValueError("need dch_max_hi > dch_max_lo >= 0")
        if self.pw_flag <= 0:
            raise ValueError("pw_flag must be positive")
        if len(self.weights) != 5 or min(self.weights) < 0 or self.weights[0] <= 0:
            raise ValueError("weights must be 5 non-negative values with weights[0] > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


def discharge_cap_conventional(load_kw: float, pv_kw: float,
                               cfg: SchedulerConfig) -> float:
    """High cap iff the instantaneous load-minus-PV difference reaches the flag."""
    if load_kw - pv_kw >= cfg.pw_flag:
        return cfg.dch_max_hi
    return cfg.dch_max_lo


def discharge_cap_proposed(load_kw: float, pv_kw: float, forecasts,
                           cfg: SchedulerConfig) -> float:
    """High cap iff the cumulative K+1-step load-minus-PV sum reaches (K+1) x flag.

    The k=0 term uses the measured values; terms k>=1 come from ``forecasts``,
    a sequence of (load, pv) pairs for the next slots.  With missing or short
    forecasts the rule falls back to the conventional comparison (logged).
    """
    k = cfg.lookahead_k
    if k > 0 and (forecasts is None or len(forecasts) < k):
        log.warning("lookahead cap: %d forecast steps unavailable, using conventional rule",
                    k if forecasts is None else k - len(forecasts))
        return discharge_cap_conventional(load_kw, pv_kw, cfg)
    total = load_kw - pv_kw
    for step_load, step_pv in list(forecasts)[:k] if k > 0 else []:
        total += step_load - step_pv
    if total >= (k + 1) * cfg.pw_flag:
        return cfg.dch_max_hi
    return cfg.dch_max_lo


@dataclass
class ScheduleDecision:
    """Chosen operations for one slot plus the resulting flows and objective values."""

    ops: dict
    dispatch: powerflow.SlotDispatch
    fitness: float
    components: tuple


class SlotProblem:
    """Precomputed candidate arrays and context for one slot's optimization.

    Candidates are the union of the charge and discharge sets ordered by EV
    id; gene i may take idle, charge if the EV is charge-eligible, and
    discharge if discharge-eligible.
    """

    def __init__(self, charge_set, discharge_set, cap_kw, load_kw, pv_kw,
                 tariff, t, dt_hours, pw_max, weights, slots_per_day=96):
        by_id: dict[int, EvState] = {}
        for ev in itertools.chain(charge_set, discharge_set):
            by_id[ev.id] = ev
        charge_ids = {ev.id for ev in charge_set}
        discharge_ids = {ev.id for ev in discharge_set}
        self.evs = [by_id[i] for i in sorted(by_id)]
        self.ids = [ev.id for ev in self.evs]
        self.power = np.array([ev.mode.power_kw for ev in self.evs])
        self.can_ch = np.array([ev.id in charge_ids for ev in self.evs], dtype=bool)
        self.can_dch = np.array([ev.id in discharge_ids for ev in self.evs], dtype=bool)
        self.t_re = np.array([float(ev.remaining_slots(t)) for ev in self.evs])
        self.gap_sq = np.array([(ev.target_soc - ev.soc) ** 2 for ev in self.evs])
        self.n = len(self.evs)

        self.cap = cap_kw
        self.load = load_kw
        self.pv = pv_kw
        self.buy = tariff.purchase_price(t)
        self.sell = tariff.selling_price(t)
        self.dt = dt_hours
        self.pw_max = pw_max
        self.weights = np.asarray(weights, dtype=float)

        # Per-slot normalization scales: cost by the largest cost magnitude
        # reachable this slot, powers by the grid limit, times by the day
        # length, SOC gaps by the squared target.
        max_buy = self.buy * float(self.power[self.can_ch].sum()) * dt_hours
        max_sell = self.sell * load_kw * dt_hours
        self.cost_scale = max(max_buy, max_sell, 1e-9)
        self.time_scale = float(slots_per_day)
        target = max((ev.target_soc for ev in self.evs), default=80.0)
        self.soc_scale = max(target * target, 1e-9)
        self.power_scale = max(pw_max, 1e-9)

    def legal_alleles(self, i: int) -> list[int]:
        ops = [_IDLE]
        if self.can_ch[i]:
            ops.append(_CH)
        if self.can_dch[i]:
            ops.append(_DCH)
        return ops

    def totals(self, genomes: np.ndarray):
        """Requested charge/discharge power sums, kW, per genome row."""
        ch = (genomes == _CH) @ self.power
        dch = (genomes == _DCH) @ self.power
        return ch, dch

    def components(self, genomes: np.ndarray):
        """Raw objective component values, shape (P, 5), for each genome row."""
        ch_mask = genomes == _CH
        dch_mask = genomes == _DCH
        ch = ch_mask @ self.power
        dch = dch_mask @ self.power
        dch_eff = np.minimum(dch, self.load + ch)
        ev_ev = np.minimum(dch_eff, ch)
        ev_load = np.minimum(dch_eff - ev_ev, self.load)
        pv_ev = np.minimum(self.pv, ch - ev_ev)
        pv_load = np.minimum(self.pv - pv_ev, self.load - ev_load)
        grid_ev = ch - ev_ev - pv_ev
        grid_load = self.load - ev_load - pv_load

        cost = (self.buy * grid_ev - self.sell * (pv_load + ev_load)) * self.dt
        grid_minus_pv = (grid_load + grid_ev) - (pv_load + pv_ev)
        time_priority = ch_mask @ self.t_re - dch_mask @ self.t_re
        soc_priority = dch_mask @ self.gap_sq - ch_mask @ self.gap_sq
        utilization = -(ch + dch)
        return np.stack([cost, grid_minus_pv, time_priority, soc_priority,
                         utilization], axis=-1)

    def fitness(self, genomes: np.ndarray) -> np.ndarray:
        comps = self.components(genomes)
        scales = np.array([self.cost_scale, self.power_scale, self.time_scale,
                           self.soc_scale, self.power_scale])
        return (comps / scales) @ self.weights

    def grid_cap_lhs(self, genomes: np.ndarray) -> np.ndarray:
        """Net grid draw per genome row: load + charging - PV used - discharge."""
        ch, dch = self.totals(genomes)
        dch_eff = np.minimum(dch, self.load + ch)
        ev_ev = np.minimum(dch_eff, ch)
        ev_load = np.minimum(dch_eff - ev_ev, self.load)
        pv_ev = np.minimum(self.pv, ch - ev_ev)
        pv_load = np.minimum(self.pv - pv_ev, self.load - ev_load)
        return self.load + ch - (pv_ev + pv_load) - dch

    def repair(self, genomes: np.ndarray) -> np.ndarray:
        """Flip genes to idle until the cap and grid limit hold.

        Cap repairs drop discharges largest-remaining-time first; grid-limit
        repairs drop charges smallest-SOC-gap first.  Genomes already
        feasible are untouched.
        """
        tol = powerflow.BALANCE_TOL
        _, dch = self.totals(genomes)
        for row in np.flatnonzero(dch > self.cap + tol):
            genome = genomes[row]
            order = sorted(np.flatnonzero(genome == _DCH),
                           key=lambda i: (-self.t_re[i], self.ids[i]))
            total = dch[row]
            for i in order:
                if total <= self.cap + tol:
                    break
                genome[i] = _IDLE
                total -= self.power[i]

        lhs = self.grid_cap_lhs(genomes)
        for row in np.flatnonzero(lhs > self.pw_max + tol):
            genome = genomes[row]
            order = sorted(np.flatnonzero(genome == _CH),
                           key=lambda i: (self.gap_sq[i], self.ids[i]))
            for i in order:
                if self.grid_cap_lhs(genome[None, :])[0] <= self.pw_max + tol:
                    break
                genome[i] = _IDLE
        return genomes

    def decision(self, genome: np.ndarray) -> ScheduleDecision:
        ops = {self.ids[i]: _OP_NAMES[int(genome[i])] for i in range(self.n)}
        ch, dch = self.totals(genome[None, :])
        d = powerflow.dispatch(self.load, self.pv, float(ch[0]), float(dch[0]))
        comps = self.components(genome[None, :])[0]
        fit = float(self.fitness(genome[None, :])[0])
        return ScheduleDecision(ops=ops, dispatch=d, fitness=fit,
                                components=tuple(float(c) for c in comps))


def objective_components(ops, charge_set, discharge_set, load_kw, pv_kw,
                         tariff, t, dt_hours=0.25) -> tuple:
    """Raw objective values for an explicit assignment.

    ``ops`` maps EV id to an operation string; omitted candidates idle.
    Returns (cost USD, grid-minus-PV kW, time priority, SOC-gap priority,
    negative utilization kW) exactly as defined, before any normalization.
    """
    problem = SlotProblem(charge_set, discharge_set, cap_kw=float("inf"),
                          load_kw=load_kw, pv_kw=pv_kw, tariff=tariff, t=t,
                          dt_hours=dt_hours, pw_max=float("inf"),
                          weights=(1.0, 0.0, 0.0, 0.0, 0.0))
    genome = _genome_from_ops(problem, ops)
    return tuple(float(c) for c in problem.components(genome[None, :])[0])


def _genome_from_ops(problem: SlotProblem, ops) -> np.ndarray:
    genome = np.zeros(problem.n, dtype=np.int8)
    code = {IDLE: _IDLE, CHARGE: _CH, DISCHARGE: _DCH}
    for i, ev_id in enumerate(problem.ids):
        op = ops.get(ev_id, IDLE)
        genome[i] = code[op]
        if genome[i] == _CH and not problem.can_ch[i]:
            raise ValueError(f"EV {ev_id} is not a charge candidate")
        if genome[i] == _DCH and not problem.can_dch[i]:
            raise ValueError(f"EV {ev_id} is not a discharge candidate")
    return genome


def _lex_key(genome: np.ndarray) -> tuple:
    return tuple(int(g) for g in genome)


def optimize_slot(charge_set, discharge_set, cap_kw, load_kw, pv_kw, tariff,
                  t, cfg: SchedulerConfig, rng: np.random.Generator,
                  dt_hours: float = 0.25, slots_per_day: int = 96) -> ScheduleDecision:
    """Assign charge/discharge/idle to every candidate EV for slot t.

    Runs the configured GA; deterministic for a given rng state.  Ties in
    fitness break toward the genome that idles lower-id EVs first.  Empty
    candidate sets yield the all-idle decision.
    """
    problem = SlotProblem(charge_set, discharge_set, cap_kw, load_kw, pv_kw,
                          tariff, t, dt_hours, cfg.pw_max, cfg.weights,
                          slots_per_day)
    if problem.n == 0:
        return problem.decision(np.zeros(0, dtype=np.int8))

    ga = cfg.ga
    alleles = [problem.legal_alleles(i) for i in range(problem.n)]
    pop = np.zeros((ga.population, problem.n), dtype=np.int8)
    for i, ops in enumerate(alleles):
        pop[:, i] = rng.choice(ops, size=ga.population)
    pop[0, :] = _IDLE                                   # feasible baseline
    pop[1, :] = np.where(problem.can_ch, _CH, _IDLE)    # greedy charge seed

    best_genome = None
    best_fit = np.inf
    best_key = None

    for gen in range(ga.generations + 1):
        problem.repair(pop)
        fits = problem.fitness(pop)
        gen_best = int(np.argmin(fits))
        for row in np.flatnonzero(fits == fits[gen_best]):
            key = _lex_key(pop[row])
            if fits[row] < best_fit or (fits[row] == best_fit and key < best_key):
                best_fit = float(fits[row])
                best_genome = pop[row].copy()
                best_key = key
        if gen == ga.generations:
            break

        # tournament selection
        draws = rng.integers(0, ga.population, size=(ga.population, ga.tournament))
        winners = draws[np.arange(ga.population), np.argmin(fits[draws], axis=1)]
        children = pop[winners].copy()

        # single-point crossover on consecutive pairs
        if problem.n > 1:
            for a in range(0, ga.population - 1, 2):
                if rng.random() < ga.crossover:
                    cut = int(rng.integers(1, problem.n))
                    tail = children[a, cut:].copy()
                    children[a, cut:] = children[a + 1, cut:]
                    children[a + 1, cut:] = tail

        # mutation resamples a gene among its legal alleles
        mutate = rng.random(children.shape) < ga.mutation
        for row, col in zip(*np.nonzero(mutate)):
            children[row, col] = rng.choice(alleles[col])

        # elitism re-injects the best-so-far genome
        for e in range(min(ga.elitism, ga.population)):
            children[e] = best_genome
        pop = children

    return problem.decision(best_genome)


def brute_force_slot(charge_set, discharge_set, cap_kw, load_kw, pv_kw,
                     tariff, t, cfg: SchedulerConfig, dt_hours: float = 0.25,
                     slots_per_day: int = 96,
                     max_assignments: int = 200_000) -> ScheduleDecision:
    """Exhaustive reference optimizer over every feasible assignment.

    Intended as an oracle for small candidate sets; raises if the assignment
    space exceeds ``max_assignments``.
    """
    problem = SlotProblem(charge_set, discharge_set, cap_kw, load_kw, pv_kw,
                          tariff, t, dt_hours, cfg.pw_max, cfg.weights,
                          slots_per_day)
    alleles = [problem.legal_alleles(i) for i in range(problem.n)]
    space = int(np.prod([len(a) for a in alleles])) if alleles else 1
    if space > max_assignments:
        raise ValueError(f"assignment space {space} too large for brute force")

    tol = powerflow.BALANCE_TOL
    best_genome = None
    best_fit = np.inf
    best_key = None
    for combo in itertools.product(*alleles) if alleles else [()]:
        genome = np.array(combo, dtype=np.int8)
        _, dch = problem.totals(genome[None, :])
        if dch[0] > cap_kw + tol:
            continue
        if problem.grid_cap_lhs(genome[None, :])[0] > cfg.pw_max + tol:
            continue
        fit = float(problem.fitness(genome[None, :])[0])
        key = _lex_key(genome)
        if fit < best_fit or (fit == best_fit and key < best_key):
            best_fit = fit
            best_genome = genome
            best_key = key
    if best_genome is None:
        best_genome = np.zeros(problem.n, dtype=np.int8)
    return problem.decision(best_genome)
