"""Exact simulation of the stochastic patch SIS model (direct-method SSA).

The jump process has four families of channels:

* infection in patch j at rate ``lam_j * S_j * I_j / (S_j + I_j)``
* recovery in patch j at rate ``gamma_j * I_j``
* a susceptible moving j -> k at rate ``nu_s * a_jk * S_j``
* an infectious moving j -> k at rate ``nu_i * a_jk * I_j``

The inner loop is compiled with numba. Rates are updated only for the
patches an event touches; the running total is recomputed from scratch every
``REFRESH_EVERY`` events so floating point drift cannot accumulate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numba
import numpy as np

from .errors import Absorbed, DimensionMismatch, ValidationError
from .model import ContinuousState, DiscreteState, ValidatedModel
from .ode import time_grid

REFRESH_EVERY = 1 << 16
_CHUNK = 1 << 16

INFECTION, RECOVERY, MIGRATE_S, MIGRATE_I = 0, 1, 2, 3
_KIND_NAMES = ("Infection", "Recovery", "MigrateS", "MigrateI")

# kernel return codes
_REACHED_STOP, _HIT_LIMIT, _ABSORBED = 0, 1, 2
_INT_MAX = np.iinfo(np.int64).max


@dataclass(frozen=True)
class EventChannel:
    kind: str
    j: int
    k: int | None = None

    def __str__(self):
        if self.k is None:
            return f"{self.kind}({self.j})"
        return f"{self.kind}({self.j},{self.k})"


@dataclass(frozen=True)
class EveryEvent:
    pass


@dataclass(frozen=True)
class Grid:
    dt: float

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"grid spacing must be > 0, got {self.dt!r}")


@dataclass(frozen=True)
class FinalOnly:
    pass


Recording = Union[EveryEvent, Grid, FinalOnly]


def parse_recording(text: str) -> Recording:
    """Parse ``every``, ``final`` or ``grid:<dt>``."""
    text = text.strip().lower()
    if text == "every":
        return EveryEvent()
    if text == "final":
        return FinalOnly()
    if text.startswith("grid:"):
        try:
            return Grid(float(text[5:]))
        except ValueError:
            pass
    raise ValidationError(f"recording must be every, final or grid:<dt>, got {text!r}")


def recording_to_str(rec: Recording) -> str:
    if isinstance(rec, Grid):
        return f"grid:{rec.dt!r}"
    return "every" if isinstance(rec, EveryEvent) else "final"


@dataclass(frozen=True)
class SimConfig:
    population_n: int
    t_max: float
    seed: int = 0
    recording: Recording = field(default_factory=EveryEvent)

    def __post_init__(self):
        if int(self.population_n) != self.population_n or self.population_n < 1:
            raise ValidationError(f"population_n must be a positive integer, got {self.population_n!r}")
        # t_max == 0 is allowed and yields the initial state only
        if not (self.t_max >= 0 and math.isfinite(self.t_max)):
            raise ValidationError(f"t_max must be finite and >= 0, got {self.t_max!r}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValidationError(f"seed must fit in an unsigned 64-bit integer, got {self.seed!r}")


@dataclass(frozen=True)
class DiscreteTrajectory:
    """Recorded path of the jump process.

    ``counts`` has shape (n_records, 2 * ell): susceptible counts of every
    patch followed by infectious counts.
    """

    times: np.ndarray
    counts: np.ndarray
    event_count: int
    population_n: int
    t_max: float
    absorbed: bool = False
    absorbed_at: float | None = None
    seed: int | None = None
    recording: str = "every"

    @property
    def ell(self) -> int:
        return self.counts.shape[1] // 2

    @property
    def states(self) -> list[DiscreteState]:
        ell = self.ell
        return [DiscreteState(row[:ell], row[ell:]) for row in self.counts]

    def __len__(self):
        return self.times.shape[0]


@dataclass(frozen=True)
class ScaledTrajectory:
    """Counts divided by the population size; piecewise constant in time."""

    times: np.ndarray
    values: np.ndarray
    t_max: float

    @property
    def ell(self) -> int:
        return self.values.shape[1] // 2

    @property
    def states(self) -> list[ContinuousState]:
        return [ContinuousState.from_vector(v) for v in self.values]


def make_rng(seed: int, *stream) -> np.random.Generator:
    """PCG64 generator for ``seed``; ``stream`` indices give independent substreams."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


# -- channel table ----------------------------------------------------------

@dataclass(frozen=True)
class ChannelTable:
    kind: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    coef: np.ndarray
    patch_ptr: np.ndarray
    patch_ch: np.ndarray
    ell: int

    def __len__(self):
        return self.kind.shape[0]

    def channel(self, c: int) -> EventChannel:
        kind = int(self.kind[c])
        k = int(self.dst[c]) if kind >= MIGRATE_S else None
        return EventChannel(_KIND_NAMES[kind], int(self.src[c]), k)


def channel_table(model: ValidatedModel) -> ChannelTable:
    """Enumerate the jump channels; migrations with zero rate constant are skipped."""
    ell = model.ell
    a = model.adjacency
    kind, src, dst, coef = [], [], [], []
    for j in range(ell):
        kind.append(INFECTION); src.append(j); dst.append(j); coef.append(model.patches[j].lam)
    for j in range(ell):
        kind.append(RECOVERY); src.append(j); dst.append(j); coef.append(model.patches[j].gamma)
    for family, nu in ((MIGRATE_S, model.nu_s), (MIGRATE_I, model.nu_i)):
        for j in range(ell):
            for k in range(ell):
                if j != k and a[j, k] > 0 and nu * a[j, k] > 0:
                    kind.append(family); src.append(j); dst.append(k); coef.append(nu * a[j, k])
    kind = np.array(kind, dtype=np.int64)
    src = np.array(src, dtype=np.int64)
    order = np.argsort(src, kind="stable")
    counts = np.bincount(src, minlength=ell)
    patch_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return ChannelTable(
        kind=kind,
        src=src,
        dst=np.array(dst, dtype=np.int64),
        coef=np.array(coef, dtype=float),
        patch_ptr=patch_ptr,
        patch_ch=order.astype(np.int64),
        ell=ell,
    )


# -- compiled kernel --------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _rate(c, x, ell, kind, src, coef):
    j = src[c]
    kd = kind[c]
    if kd == 0:
        s = float(x[j])
        i = float(x[ell + j])
        n = s + i
        if n == 0.0:
            return 0.0
        return coef[c] * s * i / n
    if kd == 1 or kd == 3:
        return coef[c] * float(x[ell + j])
    return coef[c] * float(x[j])


@numba.njit(cache=True, nogil=True)
def _refresh(x, rates, clock, counters, ell, kind, src, coef):
    total = 0.0
    active = 0
    for c in range(rates.shape[0]):
        r = _rate(c, x, ell, kind, src, coef)
        rates[c] = r
        total += r
        if r > 0.0:
            active += 1
    clock[2] = total
    counters[1] = 0
    counters[2] = active


@numba.njit(cache=True, nogil=True)
def _update_patch(p, x, rates, clock, counters, ell, kind, src, coef, patch_ptr, patch_ch):
    for q in range(patch_ptr[p], patch_ptr[p + 1]):
        c = patch_ch[q]
        old = rates[c]
        new = _rate(c, x, ell, kind, src, coef)
        rates[c] = new
        clock[2] += new - old
        if old > 0.0 and new == 0.0:
            counters[2] -= 1
        elif old == 0.0 and new > 0.0:
            counters[2] += 1


@numba.njit(cache=True, nogil=True)
def _run_to(x, rates, clock, counters, ell, kind, src, dst, coef, patch_ptr, patch_ch,
            rng, t_stop, max_events, out_t, out_x, out_c):
    """Fire events with time <= t_stop, at most ``max_events`` of them.

    clock = [t, pending event time (nan if none), total rate]
    counters = [events fired, events since refresh, active channels]
    Events are written to out_* when those buffers are non-empty.
    """
    record = out_t.shape[0] > 0
    fired = 0
    nch = rates.shape[0]
    while True:
        if fired >= max_events:
            return _HIT_LIMIT, fired
        if math.isnan(clock[1]):
            if counters[2] == 0:
                clock[2] = 0.0
                return _ABSORBED, fired
            clock[1] = clock[0] + rng.exponential(1.0 / clock[2])
        if clock[1] > t_stop:
            return _REACHED_STOP, fired
        clock[0] = clock[1]
        clock[1] = np.nan

        u = rng.random() * clock[2]
        acc = 0.0
        chosen = -1
        last_pos = -1
        for c in range(nch):
            r = rates[c]
            if r > 0.0:
                last_pos = c
                acc += r
                if u < acc:
                    chosen = c
                    break
        if chosen < 0:
            # u landed past the exact sum because of drift in the running total
            chosen = last_pos

        j = src[chosen]
        k = dst[chosen]
        kd = kind[chosen]
        if kd == 0:
            x[j] -= 1
            x[ell + j] += 1
        elif kd == 1:
            x[ell + j] -= 1
            x[j] += 1
        elif kd == 2:
            x[j] -= 1
            x[k] += 1
        else:
            x[ell + j] -= 1
            x[ell + k] += 1

        counters[0] += 1
        counters[1] += 1
        if counters[1] >= 65536:
            _refresh(x, rates, clock, counters, ell, kind, src, coef)
        else:
            _update_patch(j, x, rates, clock, counters, ell, kind, src, coef, patch_ptr, patch_ch)
            if k != j:
                _update_patch(k, x, rates, clock, counters, ell, kind, src, coef, patch_ptr, patch_ch)

        if record:
            out_t[fired] = clock[0]
            out_c[fired] = chosen
            for q in range(x.shape[0]):
                out_x[fired, q] = x[q]
        fired += 1


@numba.njit(cache=True, nogil=True)
def _run_grid(x, rates, clock, counters, ell, kind, src, dst, coef, patch_ptr, patch_ch,
              rng, grid, out_x):
    """Record the state at every grid time (last-event holding).

    Returns the index of the first grid point at or after absorption, or
    ``grid.size`` if the process never absorbed.
    """
    empty_t = np.empty(0)
    empty_x = np.empty((0, 0), dtype=np.int64)
    empty_c = np.empty(0, dtype=np.int64)
    absorbed_at = grid.shape[0]
    for g in range(grid.shape[0]):
        if absorbed_at == grid.shape[0]:
            status, _ = _run_to(x, rates, clock, counters, ell, kind, src, dst, coef,
                                patch_ptr, patch_ch, rng, grid[g], _INT_MAX,
                                empty_t, empty_x, empty_c)
            if status == 2:
                absorbed_at = g
        for q in range(x.shape[0]):
            out_x[g, q] = x[q]
    return absorbed_at


class _Engine:
    """Mutable simulation state bound to one model and one RNG."""

    def __init__(self, model: ValidatedModel, state: DiscreteState, rng: np.random.Generator):
        if state.s.shape[0] != model.ell:
            raise DimensionMismatch(f"state has {state.s.shape[0]} patches, model has {model.ell}")
        self.table = channel_table(model)
        self.ell = model.ell
        self.x = state.as_vector().astype(np.int64).copy()
        if np.any(self.x < 0):
            raise ValidationError("counts must be nonnegative")
        self.rates = np.zeros(len(self.table))
        self.clock = np.array([0.0, np.nan, 0.0])
        self.counters = np.zeros(3, dtype=np.int64)
        self.rng = rng
        t = self.table
        self._args = (t.kind, t.src, t.dst, t.coef, t.patch_ptr, t.patch_ch)
        _refresh(self.x, self.rates, self.clock, self.counters, self.ell, t.kind, t.src, t.coef)

    @property
    def t(self) -> float:
        return float(self.clock[0])

    @property
    def events(self) -> int:
        return int(self.counters[0])

    def run_to(self, t_stop, max_events, out_t=None, out_x=None, out_c=None):
        if out_t is None:
            out_t = np.empty(0)
            out_x = np.empty((0, 0), dtype=np.int64)
            out_c = np.empty(0, dtype=np.int64)
        return _run_to(self.x, self.rates, self.clock, self.counters, self.ell, *self._args,
                       self.rng, float(t_stop), int(max_events), out_t, out_x, out_c)

    def run_grid(self, grid):
        out = np.empty((grid.shape[0], self.x.shape[0]), dtype=np.int64)
        absorbed_at = _run_grid(self.x, self.rates, self.clock, self.counters, self.ell,
                                *self._args, self.rng, grid, out)
        return out, int(absorbed_at)


# -- public operations ------------------------------------------------------

def initial_counts(x: ContinuousState, n: int) -> DiscreteState:
    """Integer state ``floor(n * x)``; rounding leftovers are not redistributed."""
    v = x.as_vector()
    if np.any(v < 0):
        raise ValidationError("initial proportions must be nonnegative")
    if v.sum() > 1 + 1e-9:
        raise ValidationError(f"initial proportions sum to {v.sum()!r} > 1")
    counts = np.floor(n * v + 0.0).astype(np.int64)
    ell = x.ell
    return DiscreteState(counts[:ell], counts[ell:])


def event_rates(state: DiscreteState, model: ValidatedModel) -> dict[EventChannel, float]:
    """Rate of every enumerated channel at ``state``."""
    table = channel_table(model)
    x = state.as_vector().astype(np.int64)
    rates = np.zeros(len(table))
    clock = np.zeros(3)
    counters = np.zeros(3, dtype=np.int64)
    _refresh(x, rates, clock, counters, model.ell, table.kind, table.src, table.coef)
    return {table.channel(c): float(r) for c, r in enumerate(rates)}


def step(state: DiscreteState, model: ValidatedModel, rng: np.random.Generator):
    """Fire exactly one event.

    Returns ``(dt, channel, next_state)``. Raises :class:`Absorbed` when every
    rate is zero.
    """
    eng = _Engine(model, state, rng)
    out_t = np.empty(1)
    out_x = np.empty((1, eng.x.shape[0]), dtype=np.int64)
    out_c = np.empty(1, dtype=np.int64)
    status, fired = eng.run_to(np.inf, 1, out_t, out_x, out_c)
    if status == _ABSORBED:
        raise Absorbed("total event rate is zero")
    ell = model.ell
    return float(out_t[0]), eng.table.channel(int(out_c[0])), DiscreteState(out_x[0, :ell], out_x[0, ell:])


def simulate_counts(model: ValidatedModel, state: DiscreteState, cfg: SimConfig,
                    rng: np.random.Generator | None = None) -> DiscreteTrajectory:
    """Run the jump process from explicit integer counts."""
    if rng is None:
        rng = make_rng(cfg.seed)
    n = cfg.population_n
    eng = _Engine(model, state, rng)
    x0 = eng.x.copy()
    rec = cfg.recording
    absorbed = False
    absorbed_at = None

    if isinstance(rec, Grid):
        times = time_grid(cfg.t_max, rec.dt)
        counts, idx = eng.run_grid(times)
        if idx < times.shape[0]:
            absorbed = True
            absorbed_at = eng.t
    elif isinstance(rec, FinalOnly):
        status, _ = eng.run_to(cfg.t_max, _INT_MAX)
        absorbed = status == _ABSORBED
        absorbed_at = eng.t if absorbed else None
        times = np.array([cfg.t_max])
        counts = eng.x[None, :].copy()
    else:
        t_chunks = [np.zeros(1)]
        x_chunks = [x0[None, :]]
        while True:
            out_t = np.empty(_CHUNK)
            out_x = np.empty((_CHUNK, x0.shape[0]), dtype=np.int64)
            out_c = np.empty(_CHUNK, dtype=np.int64)
            status, fired = eng.run_to(cfg.t_max, _CHUNK, out_t, out_x, out_c)
            t_chunks.append(out_t[:fired])
            x_chunks.append(out_x[:fired])
            if status != _HIT_LIMIT:
                break
        absorbed = status == _ABSORBED
        absorbed_at = eng.t if absorbed else None
        times = np.concatenate(t_chunks)
        counts = np.concatenate(x_chunks)

    return DiscreteTrajectory(
        times=times,
        counts=counts,
        event_count=eng.events,
        population_n=n,
        t_max=cfg.t_max,
        absorbed=absorbed,
        absorbed_at=absorbed_at,
        seed=cfg.seed,
        recording=recording_to_str(rec),
    )


def simulate(model: ValidatedModel, x0: ContinuousState, cfg: SimConfig,
             rng: np.random.Generator | None = None) -> DiscreteTrajectory:
    """Simulate from initial proportions ``x0`` scaled to ``cfg.population_n``.

    Deterministic given ``(model, x0, cfg)``; pass ``rng`` to override the
    stream derived from ``cfg.seed``.
    """
    state = initial_counts(x0, cfg.population_n)
    if state.total == 0:
        raise ValidationError("initial condition rounds to an empty population")
    return simulate_counts(model, state, cfg, rng)


def scale(traj: DiscreteTrajectory, n: int | None = None) -> ScaledTrajectory:
    """Divide every count by the population size."""
    n = traj.population_n if n is None else n
    if n != traj.population_n:
        raise ValidationError(f"trajectory was simulated with N={traj.population_n}, not {n}")
    return ScaledTrajectory(traj.times.copy(), traj.counts / float(n), traj.t_max)
