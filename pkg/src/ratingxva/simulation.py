"""Path simulation of the piecewise-homogeneous rating chain.

Paths are drawn with the iterative stochastic simulation algorithm: within
each interval the chain is homogeneous, so exponential waiting times are
drawn from the current generator and a jump past the interval end rolls the
path over to the next interval with a fresh draw (memorylessness makes the
restart exact).

Every path has its own random stream derived from ``(seed, stream, path
index)``, so path ``i`` is the same whatever the batch size or order.
"""
from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import PhctmcModel
from .ratings import ADJUSTED, RatingDataError, RatingScale, TransitionMatrix

__all__ = [
    "RatingPath",
    "LikelihoodRatioPath",
    "path_rng",
    "simulate_paths",
    "simulate_blocks",
    "states_at",
    "occupancy",
    "empirical_transition_matrix",
    "likelihood_ratio",
    "likelihood_ratios",
    "write_paths_csv",
]

_BATCH = 32


def path_rng(seed, stream, index) -> np.random.Generator:
    """Independent generator for one path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class RatingPath:
    """Right-continuous rating trajectory.

    ``states[m]`` is the rating held from ``times[m]`` up to the next jump.
    """

    initial: int
    times: np.ndarray
    states: np.ndarray
    horizon: float
    n_states: int

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.states, dtype=np.int64)
        if t.shape != s.shape:
            raise ValueError("times and states differ in length")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] < 0 or t[-1] > self.horizon):
            raise ValueError("jump times must be strictly increasing within the horizon")
        prev = np.concatenate([[self.initial], s[:-1]])
        if np.any(prev == s):
            raise ValueError("path contains a self-jump")
        if s.size and np.any(prev == self.n_states - 1):
            raise ValueError("path leaves the default state")
        t.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    @property
    def default_state(self) -> int:
        return self.n_states - 1

    @property
    def n_jumps(self) -> int:
        return int(self.times.size)

    @property
    def terminal(self) -> int:
        return int(self.states[-1]) if self.states.size else self.initial

    def state_at(self, t) -> int:
        k = int(np.searchsorted(self.times, t, side="right"))
        return self.initial if k == 0 else int(self.states[k - 1])

    @property
    def default_time(self) -> float:
        """First time in default, ``inf`` if the path survives."""
        if self.initial == self.default_state:
            return 0.0
        if self.states.size and self.states[-1] == self.default_state:
            return float(self.times[-1])
        return math.inf

    @property
    def pre_default_state(self) -> int | None:
        """Rating held immediately before the jump into default."""
        if not self.states.size or self.states[-1] != self.default_state:
            return None
        return int(self.states[-2]) if self.states.size > 1 else self.initial


@dataclass(frozen=True)
class LikelihoodRatioPath:
    """Density ``dQ/dP`` restricted to one path, with its ingredients."""

    value: float
    jump_counts: np.ndarray
    compensator: float

    def __post_init__(self):
        if not (self.value > 0 and math.isfinite(self.compensator)):
            raise ValueError("likelihood ratio must be positive with a finite compensator")


class _Tables:
    # per interval and state: jump targets and cumulative off-diagonal rates
    def __init__(self, generators):
        self.targets, self.cums, self.exits = [], [], []
        for g in generators:
            g = np.asarray(getattr(g, "entries", g), dtype=float)
            k = g.shape[0]
            tg, cs, ex = [], [], []
            for i in range(k):
                j = np.array([c for c in range(k) if c != i and g[i, c] > 0], dtype=int)
                cum = np.cumsum(g[i, j]).tolist()
                tg.append(j.tolist())
                cs.append(cum)
                ex.append(cum[-1] if cum else 0.0)
            self.targets.append(tg)
            self.cums.append(cs)
            self.exits.append(ex)


def _simulate_one(tables, breakpoints, initial, default, rng):
    times, states = [], []
    state = initial
    t = breakpoints[0]
    buf = rng.random(_BATCH)
    pos = 0
    for k in range(len(breakpoints) - 1):
        t_end = breakpoints[k + 1]
        exits, cums, targets = tables.exits[k], tables.cums[k], tables.targets[k]
        while state != default:
            rate = exits[state]
            if rate == 0.0:
                break
            if pos + 2 > _BATCH:
                buf = rng.random(_BATCH)
                pos = 0
            # 1 - U lies in (0, 1]: finite waiting time, positive jump threshold
            r1 = 1.0 - buf[pos]
            r2 = 1.0 - buf[pos + 1]
            pos += 2
            tau = -math.log(r1) / rate
            if t + tau >= t_end:
                break
            t += tau
            cum = cums[state]
            j = bisect.bisect_left(cum, r2 * rate)
            state = targets[state][min(j, len(cum) - 1)]
            times.append(t)
            states.append(state)
        if state == default:
            break
        t = t_end
    return times, states


def simulate_paths(model: PhctmcModel, measure, initial_rating, n_paths, seed,
                   stream=0, first_index=0) -> list[RatingPath]:
    """Rating paths over the model's schedule under measure ``P`` or ``Q``.

    Path ``n`` uses the random stream ``(seed, stream, first_index + n)``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    tables = _Tables(model.generators(measure))
    k = model.size
    initial = int(initial_rating)
    if not 0 <= initial < k:
        raise RatingDataError(f"initial rating {initial_rating} out of range")
    bp = model.schedule.breakpoints.tolist()
    out = []
    for n in range(n_paths):
        rng = path_rng(seed, stream, first_index + n)
        times, states = _simulate_one(tables, bp, initial, k - 1, rng)
        out.append(RatingPath(initial, np.array(times), np.array(states, dtype=np.int64),
                              bp[-1], k))
    return out


def simulate_blocks(model: PhctmcModel, measure, n_paths, seed, ratings=None,
                    stream_base=0) -> dict[int, list[RatingPath]]:
    """One block of paths per initial rating; block ``i`` uses stream ``stream_base + i``."""
    ratings = range(model.size) if ratings is None else ratings
    return {int(i): simulate_paths(model, measure, i, n_paths, seed, stream=stream_base + int(i))
            for i in ratings}


def states_at(paths: Sequence[RatingPath], times) -> np.ndarray:
    """Matrix of ratings, shape (n_paths, n_times)."""
    times = np.asarray(times, dtype=float)
    out = np.empty((len(paths), times.size), dtype=np.int64)
    for n, p in enumerate(paths):
        idx = np.searchsorted(p.times, times, side="right")
        full = np.concatenate([[p.initial], p.states])
        out[n] = full[idx]
    return out


def occupancy(paths: Sequence[RatingPath], t, n_states=None) -> np.ndarray:
    """Fraction of ``paths`` in each rating at time ``t``."""
    if not len(paths):
        raise RatingDataError("empty path block")
    n_states = paths[0].n_states if n_states is None else n_states
    s = states_at(paths, [t])[:, 0]
    return np.bincount(s, minlength=n_states) / len(paths)


def empirical_transition_matrix(paths, t) -> TransitionMatrix:
    """Empirical ``P(0, t)`` from paths grouped by initial rating.

    ``paths`` is a flat sequence or a mapping of blocks. Every non-default
    rating needs at least one path; the default row is the absorbing unit
    row when no block starts there.
    """
    flat = [p for block in paths.values() for p in block] if isinstance(paths, dict) else list(paths)
    if not flat:
        raise RatingDataError("empty path block")
    k = flat[0].n_states
    if t < 0 or t > flat[0].horizon + 1e-12:
        raise RatingDataError(f"time {t} outside the simulated horizon")
    groups: dict[int, list[RatingPath]] = {}
    for p in flat:
        groups.setdefault(p.initial, []).append(p)
    out = np.zeros((k, k))
    for i in range(k):
        if i in groups:
            out[i] = occupancy(groups[i], t, k)
        elif i == k - 1:
            out[i, -1] = 1.0
        else:
            raise RatingDataError(f"empty path block for initial rating {i}")
    return TransitionMatrix(t, out, ADJUSTED)


def likelihood_ratio(path: RatingPath, model: PhctmcModel) -> LikelihoodRatioPath:
    """``dQ/dP`` on one path simulated under P.

    ``L_T = exp(-M_T) * prod over jumps i->j of (1 + kappa_ij)`` with
    ``kappa_ij = h_j / h_i - 1`` taken in the interval of the jump and
    ``M_T`` the integral of the exit-rate difference (Q minus P) along the
    occupied state.
    """
    bp = model.schedule.breakpoints
    if abs(path.horizon - bp[-1]) > 1e-12 or path.n_states != model.size:
        raise RatingDataError("path does not match the model schedule")
    k = model.size
    counts = np.zeros((k, k), dtype=np.int64)
    exit_p = [g.exit_rates for g in model.gen_p]
    exit_q = [g.exit_rates for g in model.gen_q]
    hs = [h.values for h in model.h]
    log_jumps = 0.0
    comp = 0.0
    # walk the pieces between consecutive jumps and breakpoints
    events = list(zip(path.times.tolist(), path.states.tolist()))
    state, t, e = path.initial, 0.0, 0
    for m in range(len(bp) - 1):
        t_end = bp[m + 1]
        while e < len(events) and events[e][0] < t_end:
            tj, new = events[e]
            comp += (exit_q[m][state] - exit_p[m][state]) * (tj - t)
            log_jumps += math.log(hs[m][new] / hs[m][state])
            counts[state, new] += 1
            state, t = new, tj
            e += 1
        comp += (exit_q[m][state] - exit_p[m][state]) * (t_end - t)
        t = t_end
    return LikelihoodRatioPath(math.exp(log_jumps - comp), counts, comp)


def likelihood_ratios(paths: Sequence[RatingPath], model: PhctmcModel) -> np.ndarray:
    return np.array([likelihood_ratio(p, model).value for p in paths])


def write_paths_csv(path, paths: Sequence[RatingPath], scale: RatingScale | None = None,
                    first_id=0):
    """Tidy dump: one row per path start and per jump."""
    def name(s):
        return scale.labels[s] if scale else str(s)

    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "initial", "time", "state"])
        for n, p in enumerate(paths, start=first_id):
            w.writerow([n, name(p.initial), "0.0", name(p.initial)])
            for t, s in zip(p.times.tolist(), p.states.tolist()):
                w.writerow([n, name(p.initial), repr(t), name(s)])
    return path
