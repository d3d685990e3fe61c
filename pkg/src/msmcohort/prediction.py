"""Transition and state-occupation probabilities for a covariate profile."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .design import profile_row
from .states import StateSpace

AJ = "aalen-johansen"
MC = "monte-carlo"
MC_CHUNK = 2500


class MarkovApproximationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SubjectProfile:
    """Conditioning set of a prediction.

    Parameters
    ----------
    covariates : dict
        Baseline covariates on the raw scale; the fit's centering constants
        are subtracted internally.
    cohort : int
    state : str
        State occupied at time `s`.
    s : float
        Conditioning time.
    t_entry : float or None
        Entry time into `state`; defaults to `s`.
    """

    covariates: dict = field(default_factory=dict, hash=False)
    cohort: int = 1
    state: str = ""
    s: float = 0.0
    t_entry: float | None = None

    def __post_init__(self):
        if self.t_entry is None:
            object.__setattr__(self, "t_entry", float(self.s))
        if not 0 <= self.t_entry <= self.s:
            raise ValueError("profile needs 0 <= t_entry <= s")

    def at(self, s: float, t_entry: float | None = None, state: str | None = None) -> "SubjectProfile":
        return SubjectProfile(self.covariates, self.cohort, state or self.state, s, t_entry)


@dataclass
class OccupationCurve:
    """Occupation probabilities from ``(state, s)`` on a time grid.

    ``probs[k, m]`` is the probability of occupying ``states[m]`` at
    ``times[k]``. Aalen-Johansen curves also carry the full transition
    matrices ``matrix[k]`` = P(s, times[k]).
    """

    times: np.ndarray
    states: tuple
    probs: np.ndarray
    method: str
    state: str
    s: float
    matrix: np.ndarray | None = None
    se: np.ndarray | None = None
    M: int | None = None
    extrapolated: np.ndarray | None = None
    flags: list = field(default_factory=list)
    label: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.extrapolated is None:
            self.extrapolated = np.zeros(len(self.times), dtype=bool)

    def column(self, state: str) -> np.ndarray:
        return self.probs[:, self.states.index(state)]

    def frame(self) -> pd.DataFrame:
        """Long table ``time, state, probability, mc_se`` (mc_se empty for AJ)."""
        K, R = self.probs.shape
        se = self.se if self.se is not None else np.full((K, R), np.nan)
        return pd.DataFrame({
            "time": np.repeat(self.times, R),
            "state": np.tile(np.asarray(self.states, dtype=object), K),
            "probability": self.probs.ravel(),
            "mc_se": se.ravel(),
        })

    @classmethod
    def from_frame(cls, df: pd.DataFrame, method: str, state: str, s: float | None = None) -> "OccupationCurve":
        states = tuple(pd.unique(df["state"]))
        wide = df.pivot(index="time", columns="state", values="probability")[list(states)]
        se = df.pivot(index="time", columns="state", values="mc_se")[list(states)].to_numpy(float)
        times = wide.index.to_numpy(float)
        return cls(times, states, wide.to_numpy(float), method, state,
                   float(times[0] if s is None else s), se=None if np.isnan(se).all() else se)


def evaluate_at(curve: OccupationCurve, t: float) -> pd.Series:
    """Occupation row at time `t` by right-continuous step lookup."""
    if t < curve.s:
        raise ValueError(f"t = {t} precedes the conditioning time s = {curve.s}")
    if t > curve.times[-1]:
        raise ValueError(f"t = {t} beyond the end of the grid ({curve.times[-1]})")
    k = np.searchsorted(curve.times, t, side="right") - 1
    return pd.Series(curve.probs[k], index=list(curve.states), name=float(t))


def _space_of(mfit) -> StateSpace:
    if mfit.space is not None:
        return mfit.space
    pairs = [tuple(t.split("->")) for t in mfit.fits]
    states = list(dict.fromkeys(s for p in pairs for s in p))
    return StateSpace(states, pairs, max(b.last_time for f in mfit.fits.values()
                                         for b in f.baseline.values()))


def _grid(grid, s, space) -> np.ndarray:
    if grid is None:
        grid = np.arange(s, space.horizon + 1e-9, 1.0)
    grid = np.unique(np.asarray(grid, dtype=float))
    if np.any(grid < s):
        raise ValueError("grid times must be >= s")
    if grid.size == 0 or grid[0] > s:
        grid = np.concatenate([[s], grid])
    return grid


class _Hazards:
    """Profile-adjusted cumulative-hazard increments of every fitted transition."""

    def __init__(self, mfit, profile: SubjectProfile):
        self.space = _space_of(mfit)
        self.missing = []
        cov = {k: float(v) - float(mfit.centering.get(k, 0.0)) for k, v in profile.covariates.items()}
        self.items = {}
        for a, b in self.space.allowed:
            label = f"{a}->{b}"
            fit = mfit.fits.get(label)
            if fit is None:
                self.missing.append(label)
                continue
            key = int(profile.cohort) if fit.stratified else 0
            if key not in fit.baseline:
                raise KeyError(f"no baseline for cohort {profile.cohort} in {label}")
            base = fit.baseline[key]
            if base.times.size == 0:
                self.missing.append(label)
                continue
            for name in fit.spec.covariates:
                if name not in cov:
                    raise KeyError(f"profile is missing covariate {name!r} required by {label}")
            self.items[label] = (a, b, fit, base, cov, int(profile.cohort))

    def semi_markov(self, label) -> bool:
        fit = self.items[label][2]
        return fit.spec.entry_term is not None and np.any(
            [c != 0 for c, k in zip(fit.coef, fit.kinds) if k == "entry-time"])

    def log_rel(self, label, t_entry) -> np.ndarray:
        """Linear predictor as a function of the state entry time (vectorized)."""
        _, _, fit, _, cov, g = self.items[label]
        t_entry = np.atleast_1d(np.asarray(t_entry, dtype=float))
        if fit.spec.entry_term is None or len(fit.coef) == 0:
            x = profile_row(fit.spec, cov, g, 0.0) if len(fit.coef) else np.zeros(0)
            return np.full(t_entry.shape, fit.linear_predictor(x))
        uniq, inv = np.unique(t_entry, return_inverse=True)
        lp = np.array([fit.linear_predictor(profile_row(fit.spec, cov, g, e)) for e in uniq])
        return lp[inv]

    def last_time(self) -> float:
        return min(v[3].last_time for v in self.items.values()) if self.items else np.inf


def aalen_johansen(mfit, profile: SubjectProfile, grid=None) -> OccupationCurve:
    """Product-limit transition probabilities ``P(s, t)`` for a profile.

    Increments are ``exp(coef . z) dH0(u)`` at the fitted event times (the
    profile's cohort stratum under stratification) and
    ``P(s, t) = prod_{s < u <= t} (I + dA(u))``. Transitions out of the
    profile's state use its ``t_entry``; for other states the entry time is
    fixed at `s`, which only approximates a semi-Markov fit and is flagged.
    A step whose row would leave [0, 1] is rescaled and flagged.
    """
    hz = _Hazards(mfit, profile)
    space = hz.space
    states = space.states
    R = len(states)
    grid = _grid(grid, profile.s, space)
    flags = [f"transition {t} has no fitted hazard and never fires" for t in hz.missing]
    reach = _reachable(space, profile.state)
    approx = [lab for lab in hz.items
              if hz.semi_markov(lab) and hz.items[lab][0] != profile.state and hz.items[lab][0] in reach]
    if approx:
        msg = "Markov approximation: entry times fixed at s for semi-Markov transitions " + ", ".join(approx)
        flags.append(msg)
        warnings.warn(msg, MarkovApproximationWarning, stacklevel=2)
    times = np.unique(np.concatenate([v[3].times for v in hz.items.values()] or [np.zeros(0)]))
    times = times[(times > profile.s) & (times <= grid[-1])]
    dA = np.zeros((times.size, R, R))
    for lab, (a, b, fit, base, _, _) in hz.items.items():
        t_in = profile.t_entry if a == profile.state else profile.s
        r = np.exp(hz.log_rel(lab, t_in)[0])
        idx = np.searchsorted(times, base.times)
        ok = (idx < times.size) & (base.times > profile.s) & (base.times <= grid[-1])
        dA[idx[ok], states.index(a), states.index(b)] += r * base.increments[ok]
    out = dA.sum(axis=2)
    clamped = out > 1
    if clamped.any():
        scale = np.where(clamped, out, 1.0)
        dA /= scale[:, :, None]
        out = dA.sum(axis=2)
        flags.append(f"{int(clamped.sum())} step(s) with total hazard increment above 1 rescaled")
    steps = dA.copy()
    steps[:, np.arange(R), np.arange(R)] = 1 - out
    which = np.searchsorted(times, grid, side="right")
    mats = np.empty((grid.size, R, R))
    P = np.eye(R)
    k = 0
    for gi, n in enumerate(which):
        while k < n:
            P = P @ steps[k]
            k += 1
        mats[gi] = P
    i = states.index(profile.state)
    extrap = grid > hz.last_time()
    return OccupationCurve(grid, tuple(states), mats[:, i, :].copy(), AJ, profile.state, float(profile.s),
                           matrix=mats, extrapolated=extrap, flags=flags)


def _reachable(space: StateSpace, state: str) -> set:
    out, frontier = {state}, [state]
    while frontier:
        cur = frontier.pop()
        for b in space.successors(cur):
            if b not in out:
                out.add(b)
                frontier.append(b)
    return out


def _simulate_chunk(hz: _Hazards, profile, grid, n, rng):
    """Walk `n` trajectories; return state indices occupied at each grid time."""
    space = hz.space
    states = space.states
    R = len(states)
    cur = np.full(n, states.index(profile.state))
    now = np.full(n, float(profile.s))
    t_in = np.full(n, float(profile.t_entry))
    occ = np.empty((grid.size, n), dtype=int)
    occ[:] = cur
    active = np.full(n, not space.is_absorbing(profile.state))
    end = grid[-1]
    # per source state: union of outgoing event times and increments per destination
    tables = {}
    for src in states:
        labs = [lab for lab in hz.items if hz.items[lab][0] == src]
        if not labs:
            continue
        times = np.unique(np.concatenate([hz.items[lab][3].times for lab in labs]))
        inc = np.zeros((len(labs), times.size))
        for k, lab in enumerate(labs):
            base = hz.items[lab][3]
            inc[k, np.searchsorted(times, base.times)] = base.increments
        tables[src] = (labs, times, inc)
    while active.any():
        for si, src in enumerate(states):
            idx = np.flatnonzero(active & (cur == si))
            if idx.size == 0:
                continue
            if src not in tables:
                active[idx] = False
                continue
            labs, times, inc = tables[src]
            rel = np.stack([np.exp(hz.log_rel(lab, t_in[idx])) for lab in labs], axis=1)
            dA = rel[:, :, None] * inc[None, :, :]
            tot = dA.sum(axis=1)
            tot[times[None, :] <= now[idx, None]] = 0.0
            tot[:, times > end] = 0.0
            with np.errstate(divide="ignore"):
                logs = np.cumsum(np.log1p(-np.minimum(tot, 1.0)), axis=1)
            # all-cause product-limit survival crosses the uniform draw
            u = np.log(rng.random(idx.size))
            hit = logs <= u[:, None]
            fired = hit.any(axis=1)
            j = np.argmax(hit, axis=1)
            share = dA[np.arange(idx.size), :, j] / np.where(tot[np.arange(idx.size), j] > 0,
                                                             tot[np.arange(idx.size), j], 1.0)[:, None]
            cum = np.cumsum(share, axis=1)
            v = rng.random(idx.size) * cum[:, -1]
            k = np.minimum((cum <= v[:, None]).sum(axis=1), len(labs) - 1)
            stay = idx[~fired]
            active[stay] = False
            mv = idx[fired]
            t = times[j[fired]]
            dest = np.array([states.index(hz.items[labs[q]][1]) for q in k[fired]], dtype=int)
            later = grid[:, None] >= t[None, :]
            occ[:, mv] = np.where(later, dest[None, :], occ[:, mv])
            cur[mv] = dest
            now[mv] = t
            t_in[mv] = t
            active[mv] = np.array([not space.is_absorbing(states[d]) for d in dest], dtype=bool)
    counts = np.stack([(occ == r).sum(axis=1) for r in range(R)], axis=1)
    return counts


def simulate_occupation(mfit, profile: SubjectProfile, grid=None, M: int = 10_000, seed=None,
                        n_jobs: int = 1) -> OccupationCurve:
    """Monte-Carlo occupation probabilities from `M` simulated trajectories.

    From the current state the next event time is drawn by inverting the
    all-cause product-limit survival built from the fitted step hazards and
    the destination is chosen in proportion to its hazard increment at that
    time. On entering a state the entry-time covariate is set to the entry
    time. For a Markov fit the trajectories follow the Aalen-Johansen law
    exactly, so both methods agree up to Monte-Carlo error.

    Replicates are split into fixed-size chunks with their own spawned
    seeds, so results do not depend on `n_jobs`.
    """
    if M < 1000:
        raise ValueError("M must be at least 1000")
    hz = _Hazards(mfit, profile)
    space = hz.space
    grid = _grid(grid, profile.s, space)
    flags = [f"transition {t} has no fitted hazard and never fires" for t in hz.missing]
    sizes = [MC_CHUNK] * (M // MC_CHUNK) + ([M % MC_CHUNK] if M % MC_CHUNK else [])
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(i):
        return _simulate_chunk(hz, profile, grid, sizes[i], np.random.default_rng(seeds[i]))

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    p = sum(parts) / M
    se = np.sqrt(p * (1 - p) / M)
    extrap = grid > hz.last_time()
    return OccupationCurve(grid, tuple(space.states), p, MC, profile.state, float(profile.s),
                           se=se, M=M, extrapolated=extrap, flags=flags)


def dynamic_prediction(mfit, profile: SubjectProfile, entry_times, grid=None, method: str = MC,
                       M: int = 10_000, seed=None, n_jobs: int = 1) -> list:
    """One curve per entry time, with ``s = t_entry`` = that entry time.

    Curves share the absolute study-time axis. Entry times past the last
    baseline support produce curves flagged as extrapolated.
    """
    entry_times = [float(e) for e in entry_times]
    if np.any(np.diff(entry_times) < 0):
        raise ValueError("entry times must be nondecreasing")
    space = _space_of(mfit)
    if any(e >= space.horizon for e in entry_times):
        raise ValueError("entry times must be below the horizon")
    out = []
    for e in entry_times:
        p = profile.at(e, e)
        g = None if grid is None else np.asarray(grid, dtype=float)
        g = None if g is None else g[g >= e]
        if method == AJ:
            c = aalen_johansen(mfit, p, g)
        else:
            c = simulate_occupation(mfit, p, g, M, seed, n_jobs)
        c.label["entry_time"] = e
        if e > _Hazards(mfit, p).last_time():
            c.flags.append(f"entry time {e} beyond the last baseline event time")
        out.append(c)
    return out


def dynamic_frame(curves) -> pd.DataFrame:
    """Stack dynamic-prediction curves, one block per entry time."""
    frames = []
    for c in curves:
        f = c.frame()
        f.insert(0, "entry_time", c.label.get("entry_time", c.s))
        frames.append(f)
    return pd.concat(frames, ignore_index=True)
