"""Synthetic multicohort multistate data with known truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .states import StateSpace, SubjectHistory, covid_state_space


@dataclass(frozen=True)
class Baseline:
    """Parametric baseline hazard on the study clock.

    Exponential: ``H(t) = rate * t``. Weibull: ``H(t) = (t / scale) ** shape``.
    """

    kind: str = "exponential"
    rate: float = 0.1
    shape: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exponential", "weibull"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.kind == "exponential" and not self.rate >= 0:
            raise ValueError("rate must be non-negative")
        if self.kind == "weibull" and not (self.shape > 0 and self.scale > 0):
            raise ValueError("weibull shape and scale must be positive")

    def cumhaz(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "exponential":
            return self.rate * t
        return (t / self.scale) ** self.shape

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "exponential":
            return np.full_like(t, self.rate)
        return self.shape / self.scale * (t / self.scale) ** (self.shape - 1)

    def inverse(self, H):
        H = np.asarray(H, dtype=float)
        if self.kind == "exponential":
            with np.errstate(divide="ignore"):
                return np.where(self.rate > 0, H / self.rate if self.rate > 0 else np.inf, np.inf)
        return self.scale * H ** (1.0 / self.shape)

    def to_dict(self):
        if self.kind == "exponential":
            return {"kind": "exponential", "rate": self.rate}
        return {"kind": "weibull", "shape": self.shape, "scale": self.scale}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TransitionTruth:
    """True hazard of one transition.

    The log relative hazard is
    ``sum(beta[c] * z_c) + gamma * t_entry + eta[g] + interaction_coef[g] * z_q``
    with covariates measured relative to ``GeneratorSpec.centers``.
    """

    baseline: Baseline | dict = field(default_factory=Baseline)
    beta: dict = field(default_factory=dict)
    gamma: float = 0.0
    eta: dict = field(default_factory=dict)
    interaction: str | None = None
    interaction_coef: dict = field(default_factory=dict)

    def baseline_for(self, cohort) -> Baseline:
        if isinstance(self.baseline, dict):
            return self.baseline[int(cohort)]
        return self.baseline

    def to_dict(self):
        base = ({str(g): b.to_dict() for g, b in self.baseline.items()}
                if isinstance(self.baseline, dict) else self.baseline.to_dict())
        return {"baseline": base, "beta": dict(self.beta), "gamma": self.gamma,
                "eta": {str(g): v for g, v in self.eta.items()},
                "interaction": self.interaction,
                "interaction_coef": {str(g): v for g, v in self.interaction_coef.items()}}

    @classmethod
    def from_dict(cls, d):
        b = d.get("baseline", {"kind": "exponential", "rate": 0.1})
        base = Baseline.from_dict(b) if "kind" in b else {int(g): Baseline.from_dict(v) for g, v in b.items()}
        return cls(base, dict(d.get("beta", {})), float(d.get("gamma", 0.0)),
                   {int(g): v for g, v in (d.get("eta") or {}).items()}, d.get("interaction"),
                   {int(g): v for g, v in (d.get("interaction_coef") or {}).items()})


@dataclass
class CovariateLaw:
    """Distribution of one baseline covariate.

    ``kind`` is ``"normal"`` (params mean, sd), ``"bernoulli"`` (p) or
    ``"mixture"`` (weights, means, sds). ``per_cohort`` optionally overrides
    ``params`` by cohort. ``clip`` bounds the draws.
    """

    kind: str
    params: dict
    per_cohort: dict = field(default_factory=dict)
    clip: tuple | None = None

    def draw(self, rng, cohorts) -> np.ndarray:
        cohorts = np.asarray(cohorts)
        out = np.empty(cohorts.size)
        for g in np.unique(cohorts):
            m = cohorts == g
            k = int(m.sum())
            prm = self.per_cohort.get(int(g), self.params)
            if self.kind == "normal":
                v = rng.normal(prm["mean"], prm["sd"], k)
            elif self.kind == "bernoulli":
                v = (rng.random(k) < prm["p"]).astype(float)
            elif self.kind == "mixture":
                comp = rng.choice(len(prm["weights"]), size=k, p=prm["weights"])
                v = rng.normal(np.asarray(prm["means"])[comp], np.asarray(prm["sds"])[comp])
            else:
                raise ValueError(f"unknown covariate law {self.kind!r}")
            out[m] = v
        if self.clip is not None:
            out = np.clip(out, *self.clip)
        return out

    def to_dict(self):
        d = {"kind": self.kind, "params": self.params}
        if self.per_cohort:
            d["per_cohort"] = {str(g): v for g, v in self.per_cohort.items()}
        if self.clip is not None:
            d["clip"] = list(self.clip)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d.get("params", {}),
                   {int(g): v for g, v in (d.get("per_cohort") or {}).items()},
                   tuple(d["clip"]) if d.get("clip") else None)


@dataclass
class GeneratorSpec:
    """Ground truth for :func:`simulate_dataset`.

    Parameters
    ----------
    space : StateSpace
    transitions : dict
        ``"A->B"`` -> TransitionTruth. Missing transitions never fire.
    cohort_sizes : tuple of int
        Subjects per cohort; cohorts are labeled 1..G.
    covariates : dict
        Name -> CovariateLaw.
    initial : dict
        State -> probability, or cohort -> {state: probability}.
    centers : dict
        Values subtracted from covariates inside the linear predictor.
    censor_rate : float
        Rate of exponential random censoring (0 disables it).
    admin_time : float or None
        Administrative censoring time; defaults to the horizon.
    clock : {"markov", "semi-markov"}
        In ``"markov"`` mode every ``gamma`` is ignored.
    """

    space: StateSpace
    transitions: dict
    cohort_sizes: tuple = (500,)
    covariates: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    centers: dict = field(default_factory=dict)
    censor_rate: float = 0.0
    admin_time: float | None = None
    clock: str = "semi-markov"

    def __post_init__(self):
        if any(int(n) < 1 for n in self.cohort_sizes):
            raise ValueError("cohort sizes must be at least 1")
        if self.clock not in ("markov", "semi-markov"):
            raise ValueError("clock must be 'markov' or 'semi-markov'")
        for label, tr in self.transitions.items():
            a, b = label.split("->")
            if (a, b) not in self.space.allowed:
                raise ValueError(f"transition {label} not in the state space")
            coefs = [tr.gamma, *tr.beta.values(), *tr.eta.values(), *tr.interaction_coef.values()]
            if not np.all(np.isfinite(coefs)):
                raise ValueError(f"non-finite coefficient in {label}")
        if self.censor_rate < 0:
            raise ValueError("censor_rate must be non-negative")

    @property
    def n_cohorts(self) -> int:
        return len(self.cohort_sizes)

    @property
    def end_time(self) -> float:
        return self.space.horizon if self.admin_time is None else float(self.admin_time)

    def initial_probs(self, cohort) -> dict:
        init = self.initial or {self.space.states[0]: 1.0}
        if all(isinstance(v, dict) for v in init.values()):
            return init[int(cohort)]
        return init

    def log_hazard_ratio(self, label, Z: dict, cohort, t_entry):
        """Linear predictor of transition `label` for arrays of subjects."""
        tr = self.transitions[label]
        cohort = np.asarray(cohort)
        lp = np.zeros(cohort.shape, dtype=float)
        for name, b in tr.beta.items():
            lp = lp + b * (np.asarray(Z[name], dtype=float) - self.centers.get(name, 0.0))
        if self.clock == "semi-markov" and tr.gamma:
            lp = lp + tr.gamma * np.asarray(t_entry, dtype=float)
        for g, e in tr.eta.items():
            lp = lp + e * (cohort == g)
        if tr.interaction is not None:
            if tr.interaction == "t_entry":
                zq = np.asarray(t_entry, dtype=float)
            else:
                zq = np.asarray(Z[tr.interaction], dtype=float) - self.centers.get(tr.interaction, 0.0)
            for g, e in tr.interaction_coef.items():
                lp = lp + e * (cohort == g) * zq
        return lp

    def to_dict(self) -> dict:
        init = self.initial
        if init and all(isinstance(v, dict) for v in init.values()):
            init = {str(g): v for g, v in init.items()}
        return {
            "space": self.space.to_dict(),
            "transitions": {k: v.to_dict() for k, v in self.transitions.items()},
            "cohort_sizes": [int(n) for n in self.cohort_sizes],
            "covariates": {k: v.to_dict() for k, v in self.covariates.items()},
            "initial": init,
            "centers": dict(self.centers),
            "censor_rate": self.censor_rate,
            "admin_time": self.admin_time,
            "clock": self.clock,
        }

    @classmethod
    def from_dict(cls, d) -> "GeneratorSpec":
        init = d.get("initial") or {}
        if init and all(isinstance(v, dict) for v in init.values()):
            init = {int(g): v for g, v in init.items()}
        return cls(
            space=StateSpace.from_dict(d["space"]),
            transitions={k: TransitionTruth.from_dict(v) for k, v in d["transitions"].items()},
            cohort_sizes=tuple(d.get("cohort_sizes", (500,))),
            covariates={k: CovariateLaw.from_dict(v) for k, v in (d.get("covariates") or {}).items()},
            initial=init,
            centers=dict(d.get("centers") or {}),
            censor_rate=float(d.get("censor_rate", 0.0)),
            admin_time=d.get("admin_time"),
            clock=d.get("clock", "semi-markov"),
        )


def _walk(spec: GeneratorSpec, Z, cohort, state, time, entry, stop, rng):
    """Advance every subject until absorption or its stop time.

    Returns ``(vis_state, vis_time, end_time, end_state)`` where row i of the
    ``(n, n_transient)`` visit arrays lists subject i's transient visits
    (None / NaN padded).
    """
    n = cohort.size
    space = spec.space
    width = len(space.states)
    vis_state = np.full((n, width), None, dtype=object)
    vis_time = np.full((n, width), np.nan)
    vis_state[:, 0] = state
    vis_time[:, 0] = entry
    nvis = np.ones(n, dtype=int)
    end_time = np.array(stop, dtype=float)
    end_state = np.full(n, None, dtype=object)
    cur = np.array(state, dtype=object)
    now = np.array(time, dtype=float)
    t_in = np.array(entry, dtype=float)
    absorbing = set(space.absorbing)
    active = np.array([s not in absorbing for s in cur], dtype=bool) & (now < end_time)
    transient = [s for s in space.states if s not in absorbing]
    while active.any():
        for src in transient:
            idx = np.flatnonzero(active & (cur == src))
            if idx.size == 0:
                continue
            dests = space.successors(src)
            best_t = np.full(idx.size, np.inf)
            best_d = np.full(idx.size, -1)
            Zi = {k: v[idx] for k, v in Z.items()}
            coh = cohort[idx]
            for k, dest in enumerate(dests):
                label = f"{src}->{dest}"
                if label not in spec.transitions:
                    continue
                tr = spec.transitions[label]
                r = np.exp(spec.log_hazard_ratio(label, Zi, coh, t_in[idx]))
                e = rng.exponential(size=idx.size)
                t_new = np.full(idx.size, np.inf)
                for g in np.unique(coh):
                    m = coh == g
                    base = tr.baseline_for(g)
                    t_new[m] = base.inverse(base.cumhaz(now[idx][m]) + e[m] / r[m])
                # huge hazards can round the draw onto the current time
                t_new = np.maximum(t_new, np.nextafter(now[idx], np.inf))
                better = t_new < best_t
                best_t[better] = t_new[better]
                best_d[better] = k
            moved = best_t < end_time[idx]
            active[idx[~moved]] = False
            mi = idx[moved]
            if mi.size == 0:
                continue
            dest = np.asarray(dests, dtype=object)[best_d[moved]]
            t = best_t[moved]
            absorbed = np.array([d in absorbing for d in dest], dtype=bool)
            ai = mi[absorbed]
            end_time[ai] = t[absorbed]
            end_state[ai] = dest[absorbed]
            active[ai] = False
            ti = mi[~absorbed]
            vis_state[ti, nvis[ti]] = dest[~absorbed]
            vis_time[ti, nvis[ti]] = t[~absorbed]
            nvis[ti] += 1
            cur[ti] = dest[~absorbed]
            t_in[ti] = t[~absorbed]
            now[mi] = t
    return vis_state, vis_time, end_time, end_state


def occupancy(vis_state, vis_time, end_time, end_state, t) -> np.ndarray:
    """State occupied at time t by each simulated path."""
    k = np.sum(vis_time <= t, axis=1) - 1
    out = vis_state[np.arange(len(k)), np.clip(k, 0, None)].copy()
    absorbed = (end_state != None) & (end_time <= t)  # noqa: E711
    out[absorbed] = end_state[absorbed]
    return out


def simulate_dataset(spec: GeneratorSpec, seed=None) -> list:
    """Draw subject histories from `spec`.

    Subjects start at time 0 in a state drawn from the initial law and move
    along competing latent times obtained by inverting each transition's
    cumulative hazard; follow-up stops at absorption or censoring.
    """
    rng = np.random.default_rng(seed)
    cohort = np.repeat(np.arange(1, spec.n_cohorts + 1), spec.cohort_sizes)
    n = cohort.size
    Z = {name: law.draw(rng, cohort) for name, law in spec.covariates.items()}
    state = np.empty(n, dtype=object)
    for g in np.unique(cohort):
        m = cohort == g
        probs = spec.initial_probs(g)
        labels = list(probs)
        p = np.asarray([probs[s] for s in labels], dtype=float)
        state[m] = np.asarray(labels, dtype=object)[rng.choice(len(labels), size=int(m.sum()), p=p / p.sum())]
    stop = np.full(n, spec.end_time)
    if spec.censor_rate > 0:
        stop = np.minimum(stop, rng.exponential(1 / spec.censor_rate, n))
    vs, vt, end_time, end_state = _walk(spec, Z, cohort, state, np.zeros(n), np.zeros(n), stop, rng)
    out = []
    for i in range(n):
        cov = {k: float(v[i]) for k, v in Z.items()}
        visits = [(vs[i, k], float(vt[i, k])) for k in range(vs.shape[1]) if vs[i, k] is not None]
        out.append(SubjectHistory(i + 1, int(cohort[i]), cov, visits, float(end_time[i]), end_state[i]))
    return out


def oracle_occupation(spec: GeneratorSpec, profile, times, M: int = 1_000_000, seed=None):
    """State occupation frequencies from direct simulation of the true process.

    `profile` needs ``covariates`` (raw scale), ``cohort``, ``state``,
    ``s`` (conditioning time) and ``t_entry``. Returns ``(probs, se)`` with
    shape ``(len(times), n_states)``; columns follow ``spec.space.states``.
    """
    rng = np.random.default_rng(seed)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    states = spec.space.states
    cohort = np.full(M, int(profile.cohort))
    Z = {k: np.full(M, float(v)) for k, v in profile.covariates.items()}
    start = np.full(M, profile.state, dtype=object)
    stop = np.full(M, np.inf)
    counts = np.zeros((times.size, len(states)))
    chunk = 200_000
    for lo in range(0, M, chunk):
        hi = min(M, lo + chunk)
        k = hi - lo
        paths = _walk(spec, {a: b[lo:hi] for a, b in Z.items()}, cohort[lo:hi], start[lo:hi],
                      np.full(k, float(profile.s)), np.full(k, float(profile.t_entry)), stop[lo:hi], rng)
        for ti, t in enumerate(times):
            occ = occupancy(*paths, t)
            for si, st in enumerate(states):
                counts[ti, si] += np.count_nonzero(occ == st)
    p = counts / M
    return p, np.sqrt(p * (1 - p) / M)


def two_state_spec(rate: float, n: int, horizon: float = 30.0, censor_rate: float = 0.0) -> GeneratorSpec:
    """Alive -> Dead with a constant hazard."""
    space = StateSpace(["Alive", "Dead"], [("Alive", "Dead")], horizon)
    return GeneratorSpec(space, {"Alive->Dead": TransitionTruth(Baseline("exponential", rate))},
                         (n,), initial={"Alive": 1.0}, censor_rate=censor_rate)


def illness_death_spec(n_per_cohort=(1000,), rates=(0.08, 0.02, 0.1), beta=None, gamma=0.0,
                       horizon=30.0, p_ill_start=0.3, censor_rate=0.01, clock="semi-markov",
                       eta=None, interaction=None, covariates=None) -> GeneratorSpec:
    """Healthy/Ill/Dead model with some subjects already ill at time 0.

    ``rates`` are the exponential baseline rates of Healthy->Ill,
    Healthy->Dead and Ill->Dead. ``beta`` maps covariate names to effects
    applied to every transition; ``gamma`` is the entry-time effect on
    Ill->Dead.
    """
    space = StateSpace(["Healthy", "Ill", "Dead"],
                       [("Healthy", "Ill"), ("Healthy", "Dead"), ("Ill", "Dead")], horizon)
    beta = beta or {}
    if covariates is None:
        covariates = {name: CovariateLaw("normal", {"mean": 0.0, "sd": 1.0}) for name in beta}
    trans = {
        "Healthy->Ill": TransitionTruth(Baseline("exponential", rates[0]), dict(beta)),
        "Healthy->Dead": TransitionTruth(Baseline("exponential", rates[1]), dict(beta)),
        "Ill->Dead": TransitionTruth(Baseline("exponential", rates[2]), dict(beta), gamma,
                                     dict(eta or {}), *(interaction or (None, {}))),
    }
    return GeneratorSpec(space, trans, tuple(n_per_cohort), covariates,
                         {"Healthy": 1 - p_ill_start, "Ill": p_ill_start},
                         censor_rate=censor_rate, clock=clock)


DIV3W_SIZES = (2074, 611, 605)


def div3w_generator(scale: float = 1.0, horizon: float = 90.0) -> GeneratorSpec:
    """Seven-state hospital replica with three waves.

    Cohort sizes, sex, age and safi laws mimic the baseline summaries of a
    real three-wave hospital cohort (age as normal with sd = IQR / 1.349,
    safi as a two-component mixture capped at 476.2). Hazards are tuned so
    that the wave-wise shares of severe pneumonia, ventilation and
    in-hospital death are of a realistic order; everything else is invented.
    """
    if not 0 < scale <= 1:
        raise ValueError("scale must lie in (0, 1]")
    sizes = tuple(max(1, int(round(n * scale))) for n in DIV3W_SIZES)
    space = covid_state_space(horizon)
    covariates = {
        "sex": CovariateLaw("bernoulli", {"p": 0.412}, {1: {"p": 0.412}, 2: {"p": 0.363}, 3: {"p": 0.401}}),
        "age": CovariateLaw("normal", {"mean": 59, "sd": 14.8},
                            {1: {"mean": 59, "sd": 14.8}, 2: {"mean": 62, "sd": 13.3},
                             3: {"mean": 63, "sd": 14.8}}, clip=(18, 100)),
        "safi": CovariateLaw("mixture", {"weights": [0.72, 0.28], "means": [458, 330], "sds": [12, 70]},
                             {1: {"weights": [0.72, 0.28], "means": [458, 330], "sds": [12, 70]},
                              2: {"weights": [0.68, 0.32], "means": [454, 320], "sds": [12, 70]},
                              3: {"weights": [0.66, 0.34], "means": [453, 318], "sds": [12, 70]}},
                             clip=(60, 476.2)),
    }
    centers = {"age": 60.0, "safi": 425.0}
    E = lambda rate: Baseline("exponential", rate)  # noqa: E731
    T = TransitionTruth
    trans = {
        "NSP->SP": T(E(0.010), {"age": 0.01, "safi": -0.006}, eta={2: 0.3, 3: 0.3}),
        "NSP->Discharge": T(E(0.11), {"age": -0.01, "safi": 0.002}),
        "NSP->Death": T(E(0.0012), {"age": 0.06}),
        "SP->Recovery": T(E(0.080), {"age": -0.005, "safi": 0.004}, eta={2: 0.1, 3: 0.2}),
        "SP->NIMV": T(E(0.060), {"sex": -0.05, "age": 0.003, "safi": -0.004}, gamma=0.58,
                      eta={2: 0.25, 3: 0.31}, interaction="safi", interaction_coef={2: -0.004, 3: -0.008}),
        "SP->IMV": T(E(0.052), {"age": 0.004, "safi": -0.006}, gamma=0.3, eta={2: -0.3, 3: -0.8}),
        "SP->Death": T(E(0.004), {"age": 0.07}, eta={2: -0.3, 3: -0.6}),
        "Recovery->Discharge": T(E(0.5)),
        "Recovery->Death": T(E(0.006), {"age": 0.05}),
        "NIMV->Recovery": T(E(0.070), {"age": -0.01}),
        "NIMV->IMV": T(E(0.070), {"age": 0.01}, eta={2: -0.3, 3: -0.6}, interaction="age",
                       interaction_coef={2: -0.02, 3: -0.02}),
        "NIMV->Death": T(E(0.010), {"age": 0.06}, eta={2: -0.3, 3: -0.6}),
        "IMV->Recovery": T(E(0.020), {"age": -0.02}),
        "IMV->Death": T(E(0.027), {"sex": -0.1, "age": 0.04, "safi": -0.002}, eta={2: -0.7, 3: -1.1}),
    }
    initial = {1: {"NSP": 0.76, "SP": 0.24}, 2: {"NSP": 0.66, "SP": 0.34}, 3: {"NSP": 0.64, "SP": 0.36}}
    return GeneratorSpec(space, trans, sizes, covariates, initial, centers, clock="semi-markov")


def make_div3w_replica(seed=None, scale: float = 1.0) -> list:
    """Synthetic three-wave hospital cohort on the seven-state scheme."""
    return simulate_dataset(div3w_generator(scale), seed)
