"""State space and subject histories for unidirectional multistate processes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence


class HistoryError(ValueError):
    """A subject history is inconsistent with the state space."""

    def __init__(self, subject, visit_index, message):
        self.subject = subject
        self.visit_index = visit_index
        super().__init__(f"subject {subject!r}, visit {visit_index}: {message}")


@dataclass(frozen=True)
class StateSpace:
    """Finite set of states with the allowed direct transitions.

    Parameters
    ----------
    states : sequence of str
        Ordered state labels.
    allowed : iterable of (str, str)
        Ordered pairs ``(from, to)`` of permitted direct moves.
    horizon : float
        End of the observation window, in days.
    """

    states: tuple
    allowed: tuple
    horizon: float = 90.0

    def __init__(self, states: Sequence[str], allowed: Iterable, horizon: float = 90.0):
        states = tuple(states)
        allowed = tuple((str(a), str(b)) for a, b in allowed)
        if len(set(states)) != len(states):
            raise ValueError("duplicate state labels")
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        seen = set()
        for a, b in allowed:
            if a == b:
                raise ValueError(f"self-transition {a}->{b} is not allowed")
            if a not in states or b not in states:
                raise ValueError(f"transition {a}->{b} references an unknown state")
            if (a, b) in seen:
                raise ValueError(f"duplicate transition {a}->{b}")
            seen.add((a, b))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "allowed", allowed)
        object.__setattr__(self, "horizon", float(horizon))

    @property
    def absorbing(self) -> tuple:
        sources = {a for a, _ in self.allowed}
        return tuple(s for s in self.states if s not in sources)

    @property
    def transitions(self) -> tuple:
        return self.allowed

    def index(self, state: str) -> int:
        return self.states.index(state)

    def successors(self, state: str) -> list:
        return [b for a, b in self.allowed if a == state]

    def is_absorbing(self, state: str) -> bool:
        return state in self.absorbing

    def ancestors(self, state: str) -> list:
        """States from which `state` can be reached, `state` itself included."""
        out = {state}
        frontier = [state]
        while frontier:
            cur = frontier.pop()
            for a, b in self.allowed:
                if b == cur and a not in out:
                    out.add(a)
                    frontier.append(a)
        return [s for s in self.states if s in out]

    def to_dict(self) -> dict:
        return {
            "states": list(self.states),
            "transitions": [[a, b] for a, b in self.allowed],
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StateSpace":
        return cls(d["states"], [tuple(t) for t in d["transitions"]], d.get("horizon", 90.0))


def transition_label(frm: str, to: str) -> str:
    return f"{frm}->{to}"


def covid_state_space(horizon: float = 90.0) -> StateSpace:
    """The seven-state hospital scheme with 14 direct transitions."""
    states = ["NSP", "SP", "Recovery", "NIMV", "IMV", "Discharge", "Death"]
    allowed = [
        ("NSP", "SP"), ("NSP", "Discharge"), ("NSP", "Death"),
        ("SP", "Recovery"), ("SP", "NIMV"), ("SP", "IMV"), ("SP", "Death"),
        ("Recovery", "Discharge"), ("Recovery", "Death"),
        ("NIMV", "Recovery"), ("NIMV", "IMV"), ("NIMV", "Death"),
        ("IMV", "Recovery"), ("IMV", "Death"),
    ]
    return StateSpace(states, allowed, horizon)


@dataclass
class SubjectHistory:
    """Observed path of one subject.

    ``visits`` lists the transient states occupied, as ``(state, entry_time)``
    pairs, starting at time 0. Follow-up ends at ``end_time``: either by a
    move into the absorbing ``end_state`` or, when ``end_state`` is None, by
    right censoring in the last visited state. An entry time of NaN marks a
    visit whose entry was not recorded (see ``impute_recovery_sojourn``).
    """

    id: object
    cohort: int
    covariates: dict
    visits: list
    end_time: float
    end_state: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def censored(self) -> bool:
        return self.end_state is None

    @property
    def last_state(self) -> str:
        return self.end_state if self.end_state is not None else self.visits[-1][0]

    def state_at(self, t: float) -> str | None:
        """State occupied at time t (right-continuous); None after censoring."""
        if t > self.end_time or (t == self.end_time and self.end_state is None):
            return None
        if self.end_state is not None and t >= self.end_time:
            return self.end_state
        cur = None
        for state, entry in self.visits:
            if entry <= t:
                cur = state
        return cur

    def sojourns(self):
        """Yield ``(state, entry, exit)`` for each transient visit."""
        for k, (state, entry) in enumerate(self.visits):
            exit_ = self.visits[k + 1][1] if k + 1 < len(self.visits) else self.end_time
            yield state, entry, exit_

    def validate(self, space: StateSpace) -> None:
        if not self.visits:
            raise HistoryError(self.id, 0, "no visits")
        for k, (state, entry) in enumerate(self.visits):
            if state not in space.states:
                raise HistoryError(self.id, k, f"unknown state {state!r}")
            if entry is None or (isinstance(entry, float) and math.isnan(entry)):
                raise HistoryError(self.id, k, f"missing entry time for {state!r}")
            if space.is_absorbing(state):
                raise HistoryError(self.id, k, f"absorbing state {state!r} listed as a visit")
        if self.visits[0][1] != 0:
            raise HistoryError(self.id, 0, "first visit must start at time 0")
        for k in range(1, len(self.visits)):
            (a, ta), (b, tb) = self.visits[k - 1], self.visits[k]
            if not tb > ta:
                raise HistoryError(self.id, k, f"entry times not strictly increasing ({ta} -> {tb})")
            if (a, b) not in space.allowed:
                raise HistoryError(self.id, k, f"transition {a}->{b} not allowed")
        last_state, last_entry = self.visits[-1]
        if not self.end_time >= last_entry:
            raise HistoryError(self.id, len(self.visits), "end time precedes last entry")
        if self.end_state is not None:
            if not self.end_time > last_entry:
                raise HistoryError(self.id, len(self.visits), "zero-length final visit")
            if self.end_state not in space.states:
                raise HistoryError(self.id, len(self.visits), f"unknown state {self.end_state!r}")
            if (last_state, self.end_state) not in space.allowed:
                raise HistoryError(
                    self.id, len(self.visits), f"transition {last_state}->{self.end_state} not allowed"
                )
            if not space.is_absorbing(self.end_state):
                raise HistoryError(self.id, len(self.visits), "end state must be absorbing")
        if self.end_time > space.horizon:
            raise HistoryError(self.id, len(self.visits), "end time beyond horizon")
        for name, value in self.covariates.items():
            if value is None or (isinstance(value, float) and math.isnan(value)):
                raise HistoryError(self.id, 0, f"missing covariate {name!r}")
