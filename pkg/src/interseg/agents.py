"""Simulated annotator behavior.

Three policies choose the next interaction kind over a refinement
session: ``random`` redraws freely each step, ``sunkcost`` sticks with
the current kind with high probability before switching, and ``single``
never changes. The follow-up schedule linearly raises the probability of
extending a training batch with another refinement step as epochs pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POLICIES = ("random", "sunkcost", "single")


@dataclass
class AgentState:
    policy: str
    current: str
    allowed: tuple[str, ...]
    keep_prob: float = 0.9
    exclude_current: bool = False  # random agent: redraw strictly different kinds

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ValueError(f"unknown agent policy {self.policy!r}")
        if not self.allowed:
            raise ValueError("allowed kinds must be nonempty")
        if self.current not in self.allowed:
            raise ValueError(f"current kind {self.current!r} not in allowed {self.allowed}")
        if not 0.0 <= self.keep_prob <= 1.0:
            raise ValueError("keep_prob must be in [0, 1]")


def _uniform_kind(state: AgentState, rng: np.random.Generator) -> str:
    pool = state.allowed
    if state.exclude_current and len(pool) > 1:
        pool = tuple(k for k in pool if k != state.current)
    return pool[int(rng.integers(len(pool)))]


def next_interaction_kind(state: AgentState, rng: np.random.Generator) -> str:
    """Advance the agent one step and return the chosen kind.

    random: uniform over allowed kinds (with replacement by default);
    sunkcost: keep the current kind with `keep_prob`, otherwise redraw
    uniformly (which may land on the current kind again);
    single: always the current kind.
    """
    if state.policy == "single":
        return state.current
    if state.policy == "sunkcost":
        if rng.uniform() < state.keep_prob:
            return state.current
        state.current = _uniform_kind(state, rng)
        return state.current
    state.current = _uniform_kind(state, rng)
    return state.current


@dataclass(frozen=True)
class FollowupSchedule:
    """Linear ramp of the follow-up probability over training."""

    total_epochs: int
    p_start: float = 0.3
    p_end: float = 0.75

    def __post_init__(self) -> None:
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if not 0.0 <= self.p_start <= self.p_end <= 1.0:
            raise ValueError("need 0 <= p_start <= p_end <= 1")


def followup_probability(epoch: int, schedule: FollowupSchedule) -> float:
    """p_start at epoch 0, linearly increased to p_end at the final epoch."""
    if not 0 <= epoch <= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    frac = epoch / schedule.total_epochs
    return schedule.p_start + (schedule.p_end - schedule.p_start) * frac
