"""Exception types shared across the package.

Grouped by the layer that raises them; everything derives from CovertTeamError
so callers can catch broadly. The CLI maps these onto exit codes (validation
errors -> 1, infeasibility -> 2, solver failures -> 3).
"""

from __future__ import annotations


class CovertTeamError(Exception):
    """Base class for all package errors."""


# --- model validation ---------------------------------------------------


class ValidationError(CovertTeamError):
    """A model, policy, path, or config failed structural validation."""


class RowNotStochastic(ValidationError):
    def __init__(self, state, action, total):
        super().__init__(
            f"transition row ({state!r}, {action!r}) is not a probability "
            f"distribution (sum {total!r})"
        )
        self.state = state
        self.action = action
        self.total = total


class EmptyActionSet(ValidationError):
    def __init__(self, state):
        super().__init__(f"state {state!r} has an empty action set")
        self.state = state


class UnknownState(ValidationError):
    def __init__(self, state, where=""):
        suffix = f" in {where}" if where else ""
        super().__init__(f"unknown state {state!r}{suffix}")
        self.state = state


class UnknownAction(ValidationError):
    def __init__(self, state, action):
        super().__init__(f"action {action!r} is not available at state {state!r}")
        self.state = state
        self.action = action


class NonAbsorbingTarget(ValidationError):
    def __init__(self, state):
        super().__init__(f"target state {state!r} is not absorbing")
        self.state = state


class OutOfRange(ValidationError):
    def __init__(self, what, value):
        super().__init__(f"{what} out of range: {value!r}")
        self.value = value


class NegativeEntry(ValidationError):
    def __init__(self, key, value):
        super().__init__(f"negative occupancy entry at {key!r}: {value!r}")
        self.key = key
        self.value = value


class MissingField(ValidationError):
    def __init__(self, path):
        super().__init__(f"missing required config field: {path}")
        self.path = path


class ConfigError(ValidationError):
    """Config file failed semantic validation at the given JSON path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# --- occupancy / divergence ----------------------------------------------


class InfiniteOccupancy(CovertTeamError):
    """The policy makes some deviation state recurrent; expected visit counts diverge."""


class InfeasibleUnderReference(CovertTeamError):
    """An observed transition has zero probability under the reference chain."""


class InfiniteLLR(CovertTeamError):
    """A sampled path has infinite log-likelihood ratio against the reference."""


class TruncatedPath(CovertTeamError):
    """A truncated path was passed where an absorbed path is required."""


# --- synthesis -----------------------------------------------------------


class SolverFailure(CovertTeamError):
    """The convex solver failed to return a usable solution."""


class Infeasible(CovertTeamError):
    """The team synthesis problem is infeasible at the requested reach level."""


class UpperBoundNotFeasible(Infeasible):
    """Bisection upper endpoint does not satisfy the constraint."""


class AllFailed(Infeasible):
    """Every decoy-count row in the selection sweep failed its search."""


class TargetUnattainable(CovertTeamError):
    """Requested divergence level exceeds what the agent can attain."""


class NoRoot(CovertTeamError):
    """A bracketed root search could not find a sign change."""


class InfeasibleSupervisorTask(Infeasible):
    """A supervisor reachability threshold is unattainable in the agent's MDP."""


class InnerSolverFailure(SolverFailure):
    """The inner synthesis oracle failed during reference-policy ascent."""


# --- supervisor ----------------------------------------------------------


class TooManyAgents(CovertTeamError):
    """Exact elimination is limited to small teams."""


class KappaTooLarge(CovertTeamError):
    """Fixture prior too large for the requested knapsack weights."""


class SeedMissing(ValidationError):
    """A reproducibility-sensitive command requires an explicit seed."""
