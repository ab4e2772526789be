"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SmtubeError(Exception):
    """Base class for all toolkit errors."""


class SolverError(SmtubeError):
    """An LP/QP backend failed in a way the caller cannot recover from."""


class EmptyFPS(SmtubeError):
    """The feasible parameter set is empty: the inflated bound is below the
    smallest bound consistent with the data."""


class UnboundedFPS(SmtubeError):
    """The data rows do not bound the feasible parameter set; more (or more
    exciting) data is required."""

    def __init__(self, direction_index: int, sign: int, message: str | None = None):
        self.direction_index = direction_index
        self.sign = sign
        if message is None:
            sgn = "+" if sign > 0 else "-"
            message = (
                f"feasible parameter set unbounded along {sgn}e_{direction_index}; "
                "add data points until every support direction is bounded"
            )
        super().__init__(message)


class UnstableRealization(SmtubeError):
    """The identified 1-step model yields a non-Schur state matrix."""


class SingularGain(SmtubeError):
    """The static-gain denominator of a multi-step model is (numerically) zero."""


class WeightsInfeasible(SmtubeError):
    """No terminal-weight scaling satisfies the cost-domination inequality."""

    def __init__(self, min_eig: float, eigendirection, message: str | None = None):
        self.min_eig = min_eig
        self.eigendirection = eigendirection
        if message is None:
            message = (
                f"cost-domination inequality infeasible (min eigenvalue {min_eig:.3e} "
                "at the largest admissible terminal scaling); reduce the output "
                "weights for steps 1..p_bar relative to step 0 and retry"
            )
        super().__init__(message)


class EmptyTightenedSet(SmtubeError):
    """Tube supports exceed the constraint box; uncertainty too large."""

    def __init__(self, which: str, support: float, half_width: float):
        self.which = which
        self.support = support
        self.half_width = half_width
        super().__init__(
            f"tightened {which} constraint empty: tube support {support:.6g} "
            f">= half-width {half_width:.6g}"
        )


class QPInfeasible(SmtubeError):
    """The per-step tracking program is infeasible."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"tracking program infeasible at step k={step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ConfigError(SmtubeError):
    """A configuration file violates the schema."""

    def __init__(self, path: str, message: str):
        self.field_path = path
        super().__init__(f"{path}: {message}")
