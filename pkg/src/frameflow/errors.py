"""Exception hierarchy shared by all frameflow modules."""


class FrameflowError(Exception):
    """Base class for numerical and contract failures."""


class SingularFieldError(FrameflowError):
    def __init__(self, state, norm):
        self.state = state
        self.norm = norm
        super().__init__(f"vector field nearly vanishes (|S|={norm:.3e}) at {list(state)}")


class NonFiniteStateError(FrameflowError):
    pass


class BackwardUnavailableError(FrameflowError):
    pass


class DegenerateFrameError(FrameflowError):
    def __init__(self, column, norm, elapsed=None):
        self.column = column
        self.norm = norm
        self.elapsed = elapsed
        where = "" if elapsed is None else f" at elapsed={elapsed}"
        super().__init__(f"frame column {column} degenerate (relative reduced norm {norm:.3e}){where}")


class NewtonDivergenceError(FrameflowError):
    def __init__(self, residual, iterations):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"Newton failed after {iterations} iterations, last residual {residual:.3e}")


class SingularNewtonError(FrameflowError):
    def __init__(self, multiplier):
        self.multiplier = multiplier
        super().__init__(f"Newton matrix singular: monodromy has near-neutral multiplier {multiplier!r}")


class NonHyperbolicPeriodError(FrameflowError):
    pass


class UnverifiedOrbitError(FrameflowError):
    pass


class InconclusiveSplitError(FrameflowError):
    pass


class UnsupportedReorderingError(FrameflowError):
    pass


class GeometryMismatchError(FrameflowError):
    pass
