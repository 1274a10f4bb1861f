"""Exception types shared across the hydrocla package."""


class HydroclaError(Exception):
    """Base class for all hydrocla errors."""


class ParseError(HydroclaError):
    """Malformed input file. Carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(HydroclaError):
    """Network or measurement data violates a structural invariant.

    Collects every violation found, not just the first one.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class SingularMatrix(HydroclaError):
    """A pivot fell below the singularity threshold during factorization."""


class RankDeficient(HydroclaError):
    """Least-squares system has effective rank below its column count."""


class NotConnected(HydroclaError):
    """The network graph is not connected."""


class RootNotFixedHead(HydroclaError):
    """The requested spanning-tree root is not a fixed-head node."""


class NotConverged(HydroclaError):
    """Iterative solver exhausted its budget before reaching tolerance."""

    def __init__(self, iterations: int, residual: float, context: str = ""):
        self.iterations = iterations
        self.residual = residual
        what = context or "solver"
        super().__init__(
            f"{what} did not converge after {iterations} iterations "
            f"(residual {residual:.3e})"
        )
