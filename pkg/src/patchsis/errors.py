"""Exception hierarchy.

Validation problems (bad input) and solver problems (numerical failure) are
kept in separate branches so the CLI can map them to distinct exit codes.
"""


class PatchsisError(Exception):
    """Base class for every error raised by this package."""


# -- input validation --------------------------------------------------------

class ValidationError(PatchsisError, ValueError):
    """Model or configuration input violates a structural assumption."""


class DimensionMismatch(ValidationError):
    pass


class NonpositiveRate(ValidationError):
    def __init__(self, message, patch=None):
        super().__init__(message)
        self.patch = patch


class InvalidAdjacency(ValidationError):
    pass


class SymmetryViolation(InvalidAdjacency):
    def __init__(self, i, j, a_ij, a_ji):
        super().__init__(
            f"adjacency is not symmetric: a[{i}][{j}]={a_ij!r} but a[{j}][{i}]={a_ji!r}"
        )
        self.pair = (i, j)


class NotIrreducible(InvalidAdjacency):
    def __init__(self, component):
        super().__init__(
            "adjacency is not irreducible: patches "
            f"{sorted(component)} are disconnected from the rest"
        )
        self.component = frozenset(component)


class UnequalDiffusion(ValidationError):
    """The equal-diffusion reduction was requested for a model with nu_s != nu_i."""


class ParseError(ValidationError):
    def __init__(self, message, line=None, column=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


# -- numerical failures ------------------------------------------------------

class SolverError(PatchsisError, RuntimeError):
    """A numerical routine failed to produce an answer."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ConvergenceFailure(SolverError):
    pass


class NoConvergence(SolverError):
    pass


class SingularV(SolverError):
    pass


class RankDeficiency(SolverError):
    pass


class StepSizeUnderflow(SolverError):
    pass


class SubcriticalModel(SolverError):
    """An endemic equilibrium was requested but R0 <= 1."""


class NotCritical(SolverError):
    pass


class InsufficientData(SolverError):
    pass


class GridOutOfRange(PatchsisError, ValueError):
    pass


class Absorbed(PatchsisError):
    """The jump process has total rate zero and can never move again."""
