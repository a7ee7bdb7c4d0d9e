"""Exception taxonomy shared across the package.

Library code raises these instead of bare ValueError/RuntimeError so the
CLI can map failure classes onto distinct exit codes.
"""


class PgdCsmaError(Exception):
    """Base class for all package errors."""


class GraphParseError(PgdCsmaError, ValueError):
    """Malformed edge-list input; message names the offending line."""


class DimensionError(PgdCsmaError, ValueError):
    """Vector or schedule length does not match the graph."""


class ContractViolationError(PgdCsmaError, ValueError):
    """Caller handed in a value that breaks a documented precondition,
    e.g. an infeasible schedule or a non-adjacent schedule pair."""


class EnumerationLimitError(PgdCsmaError, RuntimeError):
    """State-space enumeration would exceed the configured limits."""


class InapplicableError(PgdCsmaError, RuntimeError):
    """A bound or solver was asked for outside its region of validity
    (infeasible target rates, non-complete graph, s <= nu, ...)."""


class HorizonError(PgdCsmaError, RuntimeError):
    """An iterative computation ran out of budget before converging."""


class ParameterError(PgdCsmaError, ValueError):
    """Numeric parameter outside its documented domain."""


class ConfigError(PgdCsmaError, ValueError):
    """Invalid experiment configuration (unknown key, missing field, ...)."""
