"""Exception hierarchy shared by every engn module.

The CLI maps these onto process exit codes, so each family carries an
``exit_code`` attribute.
"""


class EngnError(Exception):
    exit_code = 1


# -- configuration ---------------------------------------------------------

class ConfigError(EngnError):
    exit_code = 1


class UnknownKey(ConfigError):
    pass


class UnknownRoleForVariant(ConfigError):
    pass


class MissingRole(ConfigError):
    pass


class NonPositiveRate(ConfigError):
    pass


class MissingRate(ConfigError):
    pass


class DisconnectedTopology(ConfigError):
    pass


class InvalidTopology(ConfigError):
    pass


class BudgetTooSmall(ConfigError):
    pass


# -- protocol --------------------------------------------------------------

class ProtocolError(EngnError):
    """A procedure could not run or ended in a failure outcome.

    When the failure happens mid-protocol, ``trace`` holds the messages
    exchanged so far together with the resulting world, so callers can
    keep going from there.
    """

    exit_code = 1

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class UnexpectedMessage(ProtocolError):
    pass


class AlreadyRegistered(ProtocolError):
    pass


class AuthFailed(ProtocolError):
    pass


class AdmissionRejected(ProtocolError):
    pass


class NotAttached(ProtocolError):
    pass


class ModeMismatch(ProtocolError):
    pass


class NotNeighbor(ProtocolError):
    pass


class NoFeasibleTarget(ProtocolError):
    pass


class EmptyCandidateList(ProtocolError):
    pass


class MobilityRejected(ProtocolError):
    pass


class UnknownPermanentIp(ProtocolError):
    pass


class UnknownUser(ProtocolError):
    pass


# -- simulation ------------------------------------------------------------

class SimulationError(EngnError):
    exit_code = 1


class NoProgress(SimulationError):
    exit_code = 3


class TooFewSamples(SimulationError):
    pass


# -- markov ----------------------------------------------------------------

class MarkovError(EngnError):
    exit_code = 1


class StateSpaceExceeded(MarkovError):
    exit_code = 4

    def __init__(self, cap, message=None):
        super().__init__(message or f"reachable state space exceeds cap of {cap} states")
        self.cap = cap


class NotIrreducible(MarkovError):
    pass


class NoConvergence(MarkovError):
    def __init__(self, tol, iterations, residual=None):
        super().__init__(
            f"no convergence to tol={tol:g} after {iterations} iterations"
            + (f" (residual {residual:.3g})" if residual is not None else "")
        )
        self.tol = tol
        self.iterations = iterations
        self.residual = residual


class UnknownAction(MarkovError):
    pass


class UnknownRole(MarkovError):
    pass


# -- scalability evaluation -------------------------------------------------

class ScaleEvalError(EngnError):
    exit_code = 1


class TooFewPoints(ScaleEvalError):
    pass


class NonPositiveCost(ScaleEvalError):
    pass


class UnequalBudget(ScaleEvalError):
    pass


class InvalidGrid(ScaleEvalError):
    pass


class SweepPointError(ScaleEvalError):
    """Wraps an engine failure with the population it happened at."""

    def __init__(self, population, cause):
        super().__init__(f"K={population}: {cause}")
        self.population = population
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
