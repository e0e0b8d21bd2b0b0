"""Exception types raised across the package."""


class DecklandError(Exception):
    """Base class for all errors raised by deckland."""


class InvalidParams(DecklandError, ValueError):
    pass


class PitchSingularity(DecklandError, ValueError):
    """Euler-rate transform is not invertible near |pitch| = pi/2."""


class InvalidDt(DecklandError, ValueError):
    pass


class SingularInertia(DecklandError, ValueError):
    pass


class InvalidWave(DecklandError, ValueError):
    pass


class DimensionMismatch(DecklandError, ValueError):
    pass


class InsufficientPrediction(DecklandError, ValueError):
    pass


class NoFallback(DecklandError, RuntimeError):
    """The QP failed and there is no previous trajectory to fall back on."""


class ScenarioError(DecklandError, ValueError):
    pass
