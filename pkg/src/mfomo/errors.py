"""Exception hierarchy shared by all solver modules."""


class MfomoError(Exception):
    pass


class StructuralError(MfomoError, ValueError):
    """Array shapes or probability invariants do not match the declared dimensions."""


class ModelError(MfomoError):
    """A game callback failed or returned something unusable."""


class ConfigurationError(MfomoError, ValueError):
    pass


class UnsupportedGameError(MfomoError):
    """The requested routine needs game structure (flags) that is absent."""


class CapExceededError(MfomoError):
    pass


class SolverInternalError(MfomoError):
    """Numerical breakdown inside the LP simplex or a should-not-happen status."""


class DivergenceError(MfomoError):
    def __init__(self, message, last_theta=None, records=None):
        super().__init__(message)
        self.last_theta = last_theta
        self.records = records or []
