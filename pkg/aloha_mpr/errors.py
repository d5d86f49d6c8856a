class AlohaMprError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidParameterError(AlohaMprError, ValueError):
    pass


class StandingAssumptionError(AlohaMprError):
    """d_i >= 0 for some user; the analytic modules need d_i < 0."""

    def __init__(self, user, value):
        self.user = user
        self.value = value
        super().__init__(f"standing assumption d_{user} < 0 violated (d_{user} = {value:.6g})")


class InstabilityError(AlohaMprError):
    pass


class InconsistentParametersError(AlohaMprError):
    pass


class DegenerateError(AlohaMprError):
    pass


class DomainError(AlohaMprError, ValueError):
    pass


class NumericalFailureError(AlohaMprError):
    def __init__(self, message, **diagnostics):
        self.diagnostics = diagnostics
        if diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in diagnostics.items() if not hasattr(v, "__len__"))
            message = f"{message} ({details})" if details else message
        super().__init__(message)


class RiemannHilbertIndexError(AlohaMprError):
    def __init__(self, chi):
        self.chi = chi
        super().__init__(f"index chi = {chi} != 0; rates outside the stability region or inconsistent parameters")
