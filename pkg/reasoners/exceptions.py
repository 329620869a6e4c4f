class ReasonersError(Exception):
    pass


class ConfigError(ReasonersError):
    pass


class ValidationError(ConfigError):
    pass


class ShapeError(ReasonersError):
    pass


class DomainError(ReasonersError):
    pass


class OutOfRangeError(DomainError):
    pass


class ContractError(ReasonersError):
    pass


class NumericError(ReasonersError):
    def __init__(self, message: str, location: str = "") -> None:
        super().__init__(f"{message} (at {location})" if location else message)
        self.location = location


class DivergenceError(ReasonersError):
    def __init__(self, message: str, last_good_checkpoint: str | None = None) -> None:
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint
