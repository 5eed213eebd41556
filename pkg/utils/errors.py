from typing import Any


class DreamdeskError(Exception):
    """Base class for every domain error raised by dreamdesk services."""

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details = details

    def to_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = {"error": type(self).__name__, "message": self.message}
        payload.update(self.details)
        return payload

    def __reduce__(self):
        # Subclass constructors differ, so pickle from state.
        return (_restore_error, (type(self), self.message, self.details, dict(self.__dict__)))


def _restore_error(cls: type, message: str, details: dict[str, Any], state: dict[str, Any]) -> DreamdeskError:
    error = cls.__new__(cls)
    DreamdeskError.__init__(error, message, **details)
    error.__dict__.update(state)
    return error


class ArtifactError(DreamdeskError):
    def __init__(self, path: str, reason: str) -> None:
        super().__init__(f"{path}: {reason}", path=str(path), reason=reason)
        self.path = str(path)
        self.reason = reason
