"""Exception hierarchy. Each class carries the process exit code the CLI
reports for it."""


class TTPXError(Exception):
    exit_code: int = 1

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_record(self) -> dict:
        return {
            "error": self.__class__.__name__,
            "message": self.message,
            "exit_code": self.exit_code,
            "context": self.context,
        }


class UsageError(TTPXError):
    exit_code = 2


class InputNotFoundError(TTPXError):
    exit_code = 3


class ValidationError(TTPXError):
    exit_code = 4


class TaxonomyError(ValidationError):
    pass


class NotFoundError(KeyError):
    """Raised by registry lookups; `key` is the queried identifier."""

    def __init__(self, key: str, what: str = "technique"):
        super().__init__(key)
        self.key = key
        self.what = what

    def __str__(self):
        return f"Unknown {self.what}: {self.key!r}"


class BackendError(TTPXError):
    exit_code = 5


class AugmentationError(BackendError):
    pass


class ArtifactError(TTPXError):
    exit_code = 6


class ExtractionError(TTPXError):
    exit_code = 7


class StixError(TTPXError):
    exit_code = 8


class TrainingError(TTPXError):
    exit_code = 9


EXIT_CODES = {
    "ok": 0,
    "unexpected": 1,
    "usage": UsageError.exit_code,
    "input_not_found": InputNotFoundError.exit_code,
    "validation": ValidationError.exit_code,
    "backend": BackendError.exit_code,
    "artifact": ArtifactError.exit_code,
    "extraction": ExtractionError.exit_code,
    "stix": StixError.exit_code,
    "training": TrainingError.exit_code,
}
