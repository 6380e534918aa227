"""
Exceptions raised by the lifemap library.

Every error carries the process exit code the launcher reports for it:
2 for bad or inconsistent data, 3 for pipeline failures.
"""


class LifemapError(Exception):
    exit_code = 2


class DegenerateInput(LifemapError):
    pass


class ParseError(LifemapError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class UnsupportedFormat(LifemapError):
    pass


class ChecksumMismatch(LifemapError):
    pass


class InvalidSession(LifemapError):
    pass


class AlignmentFailed(LifemapError):
    exit_code = 3

    def __init__(self, message: str, stage_log=None):
        super().__init__(message)
        self.stage_log = stage_log or []


class FineRegistrationFailed(LifemapError):
    exit_code = 3


class GridMismatch(LifemapError):
    pass


class StoreExists(LifemapError):
    pass


class NoSuchSession(LifemapError):
    pass


class StoreLocked(LifemapError):
    exit_code = 3


class StoreCorrupt(LifemapError):
    pass


class UnknownObject(LifemapError):
    pass
