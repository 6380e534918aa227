from lifemap.errors import (
    LifemapError,
    DegenerateInput,
    ParseError,
    UnsupportedFormat,
    ChecksumMismatch,
    InvalidSession,
    AlignmentFailed,
    FineRegistrationFailed,
    GridMismatch,
    StoreExists,
    NoSuchSession,
    StoreLocked,
    StoreCorrupt,
    UnknownObject,
)

__version__ = "0.1"

SETTINGS = dict()

COMMANDS: dict[str, "Command"] = dict()