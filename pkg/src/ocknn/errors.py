"""Exception hierarchy shared across the package.

Every error raised by this package derives from OcknnError so callers (and
the CLI's exit-code mapping) can distinguish failure categories without
string matching.
"""


class OcknnError(Exception):
    """Base class for all errors raised by this package."""


class InputError(OcknnError, ValueError):
    """Malformed or incompatible caller input: wrong shape, dimension
    mismatch, unreadable file, empty argument."""


class DegenerateVectorError(OcknnError, ValueError):
    """A vector has no usable direction (zero norm) or no variation
    (constant / all-tied), so the requested distance is undefined."""


class ConfigurationError(OcknnError):
    """An invalid or unresolvable configuration value."""


class IntegrityError(OcknnError):
    """Stored or declared metadata disagrees with the data it describes."""


class CorruptionError(OcknnError):
    """A persisted payload fails its checksum or structural checks."""


class DatasetError(OcknnError):
    """A dataset directory violates the expected layout or counts."""


class TrainingError(OcknnError):
    """A training run could not be carried out (e.g. non-finite loss)."""
