"""Exception hierarchy shared by the solver, network, training and I/O layers."""


class FracSpikeError(Exception):
    """Base class for all package errors."""


class IndexOrderError(FracSpikeError, ValueError):
    """Raised when a history index does not precede the current step."""


class DivergenceError(FracSpikeError, ArithmeticError):
    """A solver or training step produced non-finite values.

    The offending location is kept on the instance so callers (and the CLI
    error record) can report it without parsing the message.
    """

    def __init__(self, message, step=None, layer=None, epoch=None, batch=None):
        super().__init__(message)
        self.step = step
        self.layer = layer
        self.epoch = epoch
        self.batch = batch


class PrecisionError(FracSpikeError, ArithmeticError):
    """A series evaluation did not reach its tolerance within the term cap."""


class SequencingError(FracSpikeError, RuntimeError):
    """Stored forward data needed by the backward pass is missing."""


class ShapeError(FracSpikeError, ValueError):
    """Dimension or packing mismatch between arrays and a network layout."""


class FormatError(FracSpikeError, ValueError):
    """Malformed file contents (IDX, checkpoint, CSV)."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(FracSpikeError, ValueError):
    """Invalid run configuration; ``field`` is the dotted path of the bad key."""

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
