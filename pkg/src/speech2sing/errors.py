"""Exception hierarchy shared across the pipeline."""


class Speech2SingError(Exception):
    """Base class for all package errors."""


class WavFormatError(Speech2SingError):
    """The file is not a well-formed RIFF/WAVE file."""


class UnsupportedEncodingError(Speech2SingError):
    """The WAV file uses a sample encoding we do not read."""


class ParameterError(Speech2SingError, ValueError):
    """An argument lies outside its documented range."""


class SilentInputError(Speech2SingError):
    """Silence removal would leave nothing behind."""


class ShapeError(Speech2SingError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(Speech2SingError):
    """A caller broke an operation's precondition."""


class ConfigError(Speech2SingError, ValueError):
    """Unknown variant name or malformed configuration."""


class CorpusError(Speech2SingError):
    """Base class for corpus layout and annotation problems."""


class PairingError(CorpusError):
    """A read or sung recording lacks its counterpart."""


class AnnotationParseError(CorpusError):
    """A phone annotation file could not be parsed."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class AlignmentError(CorpusError):
    """Read and sung annotations do not describe the same words or phones."""


class TrainingDivergedError(Speech2SingError):
    """The training loss became non-finite."""

    def __init__(self, iteration, batch_ids, value):
        super().__init__(
            f"non-finite loss {value!r} at iteration {iteration} (batch {list(batch_ids)})"
        )
        self.iteration = iteration
        self.batch_ids = list(batch_ids)
