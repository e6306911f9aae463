"""Exception hierarchy shared by every stage of the pipeline."""


class IIDError(Exception):
    """Base class for all pipeline errors."""


class InvalidValue(IIDError, ValueError):
    pass


class ShapeMismatch(IIDError, ValueError):
    pass


class DegenerateHistogram(IIDError, ValueError):
    pass


class InvalidLayout(IIDError, ValueError):
    pass


class UnknownInstruction(IIDError, KeyError):
    pass


class NeedsMultipleInstructions(IIDError, ValueError):
    pass


class DegenerateMask(IIDError, ValueError):
    """Fused grid carries no signal, so Otsu cannot split it.

    ``instruction`` is filled in by :func:`iid.maskgen.generate_masks` when the
    failing instruction is known.
    """

    def __init__(self, message, instruction=None):
        super().__init__(message)
        self.instruction = instruction


class ZeroInfluence(IIDError, ValueError):
    pass


class InvalidInstruction(IIDError, ValueError):
    pass


class InvalidScene(IIDError, ValueError):
    pass


class ConfigError(IIDError, ValueError):
    pass


class StepUnderflow(IIDError, ValueError):
    pass


class NotATensorFile(IIDError, ValueError):
    pass


class CorruptFile(IIDError, ValueError):
    pass


class UnsupportedDtype(IIDError, ValueError):
    pass
