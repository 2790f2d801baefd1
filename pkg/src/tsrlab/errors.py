"""Exception hierarchy shared by every tsrlab module."""


class TsrLabError(Exception):
    """Base class for all errors raised by tsrlab."""


# -- grammar ---------------------------------------------------------------


class GrammarError(TsrLabError):
    pass


class LengthExceeded(GrammarError):
    pass


class ContainsUnknown(GrammarError):
    pass


class UnbalancedTag(GrammarError):
    pass


class IllegalNesting(GrammarError):
    pass


class DanglingFragment(GrammarError):
    pass


class SpanOverlap(GrammarError):
    pass


# -- teds ------------------------------------------------------------------


class EmptyInput(TsrLabError):
    pass


# -- architecture analysis -------------------------------------------------


class DegenerateOutput(TsrLabError):
    pass


class UnknownPreset(TsrLabError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


# -- micro_nn --------------------------------------------------------------


class ShapeMismatch(TsrLabError, ValueError):
    pass


class EmptySequence(TsrLabError, ValueError):
    pass


class Divergence(TsrLabError, FloatingPointError):
    pass


# -- harness ---------------------------------------------------------------


class FormatError(TsrLabError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class IoFailure(TsrLabError, OSError):
    pass


class EmptyJoin(TsrLabError):
    pass
