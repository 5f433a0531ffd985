"""Exception hierarchy shared by every malgray module.

Each error carries a short machine-readable ``code`` and the process exit
status the CLI maps it to.
"""


class MalgrayError(Exception):
    code = "Error"
    exit_code = 1

    def __str__(self):
        return self.args[0] if self.args else self.code


# bytesource
class EmptyInput(MalgrayError, ValueError):
    code, exit_code = "EmptyInput", 10


class MalformedToken(MalgrayError, ValueError):
    code, exit_code = "MalformedToken", 11

    def __init__(self, line: int, column: int, token: str = ""):
        super().__init__(f"bad token {token!r} at line {line}, column {column}")
        self.line = line
        self.column = column
        self.token = token


class AllUnknown(MalgrayError, ValueError):
    code, exit_code = "AllUnknown", 12


# imaging
class EmptyBytes(MalgrayError, ValueError):
    code, exit_code = "EmptyBytes", 13


class InvalidNormalization(MalgrayError, ValueError):
    code, exit_code = "InvalidNormalization", 14


class MalformedPgm(MalgrayError, ValueError):
    code, exit_code = "MalformedPgm", 15


# dataset
class MissingFile(MalgrayError, FileNotFoundError):
    code, exit_code = "MissingFile", 20


class UnknownClass(MalgrayError, ValueError):
    code, exit_code = "UnknownClass", 21


class DuplicateId(MalgrayError, ValueError):
    code, exit_code = "DuplicateId", 22


class CountMismatch(MalgrayError, ValueError):
    code, exit_code = "CountMismatch", 23


class EmptyPartition(MalgrayError, ValueError):
    code, exit_code = "EmptyPartition", 24


# tensor core / models
class ShapeMismatch(MalgrayError, ValueError):
    code, exit_code = "ShapeMismatch", 30


class NegativeVariance(MalgrayError, ValueError):
    code, exit_code = "NegativeVariance", 31


class NonFiniteInput(MalgrayError, ValueError):
    code, exit_code = "NonFiniteInput", 32


class LabelOutOfRange(MalgrayError, ValueError):
    code, exit_code = "LabelOutOfRange", 33


class MissingGradient(MalgrayError, ValueError):
    code, exit_code = "MissingGradient", 34


class FeatureDimMismatch(MalgrayError, ValueError):
    code, exit_code = "FeatureDimMismatch", 35


class NotATransferModel(MalgrayError, ValueError):
    code, exit_code = "NotATransferModel", 36


class BadMagic(MalgrayError, ValueError):
    code, exit_code = "BadMagic", 37


class NameMismatch(MalgrayError, ValueError):
    code, exit_code = "NameMismatch", 38

    def __init__(self, missing=(), extra=()):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        parts = []
        if self.missing:
            parts.append("missing: " + ", ".join(self.missing))
        if self.extra:
            parts.append("unexpected: " + ", ".join(self.extra))
        super().__init__("; ".join(parts) or "name mismatch")


class DescriptorError(MalgrayError, ValueError):
    code, exit_code = "DescriptorError", 39


# trainer / evaluation
class ConfigInvalid(MalgrayError, ValueError):
    code, exit_code = "ConfigInvalid", 40


class IncompatibleConfig(MalgrayError, ValueError):
    code, exit_code = "IncompatibleConfig", 41


class LengthMismatch(MalgrayError, ValueError):
    code, exit_code = "LengthMismatch", 42


class IoFailure(MalgrayError, OSError):
    code, exit_code = "IoFailure", 43


def all_errors():
    """Every concrete error class, for the CLI's exit-code table."""
    out = []
    stack = list(MalgrayError.__subclasses__())
    while stack:
        cls = stack.pop(0)
        out.append(cls)
        stack.extend(cls.__subclasses__())
    return sorted(out, key=lambda c: c.exit_code)
