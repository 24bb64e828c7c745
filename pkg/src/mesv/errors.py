"""Exception types shared across the package."""


class MesvError(Exception):
    """Base class for every error raised by this package."""


class ContractError(MesvError, ValueError):
    """A documented precondition was violated by the caller."""


class DimensionError(ContractError):
    pass


class EmptyInputError(ContractError):
    pass


class LengthError(ContractError):
    """Sequence shorter than the temporal context an encoder needs."""


class ConfigError(ContractError):
    pass


class SamplingError(ContractError):
    """Corpus too small for the requested trial batch."""


class NumericError(MesvError, ArithmeticError):
    """Base for numerical failures (non-finite values, bad domains)."""


class NumericDomainError(NumericError):
    pass


class NonFiniteError(NumericError):
    pass


class DecompositionError(NumericError):
    pass


class SymmetryError(ContractError):
    pass


class DataError(MesvError):
    """Base for problems with input files and records."""


class FormatError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class ReferentialIntegrityError(DataError):
    def __init__(self, missing, what="id"):
        missing = list(missing)
        shown = ", ".join(missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        super().__init__(f"{len(missing)} unresolved {what}(s): {shown}{more}")
        self.missing = missing


class CompatibilityError(DataError):
    pass


class EmptyModelError(DataError):
    pass
