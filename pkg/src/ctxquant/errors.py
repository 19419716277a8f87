"""Exception hierarchy shared across the package."""


class CtxQuantError(Exception):
    """Base class for all ctxquant errors."""


class BadParam(CtxQuantError):
    """A configuration value is out of its legal range."""


class NonDivisible(BadParam):
    """Product mode requires the codebook count to divide the dimension."""


class DimMismatch(CtxQuantError):
    """An input vector or matrix has the wrong dimensionality."""


class ShapeMismatch(CtxQuantError):
    """Two tensors that must agree in shape do not."""


class BadCode(CtxQuantError):
    """A code has the wrong length or an entry outside [0, K)."""


class BadDistribution(CtxQuantError):
    """A row that must be a probability vector fails the simplex check."""


class NonFinite(CtxQuantError):
    """A value that must be finite is NaN or infinite."""


class TooFewSamples(CtxQuantError):
    """Not enough training samples for the requested codeword count."""


class EmptyBatch(CtxQuantError):
    """A loss was evaluated on an empty batch."""


class EmptyDoc(CtxQuantError):
    """A document with zero tokens cannot be scored."""


class EmptyRun(CtxQuantError):
    """A metric was evaluated on a run with no queries."""


class HardModeGradient(CtxQuantError):
    """Gradients are only defined for the soft (relaxed) forward pass."""


class UnknownToken(CtxQuantError):
    """A token id is not covered by the document-independent table."""


class MissingDoc(CtxQuantError):
    """A requested document id is not present in the store."""


class CorruptFile(CtxQuantError):
    """A binary file is truncated or carries a wrong magic."""


class VersionMismatch(CtxQuantError):
    """A binary file was written with an unsupported format version."""


class LengthMismatch(CtxQuantError):
    """A packed-code payload has the wrong byte length."""


class ParseError(CtxQuantError):
    """A text file line could not be parsed.

    Carries the 1-based line number of the offending line.
    """

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NotPermutation(CtxQuantError):
    """Two rankings must be permutations of the same id set."""


class MismatchedSets(CtxQuantError):
    """Two runs must cover identical query and document sets."""


class TooLarge(CtxQuantError):
    """A brute-force oracle was invoked on an instance beyond its limits."""
