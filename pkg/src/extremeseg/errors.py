"""Exception types raised across the package."""


class ExtremeSegError(Exception):
    """Base class for all package errors."""


class ZeroVariance(ExtremeSegError, ValueError):
    pass


class DimsTooSmall(ExtremeSegError, ValueError):
    pass


class DimsMismatch(ExtremeSegError, ValueError):
    pass


class OutOfBounds(ExtremeSegError, IndexError):
    pass


class BadMagic(ExtremeSegError, ValueError):
    pass


class HeaderMismatch(ExtremeSegError, ValueError):
    pass


class EmptySeeds(ExtremeSegError, ValueError):
    pass


class CgDivergence(ExtremeSegError, RuntimeError):
    pass


class BadArch(ExtremeSegError, ValueError):
    pass


class BadPatchDims(ExtremeSegError, ValueError):
    pass


class ShapeMismatch(ExtremeSegError, ValueError):
    pass


class NoLabeledVoxels(ExtremeSegError, ValueError):
    pass


class MissingClass(ExtremeSegError, ValueError):
    pass


class ZeroNormFeature(ExtremeSegError, ValueError):
    pass


class NoPositives(ExtremeSegError, ValueError):
    pass


class NoForeground(ExtremeSegError, ValueError):
    pass


class VolumeTooSmall(ExtremeSegError, ValueError):
    pass


class SpecInfeasible(ExtremeSegError, ValueError):
    pass


class EmptyMask(ExtremeSegError, ValueError):
    pass
