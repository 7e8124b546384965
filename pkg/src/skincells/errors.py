"""Exception types shared across the package."""


class SkinCellsError(ValueError):
    """Domain validation or file-format failure."""


class NonFiniteLossError(SkinCellsError):
    """A loss term evaluated to a non-finite value."""
