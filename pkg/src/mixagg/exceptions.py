class DomainError(ValueError):
    """A mixture value Z_i^T pi is not strictly positive."""


class InfeasibleError(ValueError):
    """The constrained set {pi in simplex : Z pi >= mu} is empty."""


class PackingError(RuntimeError):
    """Greedy packing stopped with fewer than four members.

    The partial packing is available as ``.packing``.
    """

    def __init__(self, message, packing=None):
        super().__init__(message)
        self.packing = packing
