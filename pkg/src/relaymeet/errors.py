"""Exception types shared across the package."""


class RelayMeetError(Exception):
    pass


class LtlSyntaxError(RelayMeetError, ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownPropositionError(RelayMeetError, ValueError):
    def __init__(self, name, offset=None):
        where = "" if offset is None else f" at offset {offset}"
        super().__init__(f"unknown proposition {name!r}{where}")
        self.name = name
        self.offset = offset


class GeometryError(RelayMeetError, ValueError):
    pass


class PlanningError(RelayMeetError):
    """A task or transition system admits no feasible plan."""


class TransferError(RelayMeetError, ValueError):
    """Precondition of a buffer operation was violated."""


class InvariantViolation(RelayMeetError):
    """Bug trap: a protocol guarantee was broken during execution."""


class BufferOverflow(InvariantViolation):
    pass


class ScenarioError(RelayMeetError, ValueError):
    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class SizeBoundExceeded(RelayMeetError):
    def __init__(self, estimate, bound):
        super().__init__(
            f"composed product has ~{estimate:.3g} states, above the bound {bound:.3g}")
        self.estimate = estimate
        self.bound = bound
