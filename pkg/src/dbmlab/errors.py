"""Exception hierarchy shared by all dbmlab modules."""


class DbmLabError(Exception):
    """Base class for every error raised by dbmlab."""


class SingularEvaluationError(DbmLabError, ValueError):
    pass


class MassLossError(DbmLabError, ValueError):
    def __init__(self, deficit):
        self.deficit = float(deficit)
        super().__init__(f"grid truncates mass: deficit {self.deficit:.3e} exceeds 1e-6")


class InvalidTransformError(DbmLabError, ValueError):
    pass


class FlowSolverError(DbmLabError, RuntimeError):
    def __init__(self, msg, z=None, residual=None):
        self.z = z
        self.residual = residual
        super().__init__(msg)


class BranchLossError(FlowSolverError):
    pass


class DensityFloorError(DbmLabError, RuntimeError):
    def __init__(self, msg, index=None, time=None):
        self.index = index
        self.time = time
        super().__init__(msg)


class CollisionError(DbmLabError, RuntimeError):
    def __init__(self, pair, time=None):
        self.pair = tuple(int(p) for p in pair)
        self.time = time
        where = "" if time is None else f" at t={time:.6g}"
        super().__init__(f"particles {self.pair} collided{where}; ordering unrecoverable")


class ContainmentError(DbmLabError, RuntimeError):
    pass


class StepSizeError(DbmLabError, ValueError):
    pass


class SpecError(DbmLabError, ValueError):
    pass


class AuxConstructionError(DbmLabError, ValueError):
    pass


class InterpolationOrderError(DbmLabError, ValueError):
    def __init__(self, index):
        self.index = int(index)
        super().__init__(f"reference points not monotone at exterior index {self.index}")


class InsufficientDataError(DbmLabError, ValueError):
    pass


class LabelingError(DbmLabError, ValueError):
    pass


class PreconditionError(DbmLabError, ValueError):
    pass


class ContractError(DbmLabError, ValueError):
    pass


class DomainError(DbmLabError, ValueError):
    pass


class IntegrityError(DbmLabError, RuntimeError):
    pass


class ConfigValidationError(DbmLabError, ValueError):
    def __init__(self, errors):
        # errors: list of (field path, message)
        self.errors = list(errors)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.errors)
        super().__init__(f"invalid config: {lines}")
