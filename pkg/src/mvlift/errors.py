"""Exception hierarchy.

Every error carries an ``exit_code`` used by the CLI: 2 for bad input data,
3 for numerical failures.
"""


class LiftError(Exception):
    exit_code = 2
    module = "mvlift"


class DataError(LiftError):
    exit_code = 2


class NumericalError(LiftError):
    exit_code = 3


class NonOrthonormalRotation(DataError):
    module = "core_types"

    def __init__(self, label, deviation):
        super().__init__(f"camera {label!r}: rotation deviates from orthonormal by {deviation:.3e}")
        self.label = label
        self.deviation = deviation


class DuplicateLabel(DataError):
    module = "core_types"


class JointCountMismatch(DataError):
    module = "eval"


class DegeneratePose(NumericalError):
    module = "basis_fit"


class RankDeficient(NumericalError):
    module = "basis_fit"


class DegenerateSystem(NumericalError):
    module = "lifter"


class NonPositiveScale(NumericalError):
    module = "lifter"


class AllRotationsDegenerate(NumericalError):
    module = "lifter"


class DegenerateAlignment(NumericalError):
    module = "eval"


class OutOfBounds(DataError):
    module = "heatmaps"


class DegenerateExtents(DataError):
    module = "io"


class ParseError(DataError):
    module = "io"

    def __init__(self, message, path=None, line=None, field=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line
        self.field = field


class VersionMismatch(DataError):
    module = "io"


class JointOrderUnknown(DataError):
    module = "io"
