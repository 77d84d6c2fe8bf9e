"""Exception hierarchy shared across the package."""


class StagDidError(Exception):
    """Base class for every error raised by stagdid."""

    code = "StagDidError"

    def __init__(self, message: str = "", **context):
        super().__init__(message or self.code)
        self.context = context


# panel validation


class PanelError(StagDidError):
    code = "PanelError"


class DuplicateCell(PanelError):
    code = "DuplicateCell"


class UnbalancedPanel(PanelError):
    code = "UnbalancedPanel"


class NonAbsorbingTreatment(PanelError):
    """Treatment switches off again for some unit (reversal designs are unsupported)."""

    code = "NonAbsorbingTreatment"


class NotApplicable(StagDidError):
    code = "NotApplicable"


# data generation


class DegenerateScenario(StagDidError):
    """Generated panel has no never-treated units."""

    code = "DegenerateScenario"


class InvalidConfig(StagDidError):
    code = "InvalidConfig"


# estimation


class CollinearDesign(StagDidError):
    code = "CollinearDesign"


class NoConvergence(StagDidError):
    code = "NoConvergence"


class EmptyEventBin(StagDidError):
    code = "EmptyEventBin"


class EmptyControl(StagDidError):
    code = "EmptyControl"


class EmptyCohort(StagDidError):
    code = "EmptyCohort"


class UnidentifiedUnit(StagDidError):
    code = "UnidentifiedUnit"


class UnidentifiedPeriod(StagDidError):
    code = "UnidentifiedPeriod"


class NonFiniteInput(StagDidError):
    code = "NonFiniteInput"


class SingleTimingGroup(StagDidError):
    code = "SingleTimingGroup"


# harness


class EmptyPlan(StagDidError):
    code = "EmptyPlan"
