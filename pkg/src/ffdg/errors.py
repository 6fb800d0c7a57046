"""Exception hierarchy.

Every error carries a stable ``code`` (the class name) and the ``module``
that raised it, so the CLI can render a machine-readable record.
"""


class FFDGError(Exception):
    module = "ffdg"

    @property
    def code(self) -> str:
        return type(self).__name__

    def record(self) -> dict:
        return {"error": self.code, "module": self.module, "message": str(self)}


# model
class ModelError(FFDGError):
    module = "model"


class NonConservativeGenerator(ModelError):
    pass


class NegativeOffDiagonal(ModelError):
    pass


class ReducibleGenerator(ModelError):
    pass


class EmptyNegativeClass(ModelError):
    pass


class BreakpointBeyondTruncation(ModelError):
    pass


class ZeroFirstFluidRate(ModelError):
    pass


class InvalidParameter(ModelError):
    pass


class InvalidModel(ModelError):
    pass


# stencil
class StencilError(FFDGError):
    module = "stencil"


class BadStencilParams(StencilError):
    pass


class UnsupportedDegree(StencilError):
    pass


class MisalignedBreakpoint(StencilError):
    pass


class OutOfDomain(StencilError):
    pass


# dg_core
class DGError(FFDGError):
    module = "dg_core"


class IllDefinedEta(DGError):
    pass


class ConservationViolation(DGError):
    pass


class SpectrumViolation(DGError):
    pass


# operator assembly
class OperatorError(FFDGError):
    module = "operators"


class ZeroRho(OperatorError):
    pass


class SingularCensoredBlock(OperatorError):
    pass


# riccati
class RiccatiError(FFDGError):
    module = "riccati"


class NoConvergence(RiccatiError):
    pass


class NonFiniteIterate(RiccatiError):
    pass


class UnstableK(RiccatiError):
    pass


# stationary
class StationaryError(FFDGError):
    module = "stationary"


class NoStationaryReturn(StationaryError):
    pass


# montecarlo
class MonteCarloError(FFDGError):
    module = "montecarlo"


class NoRetainedPaths(MonteCarloError):
    pass


# analysis
class AnalysisError(FFDGError):
    module = "analysis"


class DegenerateSpectrum(AnalysisError):
    pass


# cli
class ConfigError(FFDGError):
    module = "cli"
