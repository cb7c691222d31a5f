"""Exception hierarchy shared by the solvers and the command line."""


class TristateError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(TristateError, ValueError):
    pass


class DomainError(TristateError, ValueError):
    pass


class ConfigError(TristateError):
    pass


class BracketError(TristateError):
    """No sign change of the characteristic residual inside the scan window."""

    def __init__(self, tau, window, g_ends):
        self.tau = tau
        self.window = window
        self.g_ends = g_ends
        super().__init__(
            f"no root for tau={tau:.6g} in window [{window[0]:.6g}, {window[1]:.6g}]"
            f" (g={g_ends[0]:.3e}, {g_ends[1]:.3e})"
        )


class FoldError(TristateError):
    """The launch-time map is multivalued (characteristics crossed)."""

    def __init__(self, z, tau, message=None):
        self.z = z
        self.tau = tau
        super().__init__(message or f"characteristic fold at z={z:.6g}, tau={tau:.6g}")


class NearFoldError(FoldError):
    pass


class SingularityError(TristateError):
    pass


class AdiabaticityError(TristateError):
    pass


class StepSizeError(TristateError):
    pass


class DivergenceError(TristateError):
    def __init__(self, last_stable, z):
        self.last_stable = last_stable
        self.z = z
        super().__init__(f"oracle diverged after slice {last_stable} (z={z:.6g})")


class AlignmentError(TristateError):
    pass
