"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class VruSafetyError(Exception):
    """Base class for every error raised by this package."""


class TrajectoryParseError(VruSafetyError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class DuplicateSampleError(VruSafetyError):
    def __init__(self, path, line: int, traj_id: str, frame: int):
        self.path = str(path)
        self.line = line
        self.traj_id = traj_id
        self.frame = frame
        super().__init__(
            f"{self.path}:{line}: duplicate sample for trajectory {traj_id!r} at frame {frame}"
        )


class ClassificationError(VruSafetyError):
    def __init__(self, label: str, path=None, line: int | None = None):
        self.label = label
        where = f"{path}:{line}: " if path is not None else ""
        super().__init__(f"{where}unknown road-user label {label!r}")


class ProjectiveDegeneracyError(VruSafetyError):
    def __init__(self, traj_id: str, frame: int, w: float):
        self.traj_id = traj_id
        self.frame = frame
        super().__init__(
            f"homography maps trajectory {traj_id!r} frame {frame} to the plane at infinity (w={w:.3g})"
        )


class InsufficientDataError(VruSafetyError):
    pass


class InsufficientConflictsError(VruSafetyError):
    pass


class DegenerateDataError(VruSafetyError):
    pass


class UnknownThresholdError(VruSafetyError):
    pass


class UndefinedTestError(VruSafetyError):
    pass


class ConfigError(VruSafetyError):
    pass
