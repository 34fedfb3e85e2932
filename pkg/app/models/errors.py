"""
Error hierarchy for the pose link engine.

Input errors (bad files, unknown ids, invalid parameters) map to exit status 1
in the CLI; every other PoseLinkError is an internal invariant violation.
"""

from typing import Optional


class PoseLinkError(Exception):
    """Base class for all domain errors"""


class InputError(PoseLinkError, ValueError):
    """Raised when user-supplied input cannot be used"""


class RootUndetected(PoseLinkError):
    def __init__(self, pose_id: Optional[int] = None):
        self.pose_id = pose_id
        super().__init__(f"root keypoint (neck) not detected in pose {pose_id}")


class DegenerateSample(PoseLinkError):
    pass


class MalformedFile(InputError):
    def __init__(self, path: str, reason: str, person_index: Optional[int] = None):
        self.path = str(path)
        self.reason = reason
        self.person_index = person_index
        where = f"{self.path}" if person_index is None else f"{self.path} (person {person_index})"
        super().__init__(f"malformed file {where}: {reason}")


class DuplicateImageId(InputError):
    def __init__(self, image_id: str):
        self.image_id = image_id
        super().__init__(f"duplicate image_id: {image_id}")


class VersionMismatch(InputError):
    def __init__(self, path: str, found, expected: int):
        self.path = str(path)
        self.found = found
        self.expected = expected
        super().__init__(f"{self.path}: index format_version {found} is not supported (expected {expected})")


class FingerprintMismatch(InputError):
    def __init__(self, path: str, found: str, expected: str):
        self.path = str(path)
        self.found = found
        self.expected = expected
        super().__init__(
            f"{self.path}: index was built with config fingerprint {found[:12]}, "
            f"current config has {expected[:12]}; rebuild the index"
        )


class CorruptIndex(InputError):
    def __init__(self, path: str, offset: int, reason: str):
        self.path = str(path)
        self.offset = offset
        self.reason = reason
        super().__init__(f"corrupt index {self.path} at byte {offset}: {reason}")


class MissingQuery(InputError):
    def __init__(self, query_id: str):
        self.query_id = query_id
        super().__init__(f"no ranking available for ground-truth query: {query_id}")


class InvalidSpec(InputError):
    pass
