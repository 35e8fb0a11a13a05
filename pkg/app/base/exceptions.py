from enum import Enum
from typing import Dict, Optional


class ExType(str, Enum):
    INTERNAL_ERROR = "INTERNAL_ERROR"
    USAGE_ERROR = "USAGE_ERROR"

    VALIDATION_ERROR = "VALIDATION_ERROR"
    DIMENSION_MISMATCH = "DIMENSION_MISMATCH"
    MISALIGNED_INPUT = "MISALIGNED_INPUT"
    GRID_MISMATCH = "GRID_MISMATCH"

    EPISODE_FINISHED = "EPISODE_FINISHED"
    INVALID_PLAN = "INVALID_PLAN"
    EMPTY_BATCH = "EMPTY_BATCH"
    INFEASIBLE_PACKING = "INFEASIBLE_PACKING"
    FIT_FAILURE = "FIT_FAILURE"

    MIXED_MANIFEST = "MIXED_MANIFEST"
    CELL_FAILURE = "CELL_FAILURE"
    PARTIAL_FAILURE = "PARTIAL_FAILURE"


EXIT_CODES: Dict[ExType, int] = {
    ExType.USAGE_ERROR: 1,
    ExType.VALIDATION_ERROR: 2,
    ExType.MIXED_MANIFEST: 2,
    ExType.PARTIAL_FAILURE: 3,
}


class CustomException(Exception):
    code: ExType
    field: Optional[str] = None

    def __init__(self, code: ExType, detail: str, field: Optional[str] = None):
        self.code = code
        self.detail = detail
        self.field = field
        super().__init__(detail)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.code, 2)
