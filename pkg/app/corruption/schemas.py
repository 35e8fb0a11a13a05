from enum import Enum

from pydantic import BaseModel, Field, model_validator

MISSING = -1


class CorruptionKind(str, Enum):
    NONE = "none"
    VEHICLE_MISSING = "vehicle_missing"
    CELL_NOISE = "cell_noise"
    MASK_REGION = "mask_region"
    TOKEN_MISSING = "token_missing"
    TOKEN_NOISE = "token_noise"


SIGNAL_KINDS = {
    CorruptionKind.NONE,
    CorruptionKind.VEHICLE_MISSING,
    CorruptionKind.CELL_NOISE,
    CorruptionKind.MASK_REGION,
}
PATTERN_KINDS = {
    CorruptionKind.NONE,
    CorruptionKind.TOKEN_MISSING,
    CorruptionKind.TOKEN_NOISE,
}


class CorruptionSpec(BaseModel):
    kind: CorruptionKind = CorruptionKind.NONE
    p: float = Field(default=0.0, ge=0, le=1)
    seed: int = 0

    @property
    def active(self) -> bool:
        return self.kind != CorruptionKind.NONE and self.p > 0


class ImputationMethod(str, Enum):
    NONE = "none"
    ARTIFICIAL = "artificial"
    CONTEXT_FILL = "context_fill"


class ImputationSpec(BaseModel):
    method: ImputationMethod = ImputationMethod.NONE
    q: float = Field(default=0.0, ge=0, le=1)
    window: int = Field(default=2, ge=1)
    threshold: int = Field(default=3, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def threshold_within_window(self) -> "ImputationSpec":
        if self.threshold > 2 * self.window:
            raise ValueError(
                f"threshold {self.threshold} exceeds the 2*window={2 * self.window} "
                "neighbours available"
            )
        return self
