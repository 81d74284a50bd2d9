from pydantic import BaseModel, Field, model_validator
from typing import Optional
import enum

from config import get_settings

settings = get_settings()


class RefineMode(str, enum.Enum):
    HARD = "hard"
    SOFT = "soft"


# ============ Refinement ============

class ZoomOutConfig(BaseModel):
    """Spectral sizes visited are k_init, k_init + step, ... up to k_final."""

    k_init: int = settings.K_INIT
    k_final: int = settings.K_FINAL
    step: int = settings.STEP
    sigma: float = Field(default=settings.SIGMA, gt=0)
    mode: RefineMode = RefineMode.HARD
    keep_snapshots: bool = True
    normalize_features: bool = False

    @model_validator(mode="after")
    def check_sizes(self):
        if self.k_init < 2:
            raise ValueError(f"k_init must be >= 2, got {self.k_init}")
        if self.step < 1:
            raise ValueError(f"step must be >= 1, got {self.step}")
        if self.k_final < self.k_init:
            raise ValueError(f"k_final ({self.k_final}) must be >= k_init ({self.k_init})")
        return self

    @property
    def sizes(self) -> list[int]:
        return list(range(self.k_init, self.k_final + 1, self.step))


class LossWeights(BaseModel):
    w_orth: float = Field(default=1.0, ge=0)
    w_consist: float = Field(default=1e-1, ge=0)
    w_lap: float = Field(default=1e2, ge=0)


# ============ Feature optimization ============

class ConsistSchedule(BaseModel):
    """Multiplicative ramp of the consistency weight from start to end over ramp_steps."""

    start: float = Field(default=1e-4, ge=0)
    end: float = Field(default=1e-1, ge=0)
    ramp_steps: int = Field(default=50, ge=0)

    @model_validator(mode="after")
    def check_order(self):
        if self.start > self.end:
            raise ValueError(f"schedule start ({self.start}) must be <= end ({self.end})")
        return self

    def weight(self, step: int) -> float:
        if self.start == 0.0:
            # multiplicative interpolation cannot leave zero
            return self.end if self.ramp_steps == 0 or step >= self.ramp_steps else 0.0
        if self.ramp_steps == 0:
            return self.end
        t = min(step, self.ramp_steps) / self.ramp_steps
        return self.start * (self.end / self.start) ** t


class OptimConfig(BaseModel):
    steps: int = Field(default=settings.OPTIM_STEPS, ge=0)
    learning_rate: float = Field(default=settings.LEARNING_RATE, gt=0)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0)
    feature_dim: int = Field(default=settings.FEATURE_DIM, ge=1)
    consist: Optional[ConsistSchedule] = None  # default ramps over the first quarter of the steps
    w_orth: float = Field(default=1.0, ge=0)
    w_lap: float = Field(default=1e2, ge=0)
    stop_gradient_refined: bool = False
    log_every: int = Field(default=10, ge=1)
    zoomout: ZoomOutConfig = ZoomOutConfig(mode=RefineMode.SOFT, sigma=settings.OPTIM_SIGMA, normalize_features=True)

    @model_validator(mode="after")
    def check_schedule(self):
        if self.consist is None:
            self.consist = ConsistSchedule(ramp_steps=self.steps // 4)
        b1, b2 = self.betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise ValueError(f"adam betas must lie in (0, 1), got {self.betas}")
        if self.consist.ramp_steps > self.steps:
            raise ValueError(f"ramp_steps ({self.consist.ramp_steps}) exceeds steps ({self.steps})")
        if self.zoomout.mode != RefineMode.SOFT:
            raise ValueError("feature optimization needs a soft-mode ZoomOut config")
        return self


# ============ Command line jobs ============

class JobSpec(BaseModel):
    """Validated command-line job, checked before any heavy work starts."""

    subcommand: str
    inputs: dict[str, Optional[str]] = {}
    zoomout: Optional[ZoomOutConfig] = None
    optim: Optional[OptimConfig] = None
    eigen_count: int = Field(default=settings.EIGEN_COUNT, ge=2)
    seed: int = settings.SEED
    threads: int = Field(default=settings.THREADS, ge=0)

    @model_validator(mode="after")
    def check_basis_size(self):
        needed = 0
        if self.zoomout is not None:
            needed = self.zoomout.k_final
        if self.optim is not None:
            needed = max(needed, self.optim.zoomout.k_final)
        if needed > self.eigen_count:
            raise ValueError(f"k_final ({needed}) exceeds the eigenbasis size ({self.eigen_count})")
        return self
