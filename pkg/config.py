from pydantic_settings import BaseSettings
from functools import lru_cache

class Settings(BaseSettings):
    # App
    APP_NAME: str = "Scalable Functional Maps"
    LOG_LEVEL: str = "INFO"

    # Spectra
    CACHE_DIR: str = "./data/spectra"
    EIGEN_COUNT: int = 200
    WKS_COUNT: int = 128
    WKS_VARIANCE: float = 7.0

    # Blockwise reductions
    TILE_ROWS: int = 4096
    TILE_COLS: int = 4096
    THREADS: int = 0  # 0 = one worker per core
    TILE_MEMORY_MB: int = 1536  # kernel tiles held at once, across workers

    # ZoomOut
    K_INIT: int = 30
    K_FINAL: int = 130
    STEP: int = 10
    SIGMA: float = 1e-2

    # Feature optimization
    FEATURE_DIM: int = 32
    LEARNING_RATE: float = 1e-3
    OPTIM_STEPS: int = 200
    OPTIM_SIGMA: float = 0.15  # soft-map blur on unit-length feature rows

    SEED: int = 0
    BENCH_TIME_CAP: float = 600.0  # seconds per benchmark cell

    class Config:
        env_file = ".env"
        env_prefix = "FMAPS_"

@lru_cache()
def get_settings() -> Settings:
    return Settings()
