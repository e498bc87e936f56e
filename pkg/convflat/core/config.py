import os

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load .env file if it exists
load_dotenv()


class Settings(BaseSettings):
    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = Field("json", pattern="^(json|text)$")

    # Reproducibility. CONVFLAT_SEED overrides the CLI --seed default.
    SEED: int | None = None

    # Parallelism for independent runs; None means all available cores
    JOBS: int | None = Field(None, ge=1)

    # Oracle caps (parameter counts C_out * d)
    DENSE_HESSIAN_CAP: int = Field(2048, ge=1)
    FD_PARAM_CAP: int = Field(5000, ge=1)

    # Training aborts when the mini-batch loss exceeds this or is non-finite
    DIVERGENCE_LOSS_LIMIT: float = Field(1e6, gt=0)

    # Wall-clock columns; disable for byte-identical output files
    RECORD_TIMING: bool = True

    model_config = SettingsConfigDict(
        env_prefix="CONVFLAT_",
        extra="ignore",
        env_file=".env",
        env_file_encoding="utf-8",
    )

    def resolved_jobs(self) -> int:
        return self.JOBS or os.cpu_count() or 1


settings = Settings()
