# core/config.py
import logging
from typing import Optional

from pydantic import model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

# Setup basic logging
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
logger = logging.getLogger("sim_config")


class Settings(BaseSettings):
    """Process-level runtime settings, loaded from environment variables or .env file."""
    model_config = SettingsConfigDict(env_file='.env', env_file_encoding='utf-8', extra='ignore')

    # --- Simulation Schedule ---
    DYNAMICS_DT: float = 0.0025 # RK4 step, seconds
    CONTROL_DT: float = 0.01 # controller update period
    PERCEPTION_DT: float = 0.08 # camera / detector / tracker period

    # --- Output Settings ---
    OUTPUT_DIR: str = "runs" # Relative to project root
    FLOAT_SIG_DIGITS: int = 9
    DUMP_EVERY_N_FRAMES: int = 1

    # --- Batch Settings ---
    BATCH_WORKERS: int = 1 # >1 runs scenarios on a process pool

    LOG_LEVEL: str = "INFO"

    @model_validator(mode="after")
    def _check_rates(self) -> "Settings":
        for name, ratio in (("CONTROL_DT/DYNAMICS_DT", self.CONTROL_DT / self.DYNAMICS_DT),
                            ("PERCEPTION_DT/CONTROL_DT", self.PERCEPTION_DT / self.CONTROL_DT)):
            if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"{name} must be a positive integer, got {ratio:.6g}")
        return self

    @property
    def float_format(self) -> str:
        return f"%.{self.FLOAT_SIG_DIGITS}g"

    @property
    def control_substeps(self) -> int:
        return int(round(self.CONTROL_DT / self.DYNAMICS_DT))

    @property
    def perception_substeps(self) -> int:
        return int(round(self.PERCEPTION_DT / self.CONTROL_DT))


def configure_logging(level: Optional[str] = None) -> None:
    """Applies the configured level to the root logger (CLI may override it)."""
    logging.getLogger().setLevel((level or settings.LOG_LEVEL).upper())


try:
    settings = Settings()
    logging.getLogger().setLevel(settings.LOG_LEVEL.upper())
    logger.debug("Configuration loaded successfully.")
except Exception as e:
    logger.error(f"CRITICAL: Failed to load settings, falling back to defaults: {e}", exc_info=True)
    settings = Settings.model_construct()
