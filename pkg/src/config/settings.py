"""
Berry Pose - Configuration Settings
"""
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class Settings:
    """Application settings loaded from environment variables."""

    def __init__(self):
        # Parallelism (flag > env > default)
        self.THREADS: int = int(os.getenv("BERRYPOSE_THREADS", "1"))

        # Dataset generation
        self.DEFAULT_SEED: int = int(os.getenv("BERRYPOSE_SEED", "0"))

        # Default shape params file for `estimate` (empty = published constants)
        self.PARAMS_PATH: str = os.getenv("BERRYPOSE_PARAMS", "")

        # Application Settings
        self.DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"
        self.LOG_LEVEL: str = os.getenv("LOG_LEVEL", "DEBUG" if self.DEBUG else "INFO")

    def resolve_threads(self, flag_value=None) -> int:
        """Thread count with CLI flag taking precedence over the environment."""
        threads = flag_value if flag_value is not None else self.THREADS
        if threads < 1:
            raise ValueError(f"thread count must be >= 1, got {threads}")
        return threads

    def validate(self, threads=None) -> bool:
        """Validate required configuration."""
        self.resolve_threads(threads)
        if self.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {self.LOG_LEVEL!r}")
        return True

