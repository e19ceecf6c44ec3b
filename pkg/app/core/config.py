import os
from typing import Optional


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() in ("1", "true", "yes")


class Settings:
    # Result cache
    DATABASE_PATH: str = os.getenv("DATABASE_PATH", "data/results.sqlite")
    RESULT_CACHE: bool = _env_bool("RESULT_CACHE", "0")

    # Transductive soft K-means
    DEFAULT_BETA: float = float(os.getenv("DEFAULT_BETA", "5.0"))
    DEFAULT_MAX_ITERS: int = int(os.getenv("DEFAULT_MAX_ITERS", "30"))
    DEFAULT_SHIFT_TOL: float = float(os.getenv("DEFAULT_SHIFT_TOL", "1e-6"))

    # Episodes
    DEFAULT_RUNS: int = int(os.getenv("DEFAULT_RUNS", "10000"))
    DEFAULT_SEED: int = int(os.getenv("DEFAULT_SEED", "0"))

    # Imbalanced protocol (convention of the realistic transductive benchmark)
    DEFAULT_Q_TOTAL: int = int(os.getenv("DEFAULT_Q_TOTAL", "75"))
    DEFAULT_DIRICHLET_A: float = float(os.getenv("DEFAULT_DIRICHLET_A", "2.0"))

    # Workers: 0 means machine parallelism
    THREADS: int = int(os.getenv("THREADS", "0"))

    # Diagnostics
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "WARNING")
    SHOW_PROGRESS: bool = _env_bool("SHOW_PROGRESS", "0")

    def resolve_threads(self, threads: Optional[int] = None) -> int:
        """Worker count for evaluations; falls back to the machine's CPU count."""
        value = self.THREADS if threads is None else threads
        if value and value > 0:
            return value
        return os.cpu_count() or 1


settings = Settings()
