from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.config import settings


class Mode(str, Enum):
    INDUCTIVE = "inductive"
    TRANSDUCTIVE = "transductive"


class SweepParameter(str, Enum):
    BETA = "beta"
    VIEWS = "views"
    BACKBONES = "backbones"


class ImbalanceSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    q_total: int = Field(default_factory=lambda: settings.DEFAULT_Q_TOTAL, gt=0, description="Total query count")
    dirichlet_a: float = Field(default_factory=lambda: settings.DEFAULT_DIRICHLET_A, gt=0, description="Symmetric Dirichlet concentration")


class SoftKMeansConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    beta: float = Field(default_factory=lambda: settings.DEFAULT_BETA, gt=0, description="Softmax temperature")
    max_iters: int = Field(default_factory=lambda: settings.DEFAULT_MAX_ITERS, ge=0)
    shift_tol: float = Field(default_factory=lambda: settings.DEFAULT_SHIFT_TOL, ge=0, description="L2 center movement threshold")


class PipelineConfig(BaseModel):
    """Which pipeline steps run, the episode shape and the run budget."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: Mode = Mode.INDUCTIVE
    use_as: bool = Field(default=True, description="Average the views of each image")
    use_e: bool = Field(default=False, description="Concatenate features of several backbones")
    use_c: bool = Field(default=True, description="Center by the base or task mean")
    use_h: bool = Field(default=True, description="Project onto the unit hypersphere")
    ways: int = Field(default=5, ge=2)
    shots: int = Field(default=1, ge=1)
    queries: int = Field(default=15, ge=1, description="Queries per class (balanced tasks)")
    imbalance: Optional[ImbalanceSpec] = None
    beta: float = Field(default_factory=lambda: settings.DEFAULT_BETA, gt=0)
    max_iters: int = Field(default_factory=lambda: settings.DEFAULT_MAX_ITERS, ge=0)
    shift_tol: float = Field(default_factory=lambda: settings.DEFAULT_SHIFT_TOL, ge=0)
    n_runs: int = Field(default_factory=lambda: settings.DEFAULT_RUNS, ge=1)
    global_seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0, lt=2**64)
    views: Optional[int] = Field(default=None, ge=1, description="Views averaged by AS; all when unset")
    backbones: Optional[int] = Field(default=None, ge=1, description="Leading banks concatenated by E; all when unset")

    @model_validator(mode="after")
    def _check_imbalance(self) -> "PipelineConfig":
        if self.imbalance is not None and self.imbalance.q_total < self.ways:
            raise ValueError(f"q_total ({self.imbalance.q_total}) must be at least ways ({self.ways})")
        return self

    @property
    def method(self) -> str:
        if self.use_as and self.use_e:
            return "EASY"
        if self.use_as:
            return "ASY"
        if self.use_e:
            return "EY"
        return "Y"

    @property
    def transductive(self) -> bool:
        return self.mode == Mode.TRANSDUCTIVE

    @property
    def total_queries(self) -> int:
        if self.imbalance is not None:
            return self.imbalance.q_total
        return self.ways * self.queries

    def soft_kmeans(self) -> SoftKMeansConfig:
        return SoftKMeansConfig(beta=self.beta, max_iters=self.max_iters, shift_tol=self.shift_tol)


class EvalSummary(BaseModel):
    method: str
    mode: Mode
    ways: int
    shots: int
    queries: int = Field(description="Per-class queries, or the total for imbalanced tasks")
    total_queries: Optional[int] = Field(default=None, description="Queries per run over all classes")
    beta: float
    runs: int
    seed: int
    mean_accuracy: float = Field(ge=0.0, le=1.0)
    half_interval: float = Field(ge=0.0, description="1.96 * sample std / sqrt(runs)")
    interval: str = Field(default="95% normal interval of the mean over runs")
    mean_source: Optional[str] = Field(
        default=None, description="Mean used by C: base_dataset, novel_bank or task_vectors"
    )
    per_run_accuracies: Optional[List[float]] = None
    wall_time: Optional[float] = Field(default=None, description="Seconds")
    config: PipelineConfig

    def formatted(self) -> str:
        """Accuracy as printed in result tables, e.g. '84.13 ± 0.31'."""
        return f"{100 * self.mean_accuracy:.2f} ± {100 * self.half_interval:.2f}"

    def csv_row(self) -> dict:
        return {
            "method": self.method,
            "mode": self.mode.value,
            "n": self.ways,
            "k": self.shots,
            "q": self.queries,
            "beta": self.beta,
            "runs": self.runs,
            "seed": self.seed,
            "mean": self.mean_accuracy,
            "interval": self.half_interval,
            "seconds": "" if self.wall_time is None else round(self.wall_time, 3),
        }


CSV_COLUMNS = ["method", "mode", "n", "k", "q", "beta", "runs", "seed", "mean", "interval", "seconds"]


class SweepRow(BaseModel):
    parameter: SweepParameter
    value: float
    summary: EvalSummary

    def csv_row(self) -> dict:
        return {"parameter": self.parameter.value, "value": self.value, **self.summary.csv_row()}


class SyntheticSpec(BaseModel):
    """Gaussian class clusters placed on a regular simplex."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_classes: int = Field(ge=2)
    dim: int = Field(ge=1)
    images_per_class: int = Field(ge=1)
    n_views: int = Field(default=1, ge=1)
    separation: float = Field(ge=0, description="Pairwise distance between class means")
    sigma: float = Field(gt=0, description="Isotropic noise std")
    view_noise: float = Field(default=0.0, ge=0, description="Per-view jitter std")
    pin_supports_to_means: bool = False
    seed: int = Field(default=0, ge=0, lt=2**64)


# HTTP bodies

class EvaluateRequest(BaseModel):
    features: List[str] = Field(default_factory=list, description="FVB1 bank paths, one per backbone")
    base: List[str] = Field(default_factory=list, description="Base-class banks for inductive centering")
    synthetic: Optional[SyntheticSpec] = None
    synthetic_backbones: int = Field(default=1, ge=1)
    config: PipelineConfig = Field(default_factory=PipelineConfig)


class SweepRequest(EvaluateRequest):
    parameter: SweepParameter
    values: List[float] = Field(min_length=1)


class EvaluateResponse(BaseModel):
    cached: bool
    data: EvalSummary


class SweepResponse(BaseModel):
    rows: List[SweepRow]


class AblationResponse(BaseModel):
    rows: List[EvalSummary]
