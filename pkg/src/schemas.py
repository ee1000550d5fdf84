"""
Pydantic schemas for configuration, manifests, prediction records and reports.
"""
from typing import List, Optional, Dict, Any, Literal

from pydantic import BaseModel, Field, PositiveInt, field_validator, model_validator

from config import (
    ADAM_LEARNING_RATE,
    DEFAULT_PRIOR_VARIANCE,
    DEFAULT_CALIBRATION_BINS,
    DEFAULT_HISTOGRAM_BINS,
    REPORT_SCHEMA_VERSION,
)

SamplerKind = Literal['sgd', 'sgld', 'bootstrap', 'mc-dropout', 'sgd-pe']
Scope = Literal['last-layer', 'full-network']
OptimizerName = Literal['plain-sgd', 'adam']
ConfidenceName = Literal['sr', 'std', 'q-entropy']

# CLI/report name -> PredictionRecord attribute
CONFIDENCE_FIELDS: Dict[str, str] = {
    'sr': 'sr',
    'std': 'std_kappa',
    'q-entropy': 'q_entropy_kappa',
}


class Architecture(BaseModel):
    """Dense network layout [d, h_1, ..., h_L, K] with rectifier hidden units."""
    layer_sizes: List[PositiveInt] = Field(default_factory=lambda: [784, 512, 20, 10])

    @field_validator('layer_sizes')
    @classmethod
    def _at_least_one_layer(cls, sizes: List[int]) -> List[int]:
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs an input width and an output width")
        if sizes[-1] < 2:
            raise ValueError("output width (number of classes) must be at least 2")
        return sizes

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def feature_dim(self) -> int:
        """Width of the penultimate layer (the representation z)."""
        return self.layer_sizes[-2]

    @property
    def num_hidden(self) -> int:
        return len(self.layer_sizes) - 2


class TrainConfig(BaseModel):
    """Mini-batch optimisation settings. learning_rate=0 is the identity run."""
    learning_rate: float = Field(default=ADAM_LEARNING_RATE, ge=0.0)
    batch_size: PositiveInt = 32
    epochs: PositiveInt = 20
    optimizer: OptimizerName = 'adam'
    seed: int = 0


class SamplerConfig(BaseModel):
    """Settings for one posterior-ensembling run; kind-specific fields are checked."""
    kind: SamplerKind = 'sgld'
    scope: Scope = 'last-layer'
    n_samples: PositiveInt = 100
    n_thinning: Optional[PositiveInt] = None
    learning_rate: float = Field(default=1e-2, ge=0.0)
    batch_size: PositiveInt = 32
    prior_variance: Optional[float] = Field(default=None, gt=0.0)
    use_prior: bool = True
    p_drop: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    n_epochs: Optional[PositiveInt] = None
    seed: int = 0
    max_workers: PositiveInt = 1

    @model_validator(mode='after')
    def _kind_specific_fields(self) -> 'SamplerConfig':
        kind = self.kind
        if kind in ('sgd', 'sgld'):
            if self.n_epochs is not None:
                raise ValueError(f"n_epochs is not used by {kind}; use n_samples and n_thinning")
            if self.prior_variance is None:
                self.prior_variance = DEFAULT_PRIOR_VARIANCE
        else:
            if self.n_thinning is not None:
                raise ValueError(f"n_thinning only applies to sgd/sgld, not {kind}")
            if self.prior_variance is not None:
                raise ValueError(f"prior_variance only applies to sgd/sgld, not {kind}")
        if kind == 'mc-dropout':
            if self.p_drop is None:
                raise ValueError("mc-dropout requires p_drop")
        elif self.p_drop is not None:
            raise ValueError(f"p_drop only applies to mc-dropout, not {kind}")
        if kind in ('bootstrap', 'mc-dropout') and self.n_epochs is None:
            raise ValueError(f"{kind} requires n_epochs")
        if kind == 'sgd-pe':
            if self.n_samples != 1:
                raise ValueError("sgd-pe is a point estimate: n_samples must be 1")
            if self.n_epochs is not None:
                raise ValueError("sgd-pe runs no training epochs")
        return self


class ClassSplit(BaseModel):
    """In-distribution / out-of-distribution partition of the class indices."""
    in_classes: List[int]
    out_classes: List[int]

    @field_validator('in_classes', 'out_classes')
    @classmethod
    def _sorted_unique(cls, classes: List[int]) -> List[int]:
        return sorted(set(int(c) for c in classes))

    @classmethod
    def from_in_classes(cls, in_classes: List[int], num_classes: int) -> 'ClassSplit':
        chosen = set(in_classes)
        return cls(in_classes=sorted(chosen), out_classes=[k for k in range(num_classes) if k not in chosen])

    @classmethod
    def first_half(cls, num_classes: int) -> 'ClassSplit':
        return cls.from_in_classes(list(range(num_classes // 2)), num_classes)


class DataConfig(BaseModel):
    """IDX file names (relative to the data directory) and the optional OOD split."""
    train_images: str = 'train-images-idx3-ubyte.gz'
    train_labels: str = 'train-labels-idx1-ubyte.gz'
    test_images: str = 't10k-images-idx3-ubyte.gz'
    test_labels: str = 't10k-labels-idx1-ubyte.gz'
    num_classes: Optional[int] = Field(default=None, ge=2)
    in_classes: Optional[List[int]] = None


class EvaluateConfig(BaseModel):
    calibration_bins: PositiveInt = DEFAULT_CALIBRATION_BINS
    histogram_bins: PositiveInt = DEFAULT_HISTOGRAM_BINS
    baseline_report: Optional[str] = None
    baseline_ood_report: Optional[str] = None
    confidences: List[ConfidenceName] = Field(default_factory=lambda: ['sr', 'std', 'q-entropy'])
    include_posterior: bool = False


class RunConfig(BaseModel):
    """Everything one pipeline run needs; one JSON file per run."""
    data: DataConfig = Field(default_factory=DataConfig)
    architecture: Architecture = Field(default_factory=Architecture)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    evaluate: EvaluateConfig = Field(default_factory=EvaluateConfig)


class SweepSpec(BaseModel):
    """Hyper-parameter grid for one sampler kind/scope."""
    base: RunConfig = Field(default_factory=RunConfig)
    learning_rates: Optional[List[float]] = None
    lr_bounds: List[float] = Field(default_factory=lambda: [1e-1, 1e-3])
    lr_count: PositiveInt = 5
    spacing: Literal['log', 'linear'] = 'log'
    n_samples: List[PositiveInt] = Field(default_factory=lambda: [10, 100, 1000])
    p_drop: List[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5])
    objective: str = 'min_aurc'
    max_workers: PositiveInt = 1

    @model_validator(mode='after')
    def _nonempty_grid(self) -> 'SweepSpec':
        if self.base.sampler.kind == 'sgd-pe':
            raise ValueError("sgd-pe has no hyper-parameters to sweep")
        if self.learning_rates is not None and not self.learning_rates:
            raise ValueError("learning_rates grid is empty")
        if self.learning_rates is None and (len(self.lr_bounds) != 2 or min(self.lr_bounds) <= 0):
            raise ValueError("lr_bounds must be two positive values")
        if not self.n_samples:
            raise ValueError("n_samples grid is empty")
        if self.base.sampler.kind == 'mc-dropout' and not self.p_drop:
            raise ValueError("p_drop grid is empty")
        if self.objective not in SWEEP_OBJECTIVES:
            raise ValueError(f"objective must be one of {sorted(SWEEP_OBJECTIVES)}")
        return self


# Sweep objective -> True when larger is better
SWEEP_OBJECTIVES: Dict[str, bool] = {
    'min_aurc': False,
    'aurc_sr': False,
    'aurc_std': False,
    'aurc_q-entropy': False,
    'ece': False,
    'accuracy': True,
}


class RunManifest(BaseModel):
    """Provenance of one stage run; manifest_hash covers everything but timestamps and outputs."""
    stage: str
    config: Dict[str, Any] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    parents: List[str] = Field(default_factory=list)
    versions: Dict[str, Any] = Field(default_factory=dict)
    created_at: Optional[str] = None
    outputs: Dict[str, str] = Field(default_factory=dict)
    manifest_hash: str = ''


class PredictionRecord(BaseModel):
    """Per-example prediction: f(x), true label, posterior mean and three confidence scores."""
    index: int
    label: int
    predicted: int
    posterior: List[float]
    sr: float
    std_kappa: float
    q_entropy_kappa: float
    single_member: bool = False

    @property
    def correct(self) -> bool:
        return self.label == self.predicted


class RiskCoveragePoint(BaseModel):
    threshold: float
    coverage: float
    selective_risk: float


class CalibrationBin(BaseModel):
    lower: float
    upper: float
    count: int
    accuracy: float
    confidence: float


class CalibrationReport(BaseModel):
    bins: List[CalibrationBin]
    ece: float
    mce: float
    m: int


class HistogramReport(BaseModel):
    """Confidence histogram split by correctly / incorrectly classified points."""
    confidence: str
    edges: List[float]
    correct: List[int]
    incorrect: List[int]


class OODReport(BaseModel):
    auroc: float
    aupr_in: float
    aupr_out: float
    n_in: int
    n_out: int
    confidence: str


class TrainReport(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    manifest_hash: str
    final_train_loss: float
    train_accuracy: float
    test_accuracy: Optional[float] = None
    epoch_losses: List[float] = Field(default_factory=list)


class MetricReport(BaseModel):
    """Output of the evaluate stage."""
    schema_version: int = REPORT_SCHEMA_VERSION
    manifest_hash: str
    kind: str
    scope: str
    n_members: int
    single_member: bool
    n_test: int
    accuracy: float
    aurc: Dict[str, Optional[float]]
    min_aurc: float
    best_confidence: str
    aurc_ratio: Optional[float] = None
    baseline_manifest_hash: Optional[str] = None
    calibration: CalibrationReport


class OODSummary(BaseModel):
    """Output of the ood stage: one OODReport per confidence function plus max/increase columns."""
    schema_version: int = REPORT_SCHEMA_VERSION
    manifest_hash: str
    kind: str
    scope: str
    in_classes: List[int]
    out_classes: List[int]
    reports: Dict[str, OODReport]
    max_auroc: float
    max_aupr_in: float
    max_aupr_out: float
    increase: Optional[Dict[str, float]] = None
    baseline_manifest_hash: Optional[str] = None


class SweepRow(BaseModel):
    learning_rate: float
    n_samples: int
    p_drop: Optional[float] = None
    status: Literal['ok', 'diverged', 'failed'] = 'ok'
    objective: Optional[float] = None
    report_path: Optional[str] = None
    error: Optional[str] = None


class SweepSummary(BaseModel):
    """Sweep output: rows ranked by the objective, best first; failed points last."""
    schema_version: int = REPORT_SCHEMA_VERSION
    manifest_hash: str
    kind: str
    scope: str
    objective: str
    rows: List[SweepRow]
    best: Optional[SweepRow] = None
