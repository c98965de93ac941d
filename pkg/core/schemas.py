from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveInt, model_validator
from typing import List, Literal, Optional

STRICT = ConfigDict(extra="forbid", frozen=True)


class NetSpec(BaseModel):
    model_config = STRICT

    input_dim: PositiveInt = Field(..., description="Feature dimension of the inputs")
    hidden_widths: List[PositiveInt] = Field(..., min_length=1, description="Featurizer layer widths")
    num_classes: int = Field(..., ge=2, description="Classifier output size")
    dropout_rate: float = Field(0.0, ge=0.0, lt=1.0, description="Dropout before the classifier")


class HyperParams(BaseModel):
    model_config = STRICT

    learning_rate: float = Field(3e-3, ge=0.0)
    batch_size: PositiveInt = 32
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    weight_decay: float = Field(0.0, ge=0.0)
    steps: PositiveInt = 400
    eval_every: PositiveInt = 25
    freeze_featurizer_steps: NonNegativeInt = 0
    seed: NonNegativeInt = 0
    optimizer: Literal["adam", "sgd"] = "adam"

    @model_validator(mode="after")
    def _check_schedule(self):
        if self.eval_every > self.steps:
            raise ValueError(f"eval_every ({self.eval_every}) exceeds steps ({self.steps})")
        if self.freeze_featurizer_steps >= self.steps:
            raise ValueError(
                f"freeze exceeds steps: freeze_featurizer_steps={self.freeze_featurizer_steps}, "
                f"steps={self.steps}"
            )
        return self


class HyperParamDistribution(BaseModel):
    """Candidate sets of the random search; each field drawn uniformly"""

    model_config = STRICT

    learning_rates: List[float] = Field(default_factory=lambda: [1e-3, 3e-3, 5e-3])
    batch_sizes: List[PositiveInt] = Field(default_factory=lambda: [32])
    dropouts: List[float] = Field(default_factory=lambda: [0.0, 0.1, 0.5])
    weight_decays: List[float] = Field(default_factory=lambda: [1e-6, 1e-4])
    steps: PositiveInt = 400
    eval_every: PositiveInt = 25
    freeze_featurizer_steps: NonNegativeInt = 50
    optimizer: Literal["adam", "sgd"] = "adam"


class SuiteSpec(BaseModel):
    model_config = STRICT

    feature_dim: int = 16
    num_classes: int = 5
    num_domains: int = 4
    samples_per_domain: PositiveInt = 300
    domain_shift: float = Field(1.0, ge=0.0, description="Rotation and translation magnitude per domain")
    anchor_scale: float = Field(0.6, gt=0.0)
    noise_std: float = Field(1.0, gt=0.0)
    aux_relatedness: List[float] = Field(default_factory=lambda: [0.9, 0.8, 0.3])
    aux_num_classes: Optional[List[int]] = None
    aux_num_domains: PositiveInt = 4
    aux_samples_per_domain: PositiveInt = 300
    pretrain_num_classes: int = 10
    pretrain_samples: PositiveInt = 3000
    pretrain_relatedness: float = Field(0.5, ge=0.0, le=1.0)
    split_fraction: float = Field(0.8, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_aux(self):
        for r in self.aux_relatedness:
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"aux relatedness must lie in [0, 1], got {r}")
        if self.aux_num_classes is not None and len(self.aux_num_classes) != len(self.aux_relatedness):
            raise ValueError("aux_num_classes must list one class count per aux task")
        return self


def _default_pretrain() -> HyperParams:
    return HyperParams(learning_rate=3e-3, batch_size=64, steps=1500, eval_every=100)


def _default_aux() -> HyperParams:
    # head warm-up keeps a random aux head from distorting the pre-trained features
    return HyperParams(learning_rate=3e-3, batch_size=32, steps=400, eval_every=50, freeze_featurizer_steps=100)


def _default_probe() -> HyperParams:
    return HyperParams(learning_rate=1e-2, batch_size=64, steps=300, eval_every=50)


class ProtocolConfig(BaseModel):
    """Everything the leave-one-domain-out protocol needs besides the suite"""

    model_config = STRICT

    hidden_widths: List[PositiveInt] = Field(default_factory=lambda: [32], min_length=1)
    pretrain: HyperParams = Field(default_factory=_default_pretrain)
    aux: HyperParams = Field(default_factory=_default_aux)
    probe: HyperParams = Field(default_factory=_default_probe)
    search: HyperParamDistribution = Field(default_factory=HyperParamDistribution)
    wise_lambda: float = Field(0.5, ge=0.0, le=1.0)
    dagger_splits: PositiveInt = 3


class GreedyReport(BaseModel):
    model_config = STRICT

    candidate_order: List[int] = Field(..., description="Run indices by descending ID-val accuracy")
    accepted: List[int] = Field(..., description="Indices kept in the soup, in acceptance order")
    final_id_val_acc: float

    @model_validator(mode="after")
    def _check_accepted(self):
        if not self.accepted or self.accepted[0] != self.candidate_order[0]:
            raise ValueError("the top candidate is always accepted")
        if not set(self.accepted) <= set(self.candidate_order):
            raise ValueError("accepted must be a subset of candidate_order")
        return self


class ResultRow(BaseModel):
    model_config = STRICT

    strategy: str
    selection: str
    test_domain: str
    ood_acc: float = Field(..., ge=0.0, le=1.0)
    id_val_acc: float = Field(..., ge=0.0, le=1.0)
    seed: int
    runs_used: int
    aux_tasks_used: List[str] = Field(default_factory=list)


class AblationPoint(BaseModel):
    model_config = STRICT

    experiment: str
    strategy: str
    x: float
    mean_ood_acc: float
    std: float
    count: int


# --- command line configs ---------------------------------------------------

class CliConfig(BaseModel):
    model_config = STRICT

    seed: NonNegativeInt = 0
    output_dir: str = "out"
    threads: PositiveInt = 1


class GenConfig(CliConfig):
    suite: SuiteSpec


class TrainConfig(CliConfig):
    mode: Literal["pretrain", "probe", "finetune", "intertrain"]
    suite: str = Field(..., description="Path of a suite written by `gen`")
    init: Optional[str] = None
    task: Optional[str] = Field(None, description="Task name; defaults to the target task")
    test_domain: Optional[str] = None
    hparams: HyperParams = Field(default_factory=HyperParams)
    hidden_widths: List[PositiveInt] = Field(default_factory=lambda: [32], min_length=1)
    chain: List[str] = Field(default_factory=list)
    robust: bool = False
    save_trajectory: bool = False


class MergeConfig(CliConfig):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    strategy: Literal["average", "uniform", "greedy", "wise", "interpolate", "interpolate3", "fusing",
                      "moving_average"]
    inputs: List[str] = Field(..., min_length=1)
    lambdas: Optional[List[float]] = None
    lam: Optional[float] = Field(None, alias="lambda")
    kappas: Optional[List[float]] = None
    pretrained: Optional[str] = None
    suite: Optional[str] = None
    task: Optional[str] = None
    test_domain: Optional[str] = None
    output: str = "merged.rata"


class AnalyzeConfig(CliConfig):
    mode: Literal["lmc", "lmc3", "diversity", "gain", "ensemble"]
    models: List[str] = Field(..., min_length=1)
    suite: str
    task: Optional[str] = None
    test_domain: str
    split: Literal["ood", "id"] = "ood"
    grid_size: int = Field(21, ge=3)
    measure: Literal["q", "ratio"] = "q"
    epsilon: float = Field(0.02, ge=0.0)


DEFAULT_STRATEGIES = [
    "vanilla", "moving_average", "wise", "soups_uniform", "soups_greedy", "ensemble",
    "inter_training", "fusing", "ratatouille_uniform", "ratatouille_greedy", "ensemble_inter_training",
]


class BenchConfig(CliConfig):
    experiment: Literal["protocol", "num_aux", "steps", "num_runs", "lmc", "diversity", "diversity_steps",
                        "mixing"] = "protocol"
    suite: Optional[str] = Field(None, description="Path of a suite written by `gen`")
    suite_spec: Optional[SuiteSpec] = Field(None, description="Generate the suite inline instead")
    protocol: ProtocolConfig = Field(default_factory=ProtocolConfig)
    strategies: List[str] = Field(default_factory=lambda: list(DEFAULT_STRATEGIES))
    runs: PositiveInt = 8
    seeds: List[NonNegativeInt] = Field(default_factory=lambda: [0])
    test_domains: Optional[List[str]] = None
    max_aux: Optional[NonNegativeInt] = None
    step_grid: List[PositiveInt] = Field(default_factory=lambda: [100, 200, 400])
    run_grid: List[PositiveInt] = Field(default_factory=lambda: [1, 2, 4, 8])
    lmc_kind: Literal["within_run", "between_aux", "between_targets", "three_way", "chain"] = "between_targets"
    split: Literal["ood", "id"] = "ood"
    grid_size: int = Field(21, ge=3)
    epsilon: float = Field(0.02, ge=0.0)
    mu_grid: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    repeats: PositiveInt = 5

    @model_validator(mode="after")
    def _check_suite_source(self):
        if (self.suite is None) == (self.suite_spec is None):
            raise ValueError("exactly one of 'suite' or 'suite_spec' must be given")
        return self
