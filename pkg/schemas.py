import hashlib
import json
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

# Esquemas para hiperparámetros de clasificadores base
class KnnParams(BaseModel):
    k: int = Field(5, ge=1, description="Número de vecinos (impar recomendado)")
    weighting: Literal["uniform", "inverse_distance"] = Field("uniform", description="Ponderación del voto")
    standardize: bool = Field(False, description="Estandarizar atributos con la media/desviación de entrenamiento")

    class Config:
        extra = "forbid"

class GnbParams(BaseModel):
    var_smoothing: float = Field(1e-9, gt=0, description="Factor del piso de varianza")

    class Config:
        extra = "forbid"

class TreeParams(BaseModel):
    max_depth: Optional[int] = Field(10, ge=1, description="Profundidad máxima (None = ilimitada)")
    min_leaf: int = Field(2, ge=1, description="Mínimo de instancias por hoja")

    class Config:
        extra = "forbid"

class SvmParams(BaseModel):
    regularization: float = Field(1e-2, gt=0, description="Lambda de la regularización L2")
    epochs: int = Field(200, ge=1, description="Épocas de descenso por subgradiente")
    batch_size: int = Field(32, ge=1, description="Tamaño del mini-lote")
    seed: int = Field(0, ge=0, lt=2**64, description="Semilla del barajado por época")

    class Config:
        extra = "forbid"

class ForestParams(BaseModel):
    n_trees: int = Field(100, ge=1, description="Número de árboles")
    bootstrap: bool = Field(True, description="Réplica bootstrap por árbol")
    max_features: Optional[int] = Field(None, ge=1, description="Atributos por división (None = ⌈√p⌉)")
    tree: TreeParams = Field(default_factory=TreeParams)
    seed: int = Field(0, ge=0, lt=2**64)

    class Config:
        extra = "forbid"

# Esquemas para ensambles
class LearnerSpec(BaseModel):
    kind: str = Field(..., description="Identificador del aprendiz (knn, gnb, decision_tree, svm, ...)")
    params: Dict = Field(default_factory=dict, description="Hiperparámetros del aprendiz")
    name: Optional[str] = Field(None, description="Nombre del modelo en los reportes")

    class Config:
        extra = "forbid"

    @property
    def model_id(self) -> str:
        return self.name or self.kind

class CbrParams(BaseModel):
    regressor: Literal["ols", "tree"] = Field("ols", description="Regresor interno")
    ridge: float = Field(1e-8, ge=0, description="Amortiguación en la diagonal del sistema normal")
    tree: TreeParams = Field(default_factory=TreeParams)

    class Config:
        extra = "forbid"

class BaggingParams(BaseModel):
    n_rounds: int = Field(10, ge=1, description="Número de réplicas bootstrap")
    inner: LearnerSpec = Field(default_factory=lambda: LearnerSpec(kind="knn"))
    replicate_identity: bool = Field(False, description="Gancho de prueba: réplica = entrenamiento")
    seed: int = Field(0, ge=0, lt=2**64)

    class Config:
        extra = "forbid"

class EnsembleSpec(BaseModel):
    name: str = Field("custom_ensemble", description="Identificador del pipeline")
    stage1: List[LearnerSpec] = Field(..., description="Aprendices de la etapa 1")
    combine: Literal["average_score", "majority_vote"] = Field("average_score")
    stage2: Optional[LearnerSpec] = Field(None, description="Meta-aprendiz (None = ensamble plano)")
    meta_input: Literal["scores_only", "features_plus_scores"] = Field("features_plus_scores")
    meta_insample: bool = Field(False, description="Puntajes de etapa 1 dentro de muestra")
    internal_folds: int = Field(5, ge=2, description="Pliegues internos fuera de pliegue")
    seed: int = Field(0, ge=0, lt=2**64)

    class Config:
        extra = "forbid"

    @field_validator("stage1")
    @classmethod
    def stage1_not_empty(cls, value: List[LearnerSpec]) -> List[LearnerSpec]:
        if not value:
            raise ValueError("stage1 no puede estar vacío")
        return value

    @property
    def model_id(self) -> str:
        return self.name

# Esquemas para particiones y remuestreo
class SplitPlan(BaseModel):
    kind: Literal["holdout", "kfold"] = Field("kfold")
    train_fraction: float = Field(0.7, gt=0, lt=1, description="Fracción de entrenamiento (holdout)")
    k: int = Field(10, ge=2, description="Número de pliegues (kfold)")
    stratified: bool = Field(True)
    seed: int = Field(0, ge=0, lt=2**64)

    class Config:
        extra = "forbid"

class ResampleSpec(BaseModel):
    strategy: Literal["balance_to_majority", "ratio"] = Field("balance_to_majority")
    target_minority_fraction: float = Field(0.5, gt=0, le=0.5)
    observations_param: int = Field(7, ge=1, description="Repeticiones independientes del arnés")
    downsample_majority: bool = Field(False, description="Submuestrear la mayoría (análisis de sensibilidad)")
    seed: int = Field(0, ge=0, lt=2**64)

    class Config:
        extra = "forbid"

# Esquemas de validación y auditoría
class SchemaViolation(BaseModel):
    kind: Literal["MissingAttribute", "UnexpectedAttribute", "DuplicateAttribute", "WrongFeatureCount"]
    attribute: Optional[str] = None
    detail: str

class LeakageAudit(BaseModel):
    duplicate_count: int = Field(..., ge=0, description="Instancias de prueba cuyo vector aparece en entrenamiento")
    duplicate_fraction_of_test: float = Field(..., ge=0, le=1)
    shared_source_count: int = Field(0, ge=0, description="Instancias de prueba cuya fila cruda también alimenta el entrenamiento")
    natural_duplicate_count: int = Field(0, ge=0, description="Duplicados exactos sin fila cruda compartida")

# Esquemas de métricas y reportes
class ClassMetrics(BaseModel):
    accuracy: float = Field(..., ge=0, le=1)
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    f1: float = Field(..., ge=0, le=1)
    flags: List[str] = []

class ConfusionCounts(BaseModel):
    tp: int
    fp: int
    fn: int
    tn: int

class FoldResult(BaseModel):
    repetition: int
    fold: int
    n_train: int
    n_test: int
    per_class: Dict[str, ClassMetrics]
    confusion: Dict[str, ConfusionCounts]
    auc: Optional[float] = None
    leakage: LeakageAudit

class RepetitionSummary(BaseModel):
    count: int
    accuracy_mean: float
    accuracy_min: float
    accuracy_max: float

class EvaluationReport(BaseModel):
    model_id: str
    protocol: str
    dataset_origin: str
    dataset_checksum: str
    seed: int
    spec_hash: str
    per_class: Dict[str, ClassMetrics]
    auc: Optional[float] = None
    confusion: Dict[str, ConfusionCounts]
    folds: List[FoldResult] = []
    repetitions: Optional[RepetitionSummary] = None
    flags: List[str] = []
    published_accuracy: Optional[float] = Field(None, description="Exactitud publicada (%) para este modelo y conjunto")

    @model_validator(mode="after")
    def accuracy_is_class_independent(self) -> "EvaluationReport":
        accuracies = {round(block.accuracy, 12) for block in self.per_class.values()}
        if len(accuracies) > 1:
            raise ValueError("la exactitud debe coincidir entre las vistas por clase")
        return self

class ComparisonRow(BaseModel):
    model_id: str
    spec_hash: str = ""
    seed: int = 0
    class_view: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: Optional[float] = None
    published_accuracy: Optional[float] = None

class ComparisonTable(BaseModel):
    dataset_origin: str
    dataset_checksum: str
    protocol: str
    rows: List[ComparisonRow]

# Esquemas para la configuración de experimentos
class DatasetRef(BaseModel):
    path: str = Field(..., description="Ruta al archivo .arff o .csv")
    expected_checksum: Optional[str] = Field(None, description="sha256 esperado del archivo")
    has_header: bool = Field(True, description="Solo para CSV")

    class Config:
        extra = "forbid"

ModelEntry = Union[str, EnsembleSpec, LearnerSpec]

class ExperimentConfig(BaseModel):
    dataset: DatasetRef
    protocol: Literal["paper_faithful", "leakage_free"] = "paper_faithful"
    split: SplitPlan = Field(default_factory=SplitPlan)
    resample: ResampleSpec = Field(default_factory=ResampleSpec)
    balance: Literal["none", "bootstrap"] = "bootstrap"
    models: List[ModelEntry] = Field(..., min_length=1)
    seed: int = Field(..., ge=0, lt=2**64, description="Semilla maestra obligatoria")
    output_dir: str = "results"
    standardize: bool = False
    meta_insample: bool = False
    allow_checksum_mismatch: bool = False
    drop_missing: bool = False
    truthy_labels: Optional[List[str]] = None
    save_models: bool = False
    targets_file: Optional[str] = Field(None, description="Valores publicados; None = settings.TARGETS_FILE")

    class Config:
        extra = "forbid"

# Esquemas para los valores publicados (tablas comparativas)
class TargetCell(BaseModel):
    accuracy: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    f_score: Optional[float] = None
    notes: List[str] = []
    inconsistent_under_eq1: bool = False

class DatasetTargets(BaseModel):
    table: str
    instances: int
    models: Dict[str, TargetCell]
    notes: List[str] = []

class PublishedTargets(BaseModel):
    datasets: Dict[str, DatasetTargets]


def spec_hash(spec: Union[BaseModel, str]) -> str:
    """Hash corto y estable de la especificación de un modelo"""
    if isinstance(spec, BaseModel):
        payload = json.dumps(spec.model_dump(mode="json"), sort_keys=True)
    else:
        payload = json.dumps(spec)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]
