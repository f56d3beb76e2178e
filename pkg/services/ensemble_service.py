"""
Ensambles: clasificación por regresión, bagging y el apilamiento en dos etapas
(aprendices de etapa 1 + meta-aprendiz KNN), además de los ensambles planos.
"""
import logging
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.special import expit

from errors import (
    ConfigFileError, FoldTooSmallError, SingleClassDatasetError, TooFewInstancesForFoldsError,
    UnknownModelError, UnknownPipelineNameError,
)
from models import Dataset, FeatureSchema
from schemas import BaggingParams, CbrParams, EnsembleSpec, LearnerSpec, ModelEntry, SplitPlan
from services.classifiers import TrainedModel, fit_standardizer, register_model_type
from services.dataset_service import dataset_service
from services.learner_registry import learner_registry, parse_params, register_learner
from services.randomness import derive_seed
from services.resampling_service import resampling_service
from services.tree_builder import TreeArrays, build_tree

logger = logging.getLogger(__name__)

ModelSpec = Union[LearnerSpec, EnsembleSpec]

PIPELINE_NAMES = ("cm1_default", "kc2_default", "pc1_default")


# ----------------------------------------------------------------------
# Modelos
# ----------------------------------------------------------------------
@register_model_type
class CbrModel(TrainedModel):
    """Regresión de la etiqueta codificada ±1; puntaje = logística de la salida"""

    kind = "cbr"

    def __init__(self, coefficients: Optional[np.ndarray], intercept: float,
                 mean: Optional[np.ndarray], scale: Optional[np.ndarray],
                 tree: Optional[TreeArrays], **meta):
        super().__init__(**meta)
        self.coefficients = None if coefficients is None else np.asarray(coefficients, dtype=np.float64)
        self.intercept = float(intercept)
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.scale = None if scale is None else np.asarray(scale, dtype=np.float64)
        self.tree = tree

    def raw_output(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if self.tree is not None:
            return self.tree.predict(features)
        return ((features - self.mean) / self.scale) @ self.coefficients + self.intercept

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        return expit(self.raw_output(features))

    def _state(self) -> Dict[str, Any]:
        if self.tree is not None:
            return {"tree": self.tree.to_dict()}
        return {
            "coefficients": self.coefficients.tolist(),
            "intercept": self.intercept,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def _from_state(cls, state: Dict[str, Any], **meta) -> "CbrModel":
        if "tree" in state:
            return cls(None, 0.0, None, None, TreeArrays.from_dict(state["tree"]), **meta)
        return cls(state["coefficients"], state["intercept"], state["mean"], state["scale"], None, **meta)


@register_model_type
class BaggingModel(TrainedModel):
    kind = "bagging"

    def __init__(self, members: List[TrainedModel], **meta):
        super().__init__(**meta)
        self.members = list(members)

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        return np.mean([member.decision_scores(features) for member in self.members], axis=0)

    def _state(self) -> Dict[str, Any]:
        return {"members": [member.to_artifact() for member in self.members]}

    @classmethod
    def _from_state(cls, state: Dict[str, Any], **meta) -> "BaggingModel":
        return cls([TrainedModel.from_artifact(member) for member in state["members"]], **meta)


@register_model_type
class StackedModel(TrainedModel):
    """
    Etapa 1 puntúa la consulta y el meta-aprendiz decide sobre esos puntajes
    (solos o junto a los atributos originales).
    """

    kind = "stacked"

    def __init__(self, stage1: List[TrainedModel], meta_model: TrainedModel, meta_input: str,
                 fold_log: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None, **meta):
        super().__init__(**meta)
        self.stage1 = list(stage1)
        self.meta_model = meta_model
        self.meta_input = meta_input
        # (índices de ajuste, índices puntuados) por pliegue interno
        self.fold_log = fold_log or []

    def stage1_scores(self, features: np.ndarray) -> np.ndarray:
        return np.column_stack([model.decision_scores(features) for model in self.stage1])

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        return self.meta_model.decision_scores(
            _meta_inputs(features, self.stage1_scores(features), self.meta_input)
        )

    def _state(self) -> Dict[str, Any]:
        return {
            "stage1": [model.to_artifact() for model in self.stage1],
            "meta_model": self.meta_model.to_artifact(),
            "meta_input": self.meta_input,
        }

    @classmethod
    def _from_state(cls, state: Dict[str, Any], **meta) -> "StackedModel":
        return cls(
            [TrainedModel.from_artifact(model) for model in state["stage1"]],
            TrainedModel.from_artifact(state["meta_model"]),
            state["meta_input"],
            **meta,
        )


@register_model_type
class FlatEnsembleModel(TrainedModel):
    """Ensamble sin etapa 2: promedio de puntajes o fracción de votos"""

    kind = "flat_ensemble"

    def __init__(self, members: List[TrainedModel], combine: str, **meta):
        super().__init__(**meta)
        self.members = list(members)
        self.combine = combine

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        if self.combine == "average_score":
            return np.mean([member.decision_scores(features) for member in self.members], axis=0)
        # empate de votos = Defective (fracción 0.5 alcanza el umbral)
        return np.mean([member.predict(features) for member in self.members], axis=0)

    def _state(self) -> Dict[str, Any]:
        return {"members": [member.to_artifact() for member in self.members], "combine": self.combine}

    @classmethod
    def _from_state(cls, state: Dict[str, Any], **meta) -> "FlatEnsembleModel":
        members = [TrainedModel.from_artifact(member) for member in state["members"]]
        return cls(members, state["combine"], **meta)


def _meta_inputs(features: np.ndarray, scores: np.ndarray, meta_input: str) -> np.ndarray:
    if meta_input == "scores_only":
        return scores
    return np.hstack([features, scores])


# ----------------------------------------------------------------------
# Servicio
# ----------------------------------------------------------------------
class EnsembleService:
    """Servicio de ajuste de ensambles y resolución de identificadores de modelo"""

    def cbr_fit(self, train: Dataset, params: Optional[CbrParams] = None) -> CbrModel:
        """
        Clasificación por regresión: regresa la etiqueta (+1 Defective,
        −1 NonDefective) sobre los atributos y clasifica por el signo.
        """
        params = params or CbrParams()
        if not train.has_both_classes:
            raise SingleClassDatasetError(f"la clasificación por regresión necesita ambas clases en {train.origin}")

        target = np.where(train.labels, 1.0, -1.0)
        meta = dict(params=params.model_dump(), threshold=0.5, n_train=len(train), train_checksum=train.checksum)

        if params.regressor == "tree":
            tree = build_tree(train.features, target, criterion="mse",
                              max_depth=params.tree.max_depth, min_leaf=params.tree.min_leaf)
            return CbrModel(None, 0.0, None, None, tree, **meta)

        mean, scale = fit_standardizer(train.features)
        design = (train.features - mean) / scale
        intercept = float(target.mean())
        centered = target - intercept
        gram = design.T @ design + params.ridge * np.eye(design.shape[1])
        try:
            coefficients = np.linalg.solve(gram, design.T @ centered)
        except np.linalg.LinAlgError:
            logger.warning("sistema normal singular; se usa mínimos cuadrados")
            coefficients = np.linalg.lstsq(design, centered, rcond=None)[0]
        return CbrModel(coefficients, intercept, mean, scale, None, **meta)

    def bagging_fit(self, train: Dataset, params: Optional[BaggingParams] = None) -> BaggingModel:
        """Ajusta `n_rounds` aprendices internos sobre réplicas bootstrap"""
        params = params or BaggingParams()
        members = []
        for round_index in range(params.n_rounds):
            if params.replicate_identity:
                replicate = train
            else:
                replicate = resampling_service.bootstrap_sample(
                    train, len(train), derive_seed(params.seed, "replicate", round_index)
                )
            members.append(learner_registry.fit(
                params.inner, replicate, derive_seed(params.seed, "inner", round_index)
            ))
        return BaggingModel(
            members, params=params.model_dump(), threshold=members[0].threshold,
            n_train=len(train), train_checksum=train.checksum,
        )

    def stacked_fit(self, train: Dataset, spec: EnsembleSpec) -> TrainedModel:
        """
        Etapa 1 sobre todo el entrenamiento; puntajes de etapa 1 fuera de
        pliegue (o dentro de muestra con `meta_insample`); etapa 2 sobre esos
        puntajes. Sin etapa 2 el resultado es un ensamble plano.
        """
        stage1 = [
            learner_registry.fit(learner, train, derive_seed(spec.seed, "stage1", index))
            for index, learner in enumerate(spec.stage1)
        ]
        meta = dict(params=spec.model_dump(mode="json"), n_train=len(train), train_checksum=train.checksum)

        if spec.stage2 is None:
            return self._flat(stage1, spec, meta)

        fold_log: List[Tuple[np.ndarray, np.ndarray]] = []
        if spec.meta_insample:
            scores = np.column_stack([model.score_dataset(train) for model in stage1])
        else:
            scores = self._out_of_fold_scores(train, spec, fold_log)

        names = train.schema.names if spec.meta_input == "features_plus_scores" else []
        schema = FeatureSchema.from_names(
            names + [f"score_{learner.model_id}_{index}" for index, learner in enumerate(spec.stage1)],
            label_name=train.schema.label_name,
        )
        meta_train = train.with_features(_meta_inputs(train.features, scores, spec.meta_input), schema)
        meta_model = learner_registry.fit(spec.stage2, meta_train, derive_seed(spec.seed, "stage2"))
        logger.info(f"{spec.name}: {len(stage1)} aprendices de etapa 1 + meta {spec.stage2.model_id}")

        return StackedModel(stage1, meta_model, spec.meta_input, fold_log,
                            threshold=meta_model.threshold, **meta)

    def _out_of_fold_scores(self, train: Dataset, spec: EnsembleSpec,
                            fold_log: List[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        plan = SplitPlan(kind="kfold", k=spec.internal_folds, stratified=True, seed=spec.seed)
        try:
            splits = dataset_service.make_splits(train, plan)
        except TooFewInstancesForFoldsError as e:
            raise FoldTooSmallError(f"no se pueden estratificar {spec.internal_folds} pliegues internos: {e.detail}")

        scores = np.empty((len(train), len(spec.stage1)), dtype=np.float64)
        for fold_index, split in enumerate(splits):
            fit_part = train.subset(split.train)
            scored_part = train.subset(split.test)
            for index, learner in enumerate(spec.stage1):
                model = learner_registry.fit(learner, fit_part, derive_seed(spec.seed, "oof", fold_index, index))
                scores[split.test, index] = model.score_dataset(scored_part)
            fold_log.append((split.train.copy(), split.test.copy()))
        return scores

    @staticmethod
    def _flat(stage1: List[TrainedModel], spec: EnsembleSpec, meta: Dict[str, Any]) -> FlatEnsembleModel:
        if spec.combine == "average_score":
            thresholds = {model.threshold for model in stage1}
            if len(thresholds) > 1:
                raise ConfigFileError(
                    f"{spec.name}: average_score requiere umbrales iguales en la etapa 1 "
                    f"(hay {sorted(thresholds)}); use majority_vote"
                )
            threshold = thresholds.pop()
        else:
            threshold = 0.5
        return FlatEnsembleModel(stage1, spec.combine, threshold=threshold, **meta)

    # ------------------------------------------------------------------
    # Pipelines y resolución de modelos
    # ------------------------------------------------------------------
    def predefined_pipeline(self, name: str) -> EnsembleSpec:
        """Pipelines reconstruidos: CM1 (CbR + KNN) y KC2/PC1 (bagging + KNN)"""
        if name == "cm1_default":
            stage1 = [LearnerSpec(kind="cbr"), LearnerSpec(kind="knn")]
        elif name in ("kc2_default", "pc1_default"):
            stage1 = [
                LearnerSpec(kind="bagging", params={"n_rounds": 10, "inner": {"kind": "knn"}}),
                LearnerSpec(kind="knn"),
            ]
        else:
            raise UnknownPipelineNameError(f"pipeline desconocido: {name!r} (disponibles: {', '.join(PIPELINE_NAMES)})")
        return EnsembleSpec(
            name=name, stage1=stage1, combine="average_score",
            stage2=LearnerSpec(kind="knn"), meta_input="features_plus_scores",
        )

    def resolve(self, entry: ModelEntry) -> ModelSpec:
        """Convierte una entrada de configuración en una especificación"""
        if isinstance(entry, (LearnerSpec, EnsembleSpec)):
            return entry
        if entry in PIPELINE_NAMES:
            return self.predefined_pipeline(entry)
        if entry in learner_registry:
            return LearnerSpec(kind=entry)
        raise UnknownModelError(f"modelo desconocido: {entry!r}")

    def fit(self, spec: ModelSpec, train: Dataset, seed: int) -> TrainedModel:
        """Ajusta un aprendiz o un ensamble con la semilla del trabajo"""
        if isinstance(spec, EnsembleSpec):
            return self.stacked_fit(train, spec.model_copy(update={"seed": derive_seed(seed, spec.seed)}))
        return learner_registry.fit(spec, train, seed)

    def with_overrides(self, spec: ModelSpec, standardize: bool = False,
                       meta_insample: bool = False) -> ModelSpec:
        """Aplica `--standardize` a todo KNN anidado y `--meta-insample` a los apilamientos"""
        if isinstance(spec, EnsembleSpec):
            update: Dict[str, Any] = {
                "stage1": [self.with_overrides(learner, standardize) for learner in spec.stage1],
                "stage2": None if spec.stage2 is None else self.with_overrides(spec.stage2, standardize),
            }
            if meta_insample:
                update["meta_insample"] = True
            return spec.model_copy(update=update)
        if not standardize:
            return spec
        params = dict(spec.params)
        if spec.kind == "knn":
            params["standardize"] = True
        elif spec.kind == "bagging" and "inner" in params:
            inner = LearnerSpec.model_validate(params["inner"])
            params["inner"] = self.with_overrides(inner, standardize).model_dump()
        elif spec.kind == "bagging":
            params["inner"] = {"kind": "knn", "params": {"standardize": True}}
        return spec.model_copy(update={"params": params})


# Instancia singleton del servicio
ensemble_service = EnsembleService()


@register_learner("cbr")
def _fit_cbr(train: Dataset, params: Dict[str, Any], seed: int) -> TrainedModel:
    return ensemble_service.cbr_fit(train, parse_params(CbrParams, params, "cbr"))


@register_learner("bagging", seeded=True)
def _fit_bagging(train: Dataset, params: Dict[str, Any], seed: int) -> TrainedModel:
    return ensemble_service.bagging_fit(train, parse_params(BaggingParams, params, "bagging"))
