"""
Registro de aprendices: traduce un `LearnerSpec` (tipo + hiperparámetros) en
un modelo ajustado. Los ensambles registran sus propios tipos al importarse.
"""
import logging
from typing import Any, Callable, Dict, List, Type

from pydantic import BaseModel, ValidationError

from errors import ConfigFileError, UnknownModelError
from models import Dataset
from schemas import ForestParams, GnbParams, KnnParams, LearnerSpec, SvmParams, TreeParams
from services.classifiers import TrainedModel, classifier_service

logger = logging.getLogger(__name__)

FitFunction = Callable[[Dataset, Dict[str, Any], int], TrainedModel]


class LearnerRegistry:
    """Tabla tipo → función de ajuste"""

    def __init__(self):
        self._learners: Dict[str, FitFunction] = {}
        self._seeded: Dict[str, bool] = {}

    def register(self, kind: str, fit: FitFunction, seeded: bool = False):
        self._learners[kind] = fit
        self._seeded[kind] = seeded

    def __contains__(self, kind: str) -> bool:
        return kind in self._learners

    @property
    def kinds(self) -> List[str]:
        return sorted(self._learners)

    def fit(self, spec: LearnerSpec, train: Dataset, seed: int) -> TrainedModel:
        """
        Ajusta el aprendiz descrito por `spec`. Los aprendices con semilla
        reciben `seed` salvo que sus parámetros ya fijen una.
        """
        fit = self._learners.get(spec.kind)
        if fit is None:
            raise UnknownModelError(f"aprendiz desconocido: {spec.kind!r} (disponibles: {', '.join(self.kinds)})")
        params = dict(spec.params)
        if self._seeded[spec.kind] and "seed" not in params:
            params["seed"] = seed
        model = fit(train, params, seed)
        logger.debug(f"{spec.model_id} ajustado sobre {len(train)} instancias")
        return model


def parse_params(schema: Type[BaseModel], params: Dict[str, Any], kind: str) -> BaseModel:
    """Valida hiperparámetros; los errores son de configuración"""
    try:
        return schema.model_validate(params)
    except ValidationError as e:
        raise ConfigFileError(f"parámetros inválidos para {kind}: {e.errors()[0]['msg']}")


learner_registry = LearnerRegistry()


def register_learner(kind: str, seeded: bool = False):
    """Decorador para registrar una función de ajuste"""
    def decorator(fit: FitFunction) -> FitFunction:
        learner_registry.register(kind, fit, seeded=seeded)
        return fit
    return decorator


@register_learner("knn")
def _fit_knn(train: Dataset, params: Dict[str, Any], seed: int) -> TrainedModel:
    return classifier_service.knn_fit(train, parse_params(KnnParams, params, "knn"))


@register_learner("gnb")
def _fit_gnb(train: Dataset, params: Dict[str, Any], seed: int) -> TrainedModel:
    return classifier_service.gnb_fit(train, parse_params(GnbParams, params, "gnb"))


@register_learner("decision_tree")
def _fit_tree(train: Dataset, params: Dict[str, Any], seed: int) -> TrainedModel:
    return classifier_service.tree_fit(train, parse_params(TreeParams, params, "decision_tree"))


@register_learner("svm", seeded=True)
def _fit_svm(train: Dataset, params: Dict[str, Any], seed: int) -> TrainedModel:
    return classifier_service.svm_fit(train, parse_params(SvmParams, params, "svm"))


@register_learner("random_forest", seeded=True)
def _fit_forest(train: Dataset, params: Dict[str, Any], seed: int) -> TrainedModel:
    return classifier_service.forest_fit(train, parse_params(ForestParams, params, "random_forest"))
