"""
Clasificadores base escritos desde cero: KNN, Naïve Bayes gaussiano, árbol
CART, SVM lineal y bosque aleatorio.

Todos cumplen el mismo contrato `TrainedModel`: `decision_scores` devuelve un
puntaje finito (mayor = más defectuoso) y la etiqueta es Defective si y solo
si el puntaje alcanza el umbral del modelo.
"""
import logging
import math
from abc import ABC, abstractmethod
from typing import Any, Dict, Optional, Sequence, Tuple, Type

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit
from scipy.stats import norm

from errors import EmptyDatasetError, KTooLargeError, SingleClassDatasetError
from models import ClassLabel, Dataset
from schemas import ForestParams, GnbParams, KnnParams, SvmParams, TreeParams
from services.randomness import make_rng
from services.tree_builder import TreeArrays, build_tree

logger = logging.getLogger(__name__)

ARTIFACT_FORMAT = "defectlab-model"
ARTIFACT_VERSION = 1

# Consultas por bloque al calcular distancias KNN
KNN_CHUNK = 256

_MODEL_TYPES: Dict[str, Type["TrainedModel"]] = {}


def register_model_type(cls: Type["TrainedModel"]) -> Type["TrainedModel"]:
    """Registra una clase de modelo para poder reconstruirla desde un artefacto"""
    _MODEL_TYPES[cls.kind] = cls
    return cls


class TrainedModel(ABC):
    """Modelo ajustado e inmutable; seguro de compartir entre evaluadores"""

    kind: str = ""

    def __init__(self, params: Dict[str, Any], threshold: float, n_train: int, train_checksum: str):
        self.params = dict(params)
        self.threshold = float(threshold)
        self.n_train = int(n_train)
        self.train_checksum = train_checksum

    @abstractmethod
    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        """Puntaje por fila de una matriz n×p"""

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.decision_scores(features) >= self.threshold

    def predict_one(self, features: Sequence[float]) -> Tuple[ClassLabel, float]:
        score = float(self.decision_scores(np.asarray(features, dtype=np.float64).reshape(1, -1))[0])
        return ClassLabel.from_bool(score >= self.threshold), score

    def score_dataset(self, dataset: Dataset) -> np.ndarray:
        return self.decision_scores(dataset.features)

    # ------------------------------------------------------------------
    # Artefactos
    # ------------------------------------------------------------------
    @abstractmethod
    def _state(self) -> Dict[str, Any]:
        """Arreglos aprendidos en forma serializable"""

    @classmethod
    @abstractmethod
    def _from_state(cls, state: Dict[str, Any], **meta) -> "TrainedModel":
        """Reconstruye el modelo desde `_state`"""

    def to_artifact(self) -> Dict[str, Any]:
        return {
            "format": ARTIFACT_FORMAT,
            "version": ARTIFACT_VERSION,
            "kind": self.kind,
            "params": self.params,
            "threshold": self.threshold,
            "n_train": self.n_train,
            "train_checksum": self.train_checksum,
            "state": self._state(),
        }

    @staticmethod
    def from_artifact(document: Dict[str, Any]) -> "TrainedModel":
        if document.get("format") != ARTIFACT_FORMAT or document.get("version") != ARTIFACT_VERSION:
            raise ValueError(f"artefacto no reconocido: {document.get('format')} v{document.get('version')}")
        model_type = _MODEL_TYPES.get(document["kind"])
        if model_type is None:
            raise ValueError(f"tipo de modelo desconocido en el artefacto: {document['kind']}")
        return model_type._from_state(
            document["state"],
            params=document["params"],
            threshold=document["threshold"],
            n_train=document["n_train"],
            train_checksum=document["train_checksum"],
        )


def fit_standardizer(features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Media y desviación por columna; desviación 0 se reemplaza por 1"""
    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def _require_rows(train: Dataset):
    if len(train) == 0:
        raise EmptyDatasetError(f"{train.origin}: conjunto de entrenamiento vacío")


def _require_both_classes(train: Dataset, learner: str):
    _require_rows(train)
    if not train.has_both_classes:
        raise SingleClassDatasetError(f"{learner} necesita ambas clases en {train.origin}")


# ----------------------------------------------------------------------
# KNN
# ----------------------------------------------------------------------
@register_model_type
class KnnModel(TrainedModel):
    """
    Vecinos más cercanos por distancia euclidiana.

    Puntaje = fracción (ponderada si corresponde) de vecinos Defective. Los
    empates de votos favorecen a la clase con menor distancia acumulada y,
    si persisten, a NonDefective.
    """

    kind = "knn"

    def __init__(self, features: np.ndarray, labels: np.ndarray, mean: Optional[np.ndarray],
                 scale: Optional[np.ndarray], **meta):
        super().__init__(**meta)
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.bool_)
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.scale = None if scale is None else np.asarray(scale, dtype=np.float64)
        self.k = int(self.params["k"])
        self.weighting = self.params["weighting"]

    def _transform(self, features: np.ndarray) -> np.ndarray:
        if self.mean is None:
            return features
        return (features - self.mean) / self.scale

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        queries = self._transform(np.asarray(features, dtype=np.float64))
        scores = np.empty(queries.shape[0], dtype=np.float64)
        for start in range(0, queries.shape[0], KNN_CHUNK):
            block = queries[start:start + KNN_CHUNK]
            # diferencias directas: sin la expansión ‖a‖²+‖b‖²−2ab
            distances = cdist(block, self.features, metric="euclidean")
            scores[start:start + KNN_CHUNK] = self._vote(distances)
        return scores

    def _vote(self, distances: np.ndarray) -> np.ndarray:
        """
        Puntaje de cada fila de una matriz de distancias consulta × entrenamiento.

        Los k vecinos son las filas a distancia menor que la k-ésima más los
        empates en esa distancia necesarios para completar k, tomando primero
        los NonDefective. Solo se usa una partición por fila, sin ordenar.
        """
        k = self.k
        labels = self.labels[None, :]
        kth = np.partition(distances, k - 1, axis=1)[:, k - 1]
        closer = distances < kth[:, None]
        boundary = distances == kth[:, None]

        remaining = k - closer.sum(axis=1)
        take_non_defective = np.minimum(remaining, (boundary & ~labels).sum(axis=1))
        take_defective = remaining - take_non_defective
        closer_defective = closer & labels
        closer_non_defective = closer & ~labels

        if self.weighting == "inverse_distance":
            zero = distances == 0
            # una distancia nula recibe todo el peso
            exact_defective = (closer_defective & zero).sum(axis=1) + np.where(kth == 0, take_defective, 0)
            exact_non_defective = (closer_non_defective & zero).sum(axis=1) + np.where(kth == 0, take_non_defective, 0)
            inverse = 1.0 / np.where(zero, 1.0, distances)
            inverse_kth = 1.0 / np.where(kth == 0, 1.0, kth)
            has_exact = zero.any(axis=1)
            defective_weight = np.where(
                has_exact, exact_defective,
                np.where(closer_defective, inverse, 0.0).sum(axis=1) + take_defective * inverse_kth)
            non_defective_weight = np.where(
                has_exact, exact_non_defective,
                np.where(closer_non_defective, inverse, 0.0).sum(axis=1) + take_non_defective * inverse_kth)
        else:
            defective_weight = (closer_defective.sum(axis=1) + take_defective).astype(np.float64)
            non_defective_weight = (closer_non_defective.sum(axis=1) + take_non_defective).astype(np.float64)
        fraction = defective_weight / (defective_weight + non_defective_weight)

        defective_distance = np.where(closer_defective, distances, 0.0).sum(axis=1) + take_defective * kth
        non_defective_distance = np.where(closer_non_defective, distances, 0.0).sum(axis=1) + take_non_defective * kth
        # un empate resuelto a favor de NonDefective queda justo bajo el umbral 0.5
        tie_score = np.where(defective_distance < non_defective_distance, 0.5, np.nextafter(0.5, 0.0))
        return np.where(defective_weight == non_defective_weight, tie_score, fraction)

    def _state(self) -> Dict[str, Any]:
        return {
            "features": self.features.tolist(),
            "labels": self.labels.tolist(),
            "mean": None if self.mean is None else self.mean.tolist(),
            "scale": None if self.scale is None else self.scale.tolist(),
        }

    @classmethod
    def _from_state(cls, state: Dict[str, Any], **meta) -> "KnnModel":
        return cls(state["features"], state["labels"], state["mean"], state["scale"], **meta)


# ----------------------------------------------------------------------
# Naïve Bayes gaussiano
# ----------------------------------------------------------------------
@register_model_type
class GaussianNbModel(TrainedModel):
    kind = "gnb"

    def __init__(self, means: np.ndarray, variances: np.ndarray, log_priors: np.ndarray, **meta):
        super().__init__(**meta)
        # fila 0 = NonDefective, fila 1 = Defective
        self.means = np.asarray(means, dtype=np.float64)
        self.variances = np.asarray(variances, dtype=np.float64)
        self.log_priors = np.asarray(log_priors, dtype=np.float64)

    def _joint_log_likelihood(self, features: np.ndarray) -> np.ndarray:
        densities = norm.logpdf(features[:, None, :], loc=self.means[None, :, :],
                                scale=np.sqrt(self.variances)[None, :, :])
        return self.log_priors[None, :] + densities.sum(axis=2)

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        jll = self._joint_log_likelihood(np.asarray(features, dtype=np.float64))
        return expit(jll[:, 1] - jll[:, 0])

    def _state(self) -> Dict[str, Any]:
        return {
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "log_priors": self.log_priors.tolist(),
        }

    @classmethod
    def _from_state(cls, state: Dict[str, Any], **meta) -> "GaussianNbModel":
        return cls(state["means"], state["variances"], state["log_priors"], **meta)


# ----------------------------------------------------------------------
# Árbol de decisión y bosque aleatorio
# ----------------------------------------------------------------------
@register_model_type
class DecisionTreeModel(TrainedModel):
    """Árbol CART; el puntaje es la fracción suavizada de Defective en la hoja"""

    kind = "decision_tree"

    def __init__(self, tree: TreeArrays, **meta):
        super().__init__(**meta)
        self.tree = tree

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        return self.tree.predict(np.asarray(features, dtype=np.float64))

    def _state(self) -> Dict[str, Any]:
        return {"tree": self.tree.to_dict()}

    @classmethod
    def _from_state(cls, state: Dict[str, Any], **meta) -> "DecisionTreeModel":
        return cls(TreeArrays.from_dict(state["tree"]), **meta)


@register_model_type
class RandomForestModel(TrainedModel):
    kind = "random_forest"

    def __init__(self, trees: Sequence[TreeArrays], **meta):
        super().__init__(**meta)
        self.trees = list(trees)

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        return np.mean([tree.predict(features) for tree in self.trees], axis=0)

    def _state(self) -> Dict[str, Any]:
        return {"trees": [tree.to_dict() for tree in self.trees]}

    @classmethod
    def _from_state(cls, state: Dict[str, Any], **meta) -> "RandomForestModel":
        return cls([TreeArrays.from_dict(tree) for tree in state["trees"]], **meta)

    @classmethod
    def from_trees(cls, trees: Sequence[TreeArrays], n_train: int = 0,
                   train_checksum: str = "") -> "RandomForestModel":
        """Bosque armado a mano a partir de árboles ya construidos"""
        return cls(trees, params={"n_trees": len(trees)}, threshold=0.5,
                   n_train=n_train, train_checksum=train_checksum)


# ----------------------------------------------------------------------
# SVM lineal
# ----------------------------------------------------------------------
@register_model_type
class LinearSvmModel(TrainedModel):
    """SVM lineal sobre atributos estandarizados; puntaje = margen con signo"""

    kind = "svm"

    def __init__(self, weights: np.ndarray, bias: float, mean: np.ndarray, scale: np.ndarray, **meta):
        super().__init__(**meta)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        standardized = (np.asarray(features, dtype=np.float64) - self.mean) / self.scale
        return standardized @ self.weights + self.bias

    def _state(self) -> Dict[str, Any]:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def _from_state(cls, state: Dict[str, Any], **meta) -> "LinearSvmModel":
        return cls(state["weights"], state["bias"], state["mean"], state["scale"], **meta)


class ClassifierService:
    """Servicio de ajuste de los clasificadores base"""

    def knn_fit(self, train: Dataset, params: Optional[KnnParams] = None) -> KnnModel:
        params = params or KnnParams()
        _require_rows(train)
        if params.k > len(train):
            raise KTooLargeError(f"k={params.k} supera las {len(train)} instancias de entrenamiento")
        if params.k % 2 == 0:
            logger.warning(f"KNN con k par ({params.k}); los empates se resuelven por distancia")

        mean = scale = None
        features = train.features
        if params.standardize:
            mean, scale = fit_standardizer(features)
            features = (features - mean) / scale

        return KnnModel(
            features, train.labels, mean, scale,
            params=params.model_dump(), threshold=0.5,
            n_train=len(train), train_checksum=train.checksum,
        )

    def gnb_fit(self, train: Dataset, params: Optional[GnbParams] = None) -> GaussianNbModel:
        params = params or GnbParams()
        _require_both_classes(train, "Naïve Bayes")

        features = train.features
        floor = params.var_smoothing * (features.var(axis=0) + 1e-12)
        means, variances, log_priors = [], [], []
        for cls in (False, True):
            rows = features[train.labels == cls]
            means.append(rows.mean(axis=0))
            variances.append(np.maximum(rows.var(axis=0), floor))
            log_priors.append(math.log(len(rows) / len(train)))

        return GaussianNbModel(
            np.vstack(means), np.vstack(variances), np.array(log_priors),
            params=params.model_dump(), threshold=0.5,
            n_train=len(train), train_checksum=train.checksum,
        )

    def tree_fit(self, train: Dataset, params: Optional[TreeParams] = None) -> DecisionTreeModel:
        params = params or TreeParams()
        _require_rows(train)
        tree = build_tree(
            train.features, train.labels.astype(np.float64), criterion="gini",
            max_depth=params.max_depth, min_leaf=params.min_leaf,
        )
        logger.debug(f"árbol con {tree.node_count} nodos y profundidad {tree.depth}")
        return DecisionTreeModel(
            tree, params=params.model_dump(), threshold=0.5,
            n_train=len(train), train_checksum=train.checksum,
        )

    def svm_fit(self, train: Dataset, params: Optional[SvmParams] = None) -> LinearSvmModel:
        """
        Descenso por subgradiente estocástico en mini-lotes sobre la pérdida
        bisagra primal con regularización L2 (paso 1/(λt), proyección a la
        bola de radio 1/√λ) y promedio de iterados en la segunda mitad.
        """
        params = params or SvmParams()
        _require_both_classes(train, "SVM")

        mean, scale = fit_standardizer(train.features)
        standardized = (train.features - mean) / scale
        targets = np.where(train.labels, 1.0, -1.0)
        n, p = standardized.shape
        lam = params.regularization
        radius = 1.0 / math.sqrt(lam)
        bias_bound = 1.0 + radius * float(np.sqrt((standardized ** 2).sum(axis=1)).max())

        rng = make_rng(params.seed)
        batches_per_epoch = math.ceil(n / params.batch_size)
        total_steps = params.epochs * batches_per_epoch
        averaging_start = total_steps // 2

        weights = np.zeros(p)
        bias = 0.0
        weights_sum = np.zeros(p)
        bias_sum = 0.0
        averaged = 0
        step = 0
        for _ in range(params.epochs):
            order = rng.permutation(n)
            for start in range(0, n, params.batch_size):
                batch = order[start:start + params.batch_size]
                step += 1
                eta = 1.0 / (lam * step)
                x, y = standardized[batch], targets[batch]
                active = y * (x @ weights + bias) < 1.0

                grad_w = lam * weights - (y[active, None] * x[active]).sum(axis=0) / len(batch)
                grad_b = -y[active].sum() / len(batch)
                weights = weights - eta * grad_w
                bias = float(np.clip(bias - eta * grad_b, -bias_bound, bias_bound))

                norm_w = float(np.linalg.norm(weights))
                if norm_w > radius:
                    weights = weights * (radius / norm_w)

                if step > averaging_start:
                    weights_sum += weights
                    bias_sum += bias
                    averaged += 1

        return LinearSvmModel(
            weights_sum / averaged, bias_sum / averaged, mean, scale,
            params=params.model_dump(), threshold=0.0,
            n_train=len(train), train_checksum=train.checksum,
        )

    def forest_fit(self, train: Dataset, params: Optional[ForestParams] = None) -> RandomForestModel:
        params = params or ForestParams()
        _require_rows(train)

        n, p = train.features.shape
        max_features = min(params.max_features or math.ceil(math.sqrt(p)), p)
        target = train.labels.astype(np.float64)
        trees = []
        for index in range(params.n_trees):
            rng = make_rng(params.seed, index)
            rows = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
            trees.append(build_tree(
                train.features[rows], target[rows], criterion="gini",
                max_depth=params.tree.max_depth, min_leaf=params.tree.min_leaf,
                max_features=max_features if max_features < p else None, rng=rng,
            ))

        return RandomForestModel(
            trees, params=params.model_dump(), threshold=0.5,
            n_train=len(train), train_checksum=train.checksum,
        )


# Instancia singleton del servicio
classifier_service = ClassifierService()
