"""
Tipos de dominio del laboratorio: esquema de atributos, etiquetas de clase,
conjuntos de datos inmutables, matriz de confusión y curva ROC.
"""
import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

# Los 21 atributos de los conjuntos PROMISE (McCabe + Halstead)
PROMISE_ATTRIBUTES: Tuple[str, ...] = (
    "loc", "v(g)", "ev(g)", "iv(g)", "n", "v", "l", "d", "i", "e", "b", "t",
    "loCode", "loComment", "loBlank", "loCodeandComment",
    "uniq_op", "uniq_opnd", "total_op", "total_opnd", "branchCount",
)
PROMISE_LABEL = "defects"

# Variantes de nombre vistas en espejos del repositorio PROMISE
PROMISE_ALIASES = {
    "loccodeandcomment": "locodeandcomment",
}


def normalize_name(name: str) -> str:
    """Normaliza un nombre de atributo: sin espacios extremos y sin mayúsculas"""
    normalized = name.strip().casefold()
    return PROMISE_ALIASES.get(normalized, normalized)


class ClassLabel(str, Enum):
    DEFECTIVE = "defective"
    NON_DEFECTIVE = "non_defective"

    @classmethod
    def from_bool(cls, is_defective: bool) -> "ClassLabel":
        return cls.DEFECTIVE if is_defective else cls.NON_DEFECTIVE

    @property
    def is_defective(self) -> bool:
        return self is ClassLabel.DEFECTIVE

    @property
    def other(self) -> "ClassLabel":
        return ClassLabel.NON_DEFECTIVE if self.is_defective else ClassLabel.DEFECTIVE


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str = "numeric"


@dataclass(frozen=True)
class FeatureSchema:
    attributes: Tuple[Attribute, ...]
    label_name: str = PROMISE_LABEL

    @property
    def names(self) -> List[str]:
        return [attribute.name for attribute in self.attributes]

    @property
    def normalized_names(self) -> List[str]:
        return [normalize_name(attribute.name) for attribute in self.attributes]

    def __len__(self) -> int:
        return len(self.attributes)

    @classmethod
    def from_names(cls, names: Sequence[str], label_name: str = PROMISE_LABEL) -> "FeatureSchema":
        return cls(attributes=tuple(Attribute(name) for name in names), label_name=label_name)


@dataclass(frozen=True)
class Instance:
    features: Tuple[float, ...]
    label: ClassLabel


def content_checksum(features: np.ndarray, labels: np.ndarray) -> str:
    """Hash de contenido para conjuntos derivados (subconjuntos, remuestreos)"""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(features, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(labels, dtype=np.bool_).tobytes())
    return digest.hexdigest()


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Conjunto de instancias inmutable.

    `features` es una matriz n×p de float64, `labels` un vector booleano
    (True = Defective) y `provenance` el índice de la fila cruda de la que
    proviene cada instancia, para poder auditar duplicados tras remuestrear.
    `root_checksum` identifica el archivo crudo al que se refiere `provenance`.
    """
    schema: FeatureSchema
    features: np.ndarray
    labels: np.ndarray
    origin: str
    checksum: str
    provenance: np.ndarray = field(default=None)
    root_checksum: Optional[str] = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            features = features.reshape(len(self.labels), -1)
        labels = np.asarray(self.labels, dtype=np.bool_)
        provenance = self.provenance
        if provenance is None:
            provenance = np.arange(len(labels), dtype=np.int64)
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "provenance", _frozen(np.asarray(provenance, dtype=np.int64)))
        if self.root_checksum is None:
            object.__setattr__(self, "root_checksum", self.checksum)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_defective(self) -> int:
        return int(self.labels.sum())

    @property
    def n_non_defective(self) -> int:
        return len(self) - self.n_defective

    @property
    def has_both_classes(self) -> bool:
        return 0 < self.n_defective < len(self)

    @property
    def checksum_entropy(self) -> int:
        """Primeros 64 bits del checksum, usados para derivar semillas"""
        return int(self.checksum[:16], 16)

    def instances(self) -> Iterator[Instance]:
        for row, label in zip(self.features, self.labels):
            yield Instance(tuple(float(value) for value in row), ClassLabel.from_bool(bool(label)))

    def subset(self, indices: Sequence[int], origin: Optional[str] = None) -> "Dataset":
        """Selecciona filas por índice; el checksum pasa a ser de contenido"""
        indices = np.asarray(indices, dtype=np.int64)
        features = self.features[indices]
        labels = self.labels[indices]
        return Dataset(
            schema=self.schema,
            features=features,
            labels=labels,
            origin=origin or self.origin,
            checksum=content_checksum(features, labels),
            provenance=self.provenance[indices],
            root_checksum=self.root_checksum,
        )

    def with_features(self, features: np.ndarray, schema: FeatureSchema) -> "Dataset":
        """Misma muestra con otras columnas (entradas del meta-aprendiz)"""
        return Dataset(
            schema=schema,
            features=features,
            labels=self.labels,
            origin=self.origin,
            checksum=content_checksum(features, self.labels),
            provenance=self.provenance,
            root_checksum=self.root_checksum,
        )


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int
    positive_class: ClassLabel = ClassLabel.DEFECTIVE

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionMatrix":
        """La misma matriz vista desde la otra clase positiva"""
        return ConfusionMatrix(
            tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp,
            positive_class=self.positive_class.other,
        )


@dataclass(frozen=True)
class RocCurve:
    points: Tuple[Tuple[float, float], ...]  # (fpr, tpr)
    thresholds: Tuple[float, ...]
    auc: float
    positive_class: ClassLabel = ClassLabel.DEFECTIVE

    @property
    def fpr(self) -> np.ndarray:
        return np.array([point[0] for point in self.points])

    @property
    def tpr(self) -> np.ndarray:
        return np.array([point[1] for point in self.points])
