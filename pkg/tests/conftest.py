import pytest
import numpy as np
from pathlib import Path
from typing import Callable, Optional, Sequence

from models import PROMISE_ATTRIBUTES, Dataset, FeatureSchema, content_checksum


def build_dataset(features, labels, names: Optional[Sequence[str]] = None, origin: str = "TEST") -> Dataset:
    """Crea un Dataset en memoria a partir de listas o arreglos."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features.reshape(-1, 1)
    labels = np.asarray(labels, dtype=bool)
    names = list(names) if names is not None else [f"f{i}" for i in range(features.shape[1])]
    return Dataset(
        schema=FeatureSchema.from_names(names),
        features=features,
        labels=labels,
        origin=origin,
        checksum=content_checksum(features, labels),
    )


def synthetic_promise(n: int, defect_rate: float, seed: int) -> Dataset:
    """Conjunto con los 21 atributos PROMISE; los defectuosos tienen métricas más altas."""
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=bool)
    labels[: max(2, int(round(n * defect_rate)))] = True
    labels = labels[rng.permutation(n)]
    base = rng.gamma(shape=2.0, scale=10.0, size=(n, len(PROMISE_ATTRIBUTES)))
    base[labels] *= 2.5
    features = np.round(base, 1)
    return build_dataset(features, labels, names=PROMISE_ATTRIBUTES, origin="SYN")


def arff_text(dataset: Dataset, relation: str = "synthetic") -> str:
    """ARFF con atributos numéricos y etiqueta {false,true}."""
    lines = [f"@relation {relation}", ""]
    lines += [f"@attribute {name} numeric" for name in dataset.schema.names]
    lines += ["@attribute defects {false,true}", "", "@data"]
    for row, label in zip(dataset.features, dataset.labels):
        values = ",".join(repr(float(value)) for value in row)
        lines.append(f"{values},{'true' if label else 'false'}")
    return "\n".join(lines) + "\n"


@pytest.fixture
def dataset_factory() -> Callable[..., Dataset]:
    """Fábrica de conjuntos en memoria."""
    return build_dataset


@pytest.fixture
def promise_dataset() -> Dataset:
    """120 instancias, ~25% defectuosas, esquema PROMISE completo."""
    return synthetic_promise(120, 0.25, seed=7)


@pytest.fixture
def small_promise_dataset() -> Dataset:
    """60 instancias para pruebas de apilamiento."""
    return synthetic_promise(60, 0.3, seed=11)


@pytest.fixture
def promise_arff_file(tmp_path, promise_dataset) -> Path:
    """Archivo ARFF en disco con el conjunto sintético."""
    path = tmp_path / "syn.arff"
    path.write_text(arff_text(promise_dataset), encoding="utf-8")
    return path


@pytest.fixture
def promise_data_dir(tmp_path) -> Path:
    """Directorio con cm1/kc2/pc1 sintéticos (pequeños) y un datasets.lock vacío."""
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    for index, name in enumerate(("cm1", "kc2", "pc1")):
        dataset = synthetic_promise(80, 0.2, seed=100 + index)
        (data_dir / f"{name}.arff").write_text(arff_text(dataset, relation=name), encoding="utf-8")
    (data_dir / "datasets.lock").write_text("datasets: {}\n", encoding="utf-8")
    return data_dir


@pytest.fixture
def xor_dataset() -> Dataset:
    """XOR de 4 puntos en dos atributos."""
    return build_dataset([[0, 0], [0, 1], [1, 0], [1, 1]], [False, True, True, False])


@pytest.fixture
def targets_file() -> Path:
    """Archivo de valores publicados versionado en el repositorio."""
    return Path(__file__).resolve().parent.parent / "data" / "published_targets.yaml"
