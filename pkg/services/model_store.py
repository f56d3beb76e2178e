"""Persistencia de modelos ajustados como artefactos JSON versionados"""
import json
import logging
from pathlib import Path
from typing import Union

from services.classifiers import TrainedModel
# registra los tipos de ensamble para poder cargarlos
import services.ensemble_service  # noqa: F401

logger = logging.getLogger(__name__)


def save_model(model: TrainedModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_artifact(), sort_keys=True), encoding="utf-8")
    logger.info(f"Modelo {model.kind} guardado en {path}")
    return path


def load_model(path: Union[str, Path]) -> TrainedModel:
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    return TrainedModel.from_artifact(document)
