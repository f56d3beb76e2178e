import csv
import hashlib
import io
import logging
import math
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from config import settings
from errors import (
    ArityMismatchError, DatasetNotFoundError, EmptyDatasetError, MalformedHeaderError,
    MissingValueError, NonNumericFeatureError, TooFewInstancesForFoldsError,
    UnknownLabelValueError,
)
from models import PROMISE_ATTRIBUTES, PROMISE_LABEL, Dataset, FeatureSchema, normalize_name
from schemas import SchemaViolation, SplitPlan
from services.randomness import make_rng

logger = logging.getLogger(__name__)

Source = Union[bytes, BinaryIO]

DEFAULT_TRUTHY = ("true", "yes", "y", "1")
DEFAULT_FALSY = ("false", "no", "n", "0")
NUMERIC_TYPES = ("numeric", "real", "integer")


class Split(NamedTuple):
    train: np.ndarray
    test: np.ndarray


class DatasetService:
    """Servicio de ingesta: ARFF/CSV, validación de esquema y particiones"""

    def __init__(self, truthy_labels: Iterable[str] = DEFAULT_TRUTHY):
        self.truthy = {value.strip().casefold() for value in truthy_labels}
        self.falsy = {value.casefold() for value in DEFAULT_FALSY} - self.truthy

    # ------------------------------------------------------------------
    # Lectura
    # ------------------------------------------------------------------
    def parse_arff(self, source: Source, origin: Optional[str] = None,
                   drop_missing: bool = False) -> Dataset:
        """
        Lee el subconjunto de ARFF usado por PROMISE: atributos numéricos,
        etiqueta nominal binaria al final y filas densas separadas por comas.
        """
        raw = self._read_bytes(source)
        lines = self._decode(raw).splitlines()

        relation = None
        attributes: List[Tuple[str, str, Optional[List[str]]]] = []
        data_start = None

        for lineno, text in enumerate(lines, start=1):
            line = text.strip()
            if not line or line.startswith("%"):
                continue
            keyword = line.split(None, 1)[0].lower()
            if keyword == "@relation":
                relation = line[len("@relation"):].strip().strip("'\"") or None
            elif keyword == "@attribute":
                attributes.append(self._parse_attribute(line, lineno))
            elif keyword == "@data":
                data_start = lineno
                break
            else:
                raise MalformedHeaderError(f"declaración inesperada en la cabecera: {line[:40]!r}", lineno)

        if data_start is None:
            raise MalformedHeaderError("falta la sección @data")
        if len(attributes) < 2:
            raise MalformedHeaderError("se necesitan al menos un atributo y la etiqueta")

        *feature_attributes, (label_name, label_kind, label_values) = attributes
        for name, kind, _ in feature_attributes:
            if kind != "numeric":
                raise MalformedHeaderError(f"el atributo '{name}' no es numérico")
        if label_kind == "nominal" and len(label_values) != 2:
            raise MalformedHeaderError(f"la etiqueta '{label_name}' debe ser nominal binaria")

        rows = self._iter_rows(lines[data_start:], first_lineno=data_start + 1)
        return self._build_dataset(
            rows=rows,
            names=[name for name, _, _ in feature_attributes],
            label_name=label_name,
            label_values=label_values,
            origin=origin or relation or "arff",
            checksum=hashlib.sha256(raw).hexdigest(),
            drop_missing=drop_missing,
        )

    def parse_csv(self, source: Source, has_header: bool = True, origin: Optional[str] = None,
                  drop_missing: bool = False) -> Dataset:
        """
        Lee un CSV cuya última columna es la etiqueta. Sin cabecera se usan
        nombres sintéticos f0..f{p-1} y 'defects'.
        """
        raw = self._read_bytes(source)
        lines = self._decode(raw).splitlines()
        rows = list(self._iter_rows(lines, first_lineno=1))
        if not rows:
            raise MalformedHeaderError("archivo CSV vacío")

        if has_header:
            lineno, header = rows.pop(0)
            header = [cell.strip() for cell in header]
            if len(header) < 2:
                raise MalformedHeaderError("la cabecera necesita al menos un atributo y la etiqueta", lineno)
            names, label_name = header[:-1], header[-1]
        else:
            width = len(rows[0][1])
            if width < 2:
                raise MalformedHeaderError("cada fila necesita al menos un atributo y la etiqueta", rows[0][0])
            names, label_name = [f"f{i}" for i in range(width - 1)], PROMISE_LABEL

        return self._build_dataset(
            rows=rows,
            names=names,
            label_name=label_name,
            label_values=None,
            origin=origin or "csv",
            checksum=hashlib.sha256(raw).hexdigest(),
            drop_missing=drop_missing,
        )

    def load(self, path: Union[str, Path], drop_missing: bool = False, has_header: bool = True,
             lock_path: Optional[str] = None) -> Dataset:
        """Carga un archivo según su extensión y lo contrasta con datasets.lock"""
        path = Path(path)
        if not path.is_file():
            raise DatasetNotFoundError(f"no existe el archivo de datos: {path}")

        raw = path.read_bytes()
        origin = path.stem.upper()
        if path.suffix.lower() == ".arff":
            dataset = self.parse_arff(raw, origin=origin, drop_missing=drop_missing)
        else:
            dataset = self.parse_csv(raw, has_header=has_header, origin=origin, drop_missing=drop_missing)

        self.check_lock(path.name, dataset.checksum, lock_path)
        logger.info(f"Cargado {origin}: {len(dataset)} instancias, {dataset.n_features} atributos")
        return dataset

    # ------------------------------------------------------------------
    # Escritura
    # ------------------------------------------------------------------
    def to_csv(self, dataset: Dataset) -> bytes:
        """Serializa con 17 dígitos significativos (ida y vuelta exacta)"""
        frame = pd.DataFrame(dataset.features, columns=dataset.schema.names)
        frame[dataset.schema.label_name] = np.where(dataset.labels, "true", "false")
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
        return buffer.getvalue().encode("utf-8")

    # ------------------------------------------------------------------
    # Validación y distribución
    # ------------------------------------------------------------------
    def validate_schema(self, dataset: Dataset, strict_promise: bool = True) -> List[SchemaViolation]:
        violations: List[SchemaViolation] = []
        normalized = dataset.schema.normalized_names

        seen = set()
        for name, key in zip(dataset.schema.names, normalized):
            if key in seen:
                violations.append(SchemaViolation(
                    kind="DuplicateAttribute", attribute=name,
                    detail=f"atributo repetido: {name}",
                ))
            seen.add(key)

        if strict_promise:
            expected = {normalize_name(name): name for name in PROMISE_ATTRIBUTES}
            for key, name in expected.items():
                if key not in seen:
                    violations.append(SchemaViolation(
                        kind="MissingAttribute", attribute=name,
                        detail=f"falta el atributo PROMISE '{name}'",
                    ))
            for name, key in zip(dataset.schema.names, normalized):
                if key not in expected:
                    violations.append(SchemaViolation(
                        kind="UnexpectedAttribute", attribute=name,
                        detail=f"atributo fuera del esquema PROMISE: '{name}'",
                    ))
        elif dataset.n_features != len(PROMISE_ATTRIBUTES):
            violations.append(SchemaViolation(
                kind="WrongFeatureCount",
                detail=f"se esperaban {len(PROMISE_ATTRIBUTES)} atributos numéricos, hay {dataset.n_features}",
            ))
        return violations

    def class_distribution(self, dataset: Dataset) -> Tuple[float, float]:
        """(fracción defectuosa, fracción no defectuosa)"""
        if len(dataset) == 0:
            raise EmptyDatasetError("el conjunto de datos está vacío")
        defective = dataset.n_defective / len(dataset)
        return defective, dataset.n_non_defective / len(dataset)

    # ------------------------------------------------------------------
    # Particiones
    # ------------------------------------------------------------------
    def make_splits(self, dataset: Dataset, plan: SplitPlan) -> List[Split]:
        """
        Particiones deterministas bajo (checksum del conjunto, semilla del plan).
        Devuelve listas de índices; nunca copia instancias.
        """
        rng = make_rng(plan.seed, dataset.checksum_entropy)
        labels = dataset.labels
        n = len(dataset)

        if plan.kind == "kfold":
            self._check_fold_sizes(labels, plan.k, plan.stratified)
            order = self._stratified_order(labels, rng) if plan.stratified else rng.permutation(n)
            fold_of = np.empty(n, dtype=np.int64)
            fold_of[order] = np.arange(n) % plan.k
            return [
                Split(train=np.flatnonzero(fold_of != fold), test=np.flatnonzero(fold_of == fold))
                for fold in range(plan.k)
            ]

        if n < 2:
            raise TooFewInstancesForFoldsError(f"holdout necesita al menos 2 instancias, hay {n}")
        n_train = min(max(int(round(plan.train_fraction * n)), 1), n - 1)

        if plan.stratified:
            train_parts = []
            quotas = self._allocate(labels, n_train)
            for cls, quota in quotas.items():
                members = rng.permutation(np.flatnonzero(labels == cls))
                train_parts.append(members[:quota])
            train = np.sort(np.concatenate(train_parts))
        else:
            train = np.sort(rng.permutation(n)[:n_train])
        test = np.setdiff1d(np.arange(n), train)
        return [Split(train=train, test=test)]

    def _check_fold_sizes(self, labels: np.ndarray, k: int, stratified: bool):
        if len(labels) < k:
            raise TooFewInstancesForFoldsError(f"{len(labels)} instancias no alcanzan para {k} pliegues")
        if stratified:
            for cls in (False, True):
                count = int(np.sum(labels == cls))
                if 0 < count < k:
                    name = "Defective" if cls else "NonDefective"
                    raise TooFewInstancesForFoldsError(
                        f"la clase {name} tiene {count} instancias, se necesitan al menos {k}"
                    )

    @staticmethod
    def _stratified_order(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        # Clases concatenadas y repartidas en ronda: cada pliegue recibe ±1 por clase
        parts = [rng.permutation(np.flatnonzero(labels == cls)) for cls in (False, True)]
        return np.concatenate(parts)

    @staticmethod
    def _allocate(labels: np.ndarray, n_train: int) -> Dict[bool, int]:
        """Reparto de cuotas por clase con el método del mayor resto"""
        n = len(labels)
        counts = {cls: int(np.sum(labels == cls)) for cls in (False, True)}
        exact = {cls: n_train * count / n for cls, count in counts.items()}
        quotas = {cls: int(math.floor(value)) for cls, value in exact.items()}
        remaining = n_train - sum(quotas.values())
        by_remainder = sorted(counts, key=lambda cls: (-(exact[cls] - quotas[cls]), cls))
        for cls in by_remainder[:remaining]:
            quotas[cls] += 1
        return quotas

    # ------------------------------------------------------------------
    # Manifiesto de checksums
    # ------------------------------------------------------------------
    def check_lock(self, file_name: str, checksum: str, lock_path: Optional[str] = None) -> bool:
        """Avisa si el checksum no coincide con datasets.lock; nunca falla"""
        entries = self.read_lock(lock_path)
        expected = (entries.get(file_name) or {}).get("sha256")
        if expected is None:
            logger.warning(f"{file_name} no tiene checksum registrado en datasets.lock")
            return False
        if expected != checksum:
            logger.warning(f"El checksum de {file_name} difiere de datasets.lock ({checksum[:12]} != {expected[:12]})")
            return False
        return True

    def read_lock(self, lock_path: Optional[str] = None) -> Dict[str, Dict]:
        path = Path(lock_path or settings.DATASETS_LOCK)
        if not path.is_file():
            return {}
        content = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        return content.get("datasets", {}) or {}

    def record_lock(self, file_name: str, dataset: Dataset, lock_path: Optional[str] = None):
        """Registra el sha256 y el tamaño del archivo en datasets.lock"""
        path = Path(lock_path or settings.DATASETS_LOCK)
        entries = self.read_lock(str(path))
        entries[file_name] = {"sha256": dataset.checksum, "instances": len(dataset)}
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            yaml.safe_dump({"datasets": dict(sorted(entries.items()))}, sort_keys=True),
            encoding="utf-8",
        )
        logger.info(f"datasets.lock actualizado para {file_name}")

    # ------------------------------------------------------------------
    # Auxiliares de lectura
    # ------------------------------------------------------------------
    @staticmethod
    def _read_bytes(source: Source) -> bytes:
        return source if isinstance(source, (bytes, bytearray)) else source.read()

    @staticmethod
    def _decode(raw: bytes) -> str:
        try:
            return bytes(raw).decode("utf-8-sig")
        except UnicodeDecodeError as e:
            raise MalformedHeaderError(f"el archivo no es UTF-8 válido: {e}")

    @staticmethod
    def _parse_attribute(line: str, lineno: int) -> Tuple[str, str, Optional[List[str]]]:
        rest = line[len("@attribute"):].strip()
        if rest[:1] in ("'", '"'):
            closing = rest.find(rest[0], 1)
            if closing < 0:
                raise MalformedHeaderError("nombre de atributo sin cerrar", lineno)
            name, declared = rest[1:closing], rest[closing + 1:].strip()
        else:
            parts = rest.split(None, 1)
            if len(parts) != 2:
                raise MalformedHeaderError(f"atributo sin tipo: {line!r}", lineno)
            name, declared = parts

        if declared.lower() in NUMERIC_TYPES:
            return name, "numeric", None
        if declared.startswith("{") and declared.endswith("}"):
            values = [value.strip().strip("'\"") for value in declared[1:-1].split(",")]
            return name, "nominal", [value for value in values if value]
        raise MalformedHeaderError(f"tipo de atributo no soportado: {declared!r}", lineno)

    @staticmethod
    def _iter_rows(lines: Sequence[str], first_lineno: int) -> Iterable[Tuple[int, List[str]]]:
        for offset, text in enumerate(lines):
            line = text.strip()
            if not line or line.startswith("%"):
                continue
            lineno = first_lineno + offset
            if line.startswith("{"):
                raise MalformedHeaderError("el formato ARFF disperso no está soportado", lineno)
            cells = next(csv.reader([line], quotechar="'", skipinitialspace=True))
            yield lineno, [cell.strip() for cell in cells]

    def _label_mapping(self, label_values: Optional[List[str]]) -> Optional[Dict[str, bool]]:
        """
        Etiqueta nominal binaria declarada: el valor del conjunto verdadero es
        Defective y el otro valor declarado NonDefective.
        """
        if label_values is None:
            return None
        keys = [value.casefold() for value in label_values]
        truthy = [key for key in keys if key in self.truthy]
        if len(truthy) != 1:
            raise UnknownLabelValueError(
                f"la etiqueta {{{', '.join(label_values)}}} necesita exactamente un valor "
                f"defectuoso entre {sorted(self.truthy)}"
            )
        return {key: key in self.truthy for key in keys}

    def _label_of(self, value: str, mapping: Optional[Dict[str, bool]], lineno: int) -> bool:
        key = value.strip("'\"").casefold()
        if mapping is not None:
            if key not in mapping:
                raise UnknownLabelValueError(f"valor de etiqueta no declarado: {value!r}", lineno)
            return mapping[key]
        if key in self.truthy:
            return True
        if key in self.falsy:
            return False
        raise UnknownLabelValueError(f"valor de etiqueta desconocido: {value!r}", lineno)

    def _build_dataset(self, rows: Iterable[Tuple[int, List[str]]], names: List[str], label_name: str,
                       label_values: Optional[List[str]], origin: str, checksum: str,
                       drop_missing: bool) -> Dataset:
        width = len(names) + 1
        mapping = self._label_mapping(label_values)
        features: List[List[float]] = []
        labels: List[bool] = []
        dropped = 0

        for lineno, cells in rows:
            if len(cells) != width:
                raise ArityMismatchError(f"la fila tiene {len(cells)} celdas, se declararon {width}", lineno)
            if "?" in cells:
                if drop_missing:
                    dropped += 1
                    continue
                raise MissingValueError("valor faltante '?' (use --drop-missing para descartar la fila)", lineno)
            row = []
            for name, cell in zip(names, cells[:-1]):
                try:
                    value = float(cell)
                except ValueError:
                    raise NonNumericFeatureError(f"valor no numérico en '{name}': {cell!r}", lineno)
                if not math.isfinite(value):
                    raise NonNumericFeatureError(f"valor no finito en '{name}': {cell!r}", lineno)
                row.append(value)
            features.append(row)
            labels.append(self._label_of(cells[-1], mapping, lineno))

        if dropped:
            logger.warning(f"{origin}: descartadas {dropped} filas con valores faltantes")
        if not labels:
            raise EmptyDatasetError(f"{origin} no contiene instancias")

        return Dataset(
            schema=FeatureSchema.from_names(names, label_name=label_name),
            features=np.array(features, dtype=np.float64).reshape(len(labels), len(names)),
            labels=np.array(labels, dtype=np.bool_),
            origin=origin,
            checksum=checksum,
        )


# Instancia singleton del servicio
dataset_service = DatasetService()
