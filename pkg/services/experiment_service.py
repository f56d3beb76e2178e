"""
Arnés de experimentos: ejecuta modelos bajo un protocolo explícito
(paper_faithful o leakage_free), agrega métricas y escribe los artefactos.
"""
import asyncio
import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import ValidationError

from config import settings
from errors import (
    ChecksumMismatchError, ConfigFileError, DatasetNotFoundError, InvariantViolationError,
)
from models import ClassLabel, Dataset, RocCurve
from schemas import (
    DatasetRef, EvaluationReport, ExperimentConfig, FoldResult, LeakageAudit, PublishedTargets,
    RepetitionSummary, ComparisonTable, spec_hash,
)
from services.classifiers import TrainedModel
from services.dataset_service import DEFAULT_TRUTHY, DatasetService, dataset_service
from services.ensemble_service import ModelSpec, ensemble_service
from services.evaluation_service import evaluation_service
from services.model_store import save_model
from services.randomness import derive_seed
from services.resampling_service import resampling_service

logger = logging.getLogger(__name__)

BASELINES = ("svm", "knn", "decision_tree", "random_forest")
PROTOCOLS = ("paper_faithful", "leakage_free")
PUBLISHED_LABELS = {
    "svm": "SVM",
    "knn": "KNN",
    "decision_tree": "DT",
    "random_forest": "RF",
}
# Tolerancia en puntos porcentuales entre el F-score publicado y 2PR/(P+R)
F_SCORE_TOLERANCE = 0.05


@dataclass
class FoldData:
    repetition: int
    fold: int
    train: Dataset
    test: Dataset
    audit: LeakageAudit


@dataclass
class JobResult:
    model_id: str
    fold: FoldResult
    scores: np.ndarray
    actual: np.ndarray
    seconds: float


@dataclass
class ExperimentResult:
    dataset: Dataset
    protocol: str
    seed: int
    reports: Dict[str, EvaluationReport]
    rocs: Dict[str, Optional[RocCurve]]
    comparison: ComparisonTable
    timings: Dict[str, float]
    models: Dict[str, TrainedModel] = field(default_factory=dict)


def safe_name(model_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", model_id)


class ExperimentService:
    """Servicio del arnés: protocolos, ejecución concurrente y artefactos"""

    # ------------------------------------------------------------------
    # Configuración
    # ------------------------------------------------------------------
    def load_config(self, path: Union[str, Path]) -> ExperimentConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigFileError(f"no existe el archivo de configuración: {path}")
        try:
            content = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise ConfigFileError(f"YAML inválido en {path}: {e}")
        if not isinstance(content, dict):
            raise ConfigFileError(f"{path} debe contener un mapa de claves")
        try:
            config = ExperimentConfig.model_validate(content)
        except ValidationError as e:
            first = e.errors()[0]
            location = ".".join(str(part) for part in first["loc"])
            raise ConfigFileError(f"{path}: campo {location}: {first['msg']}")

        # rutas relativas al archivo de configuración
        dataset_path = Path(config.dataset.path)
        if not dataset_path.is_absolute() and not dataset_path.exists():
            candidate = path.parent / dataset_path
            if candidate.exists():
                config = config.model_copy(update={
                    "dataset": config.dataset.model_copy(update={"path": str(candidate)})
                })
        return config

    def load_targets(self, path: Optional[Union[str, Path]] = None) -> PublishedTargets:
        """Lee los valores publicados y marca los F-scores que no cuadran con 2PR/(P+R)"""
        path = Path(path or settings.TARGETS_FILE)
        try:
            targets = PublishedTargets.model_validate(yaml.safe_load(path.read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise ConfigFileError(f"no existe el archivo de valores publicados: {path}")
        except (yaml.YAMLError, ValidationError) as e:
            raise ConfigFileError(f"{path} inválido: {e}")

        for dataset_targets in targets.datasets.values():
            for cell in dataset_targets.models.values():
                if None in (cell.precision, cell.recall, cell.f_score):
                    continue
                total = cell.precision + cell.recall
                implied = 0.0 if total == 0 else 2 * cell.precision * cell.recall / total
                cell.inconsistent_under_eq1 = abs(implied - cell.f_score) > F_SCORE_TOLERANCE
        return targets

    def published_accuracies(self, config: ExperimentConfig, origin: str,
                             model_ids: Sequence[str]) -> Dict[str, float]:
        """Exactitud publicada (%) de cada modelo que tiene celda en la tabla de su conjunto"""
        if config.targets_file is None and not Path(settings.TARGETS_FILE).is_file():
            logger.warning(f"No existe {settings.TARGETS_FILE}; los reportes no se comparan con lo publicado")
            return {}
        dataset_targets = self.load_targets(config.targets_file).datasets.get(origin.upper())
        if dataset_targets is None:
            return {}
        labels = dict(PUBLISHED_LABELS, **{f"{origin.lower()}_default": "Ensemble"})
        accuracies = {}
        for model_id in model_ids:
            cell = dataset_targets.models.get(labels.get(model_id, ""))
            if cell is not None and cell.accuracy is not None:
                accuracies[model_id] = cell.accuracy
        return accuracies

    def resolve_models(self, config: ExperimentConfig) -> List[Tuple[str, ModelSpec]]:
        specs = []
        for entry in config.models:
            spec = ensemble_service.resolve(entry)
            spec = ensemble_service.with_overrides(spec, config.standardize, config.meta_insample)
            specs.append((spec.model_id, spec))
        ids = [model_id for model_id, _ in specs]
        duplicated = sorted({model_id for model_id in ids if ids.count(model_id) > 1})
        if duplicated:
            raise ConfigFileError(f"identificadores de modelo repetidos: {', '.join(duplicated)}")
        return specs

    # ------------------------------------------------------------------
    # Protocolos
    # ------------------------------------------------------------------
    def load_dataset(self, config: ExperimentConfig) -> Dataset:
        if not Path(config.dataset.path).is_file():
            raise ConfigFileError(f"el conjunto referenciado no existe: {config.dataset.path}")
        service = DatasetService(config.truthy_labels or DEFAULT_TRUTHY)
        dataset = service.load(config.dataset.path, drop_missing=config.drop_missing,
                               has_header=config.dataset.has_header)

        expected = config.dataset.expected_checksum
        if expected and expected != dataset.checksum:
            detail = f"{dataset.origin}: sha256 {dataset.checksum} no coincide con {expected}"
            if not config.allow_checksum_mismatch:
                raise ChecksumMismatchError(detail)
            logger.warning(f"{detail} (se continúa por --allow-checksum-mismatch)")
        return dataset

    def protocol_folds(self, dataset: Dataset, config: ExperimentConfig, repetition: int) -> List[FoldData]:
        """
        paper_faithful balancea el conjunto completo y luego particiona;
        leakage_free particiona primero y balancea solo cada entrenamiento.
        """
        repetition_seed = derive_seed(config.seed, "repetition", repetition)
        resample = config.resample.model_copy(update={"seed": derive_seed(repetition_seed, "balance")})
        plan = config.split.model_copy(update={"seed": derive_seed(repetition_seed, "split")})
        balance = config.balance == "bootstrap"

        folds = []
        if config.protocol == "paper_faithful":
            source = resampling_service.balance_classes(dataset, resample) if balance else dataset
            for index, split in enumerate(dataset_service.make_splits(source, plan)):
                folds.append((index, source.subset(split.train), source.subset(split.test)))
        else:
            for index, split in enumerate(dataset_service.make_splits(dataset, plan)):
                train = dataset.subset(split.train)
                if balance:
                    fold_resample = resample.model_copy(update={"seed": derive_seed(resample.seed, index)})
                    train = resampling_service.balance_classes(train, fold_resample)
                folds.append((index, train, dataset.subset(split.test)))

        result = []
        for index, train, test in folds:
            audit = resampling_service.leakage_audit(train, test)
            if config.protocol == "leakage_free" and audit.shared_source_count != 0:
                raise InvariantViolationError(
                    f"leakage_free con {audit.shared_source_count} duplicados inducidos en el pliegue {index}"
                )
            result.append(FoldData(repetition, index, train, test, audit))
        return result

    # ------------------------------------------------------------------
    # Ejecución
    # ------------------------------------------------------------------
    async def run_experiment(self, config: ExperimentConfig) -> ExperimentResult:
        """Ajusta y evalúa cada modelo en cada pliegue de cada repetición"""
        specs = self.resolve_models(config)
        dataset = self.load_dataset(config)
        logger.info(
            f"Experimento {dataset.origin} [{config.protocol}] con {len(specs)} modelos y "
            f"{config.resample.observations_param} repeticiones"
        )

        folds: List[FoldData] = []
        for repetition in range(config.resample.observations_param):
            folds.extend(self.protocol_folds(dataset, config, repetition))

        semaphore = asyncio.Semaphore(settings.MAX_WORKERS)

        async def bounded(model_id: str, spec: ModelSpec, fold: FoldData) -> JobResult:
            async with semaphore:
                return await asyncio.to_thread(self._run_job, model_id, spec, fold, config.seed)

        started = time.perf_counter()
        jobs = [bounded(model_id, spec, fold) for model_id, spec in specs for fold in folds]
        results: List[JobResult] = await asyncio.gather(*jobs)
        wall_seconds = time.perf_counter() - started

        reports: Dict[str, EvaluationReport] = {}
        rocs: Dict[str, Optional[RocCurve]] = {}
        timings: Dict[str, float] = {"wall_seconds": wall_seconds}
        for model_id, spec in specs:
            mine = sorted(
                (result for result in results if result.model_id == model_id),
                key=lambda result: (result.fold.repetition, result.fold.fold),
            )
            reports[model_id], rocs[model_id] = self._build_report(model_id, spec, mine, dataset, config)
            timings[model_id] = sum(result.seconds for result in mine)

        for model_id, accuracy in self.published_accuracies(config, dataset.origin, list(reports)).items():
            reports[model_id] = reports[model_id].model_copy(update={"published_accuracy": accuracy})

        comparison = evaluation_service.compare_models(list(reports.values()), class_view="both")
        result = ExperimentResult(dataset, config.protocol, config.seed, reports, rocs, comparison, timings)
        if config.save_models:
            result.models = self._fit_final_models(dataset, specs, config)
        return result

    def _run_job(self, model_id: str, spec: ModelSpec, fold: FoldData, seed: int) -> JobResult:
        started = time.perf_counter()
        job_seed = derive_seed(seed, "model", model_id, fold.repetition, fold.fold)
        model = ensemble_service.fit(spec, fold.train, job_seed)
        scores = model.score_dataset(fold.test)
        predicted = scores >= model.threshold
        actual = fold.test.labels

        per_class, confusion = evaluation_service.per_class(predicted, actual)
        auc = None
        if 0 < int(actual.sum()) < len(actual):
            auc = evaluation_service.roc_from_arrays(scores, actual).auc
        fold_result = FoldResult(
            repetition=fold.repetition, fold=fold.fold,
            n_train=len(fold.train), n_test=len(fold.test),
            per_class=per_class, confusion=confusion, auc=auc, leakage=fold.audit,
        )
        return JobResult(model_id, fold_result, scores, np.asarray(actual), time.perf_counter() - started)

    def _build_report(self, model_id: str, spec: ModelSpec, results: Sequence[JobResult],
                      dataset: Dataset, config: ExperimentConfig) -> Tuple[EvaluationReport, Optional[RocCurve]]:
        fold_results = [result.fold for result in results]
        per_class, confusion = evaluation_service.aggregate(fold_results)

        by_repetition: Dict[int, List[float]] = {}
        for fold in fold_results:
            by_repetition.setdefault(fold.repetition, []).append(fold.per_class[ClassLabel.DEFECTIVE.value].accuracy)
        repetition_means = [float(np.mean(values)) for _, values in sorted(by_repetition.items())]

        scores = np.concatenate([result.scores for result in results])
        actual = np.concatenate([result.actual for result in results])
        curve = None
        if 0 < int(actual.sum()) < len(actual):
            curve = evaluation_service.roc_from_arrays(scores, actual)

        flags = []
        if any(fold.leakage.shared_source_count > 0 for fold in fold_results):
            flags.append("resampling_duplicates_in_test")

        report = EvaluationReport(
            model_id=model_id,
            protocol=config.protocol,
            dataset_origin=dataset.origin,
            dataset_checksum=dataset.checksum,
            seed=config.seed,
            spec_hash=spec_hash(spec),
            per_class=per_class,
            auc=None if curve is None else curve.auc,
            confusion=confusion,
            folds=fold_results,
            repetitions=RepetitionSummary(
                count=len(repetition_means),
                accuracy_mean=float(np.mean(repetition_means)),
                accuracy_min=min(repetition_means),
                accuracy_max=max(repetition_means),
            ),
            flags=flags,
        )
        return report, curve

    def _fit_final_models(self, dataset: Dataset, specs: Sequence[Tuple[str, ModelSpec]],
                          config: ExperimentConfig) -> Dict[str, TrainedModel]:
        """Modelos sobre el conjunto completo (balanceado si corresponde) para guardarlos"""
        training = dataset
        if config.balance == "bootstrap":
            resample = config.resample.model_copy(update={"seed": derive_seed(config.seed, "final")})
            training = resampling_service.balance_classes(dataset, resample)
        return {
            model_id: ensemble_service.fit(spec, training, derive_seed(config.seed, "final", model_id))
            for model_id, spec in specs
        }

    # ------------------------------------------------------------------
    # Artefactos
    # ------------------------------------------------------------------
    def write_outputs(self, result: ExperimentResult, out_dir: Union[str, Path]) -> List[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []

        def write(name: str, content: str):
            path = out / name
            path.write_text(content, encoding="utf-8")
            written.append(path)

        for model_id in sorted(result.reports):
            report = result.reports[model_id]
            name = safe_name(model_id)
            write(f"report_{name}.txt", evaluation_service.report_text(report))
            curve = result.rocs[model_id]
            if curve is not None:
                write(f"roc_{name}.csv", evaluation_service.roc_csv(curve))
                write(f"roc_{name}.svg", evaluation_service.roc_svg(curve, f"{report.dataset_origin} · {model_id}"))

        write("comparison.csv", evaluation_service.to_csv(evaluation_service.comparison_rows(result.comparison)))
        fold_rows = [row for model_id in sorted(result.reports)
                     for row in evaluation_service.fold_rows(result.reports[model_id])]
        write("folds.csv", evaluation_service.to_csv(fold_rows))
        # sidecar: lo único no determinista de la salida
        write("timings.json", json.dumps(result.timings, indent=2, sort_keys=True) + "\n")

        for model_id, model in sorted(result.models.items()):
            written.append(save_model(model, out / f"model_{safe_name(model_id)}.json"))

        logger.info(f"{len(written)} archivos escritos en {out}")
        return written

    # ------------------------------------------------------------------
    # Reproducción de las tablas comparativas
    # ------------------------------------------------------------------
    def find_fixture(self, dataset_id: str, data_dir: Union[str, Path]) -> Path:
        data_dir = Path(data_dir)
        for suffix in (".arff", ".csv"):
            for stem in (dataset_id.lower(), dataset_id.upper()):
                candidate = data_dir / f"{stem}{suffix}"
                if candidate.is_file():
                    return candidate
        raise DatasetNotFoundError(f"falta el conjunto {dataset_id} en {data_dir} ({dataset_id.lower()}.arff o .csv)")

    async def reproduce_tables(self, dataset_ids: Sequence[str], seed: int,
                               data_dir: Union[str, Path], out_dir: Union[str, Path],
                               targets_path: Optional[Union[str, Path]] = None,
                               standardize: bool = False, meta_insample: bool = False,
                               repetitions: Optional[int] = None, folds: Optional[int] = None) -> List[Path]:
        """
        Baselines y pipeline propio de cada conjunto bajo ambos protocolos;
        artefactos completos de cada corrida en `<conjunto>_<protocolo>/`,
        tablas por (conjunto, protocolo), desviaciones frente a lo publicado y
        verificación de la afirmación de orden.
        """
        targets = self.load_targets(targets_path)
        fixtures = {dataset_id.upper(): self.find_fixture(dataset_id, data_dir) for dataset_id in dataset_ids}

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written: List[Path] = []
        deviations: List[Dict] = []
        claims: List[Dict] = []
        timings: Dict[str, float] = {}

        for dataset_id, path in fixtures.items():
            ensemble_id = f"{dataset_id.lower()}_default"
            for protocol in PROTOCOLS:
                config = ExperimentConfig(
                    dataset=DatasetRef(path=str(path)),
                    protocol=protocol,
                    models=list(BASELINES) + [ensemble_id],
                    seed=seed,
                    standardize=standardize,
                    meta_insample=meta_insample,
                    targets_file=None if targets_path is None else str(targets_path),
                )
                if repetitions is not None:
                    config.resample.observations_param = repetitions
                if folds is not None:
                    config.split.k = folds
                result = await self.run_experiment(config)
                timings[f"{dataset_id}_{protocol}"] = result.timings["wall_seconds"]
                written.extend(self.write_outputs(result, out / f"{dataset_id.lower()}_{protocol}"))

                rows = evaluation_service.comparison_rows(result.comparison)
                for row in rows:
                    row["protocol_tag"] = protocol
                table_path = out / f"table_{dataset_id.lower()}_{protocol}.csv"
                table_path.write_text(evaluation_service.to_csv(rows), encoding="utf-8")
                written.append(table_path)

                deviations.extend(self._deviations(dataset_id, protocol, result, targets, ensemble_id))
                claims.append(self._claim(dataset_id, protocol, result, ensemble_id))

        for name, rows in (("deviations.csv", deviations), ("claims.csv", claims)):
            path = out / name
            path.write_text(evaluation_service.to_csv(rows), encoding="utf-8")
            written.append(path)
        sidecar = out / "timings.json"
        sidecar.write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(sidecar)
        return written

    def _deviations(self, dataset_id: str, protocol: str, result: ExperimentResult,
                    targets: PublishedTargets, ensemble_id: str) -> List[Dict]:
        dataset_targets = targets.datasets.get(dataset_id)
        if dataset_targets is None:
            logger.warning(f"No hay valores publicados para {dataset_id}")
            return []
        labels = dict(PUBLISHED_LABELS, **{ensemble_id: "Ensemble"})
        decimals = settings.REPORT_DECIMALS
        rows = []
        for model_id in sorted(result.reports):
            cell = dataset_targets.models.get(labels.get(model_id, model_id))
            if cell is None:
                continue
            report = result.reports[model_id]
            for view in (ClassLabel.DEFECTIVE.value, ClassLabel.NON_DEFECTIVE.value):
                block = report.per_class[view]
                measured = {"accuracy": block.accuracy, "precision": block.precision,
                            "recall": block.recall, "f_score": block.f1}
                for metric, value in measured.items():
                    if metric == "accuracy" and view != ClassLabel.DEFECTIVE.value:
                        continue
                    published = getattr(cell, metric)
                    measured_pct = round(value * 100.0, decimals)
                    rows.append({
                        "dataset": dataset_id,
                        "dataset_checksum": report.dataset_checksum,
                        "protocol": protocol,
                        "seed": report.seed,
                        "spec_hash": report.spec_hash,
                        "model_id": model_id,
                        "published_label": labels.get(model_id, model_id),
                        "metric": metric,
                        "class_view": "any" if metric == "accuracy" else view,
                        "published_value": published,
                        "measured": measured_pct,
                        "difference": None if published is None else round(measured_pct - published, decimals),
                        "inconsistent_under_eq1": cell.inconsistent_under_eq1,
                        "notes": "; ".join(cell.notes),
                    })
        return rows

    def _claim(self, dataset_id: str, protocol: str, result: ExperimentResult, ensemble_id: str) -> Dict:
        def accuracy(model_id: str) -> float:
            return result.reports[model_id].per_class[ClassLabel.DEFECTIVE.value].accuracy

        ensemble = accuracy(ensemble_id)
        best_id = max(("svm", "decision_tree", "random_forest"), key=lambda model_id: (accuracy(model_id), model_id))
        knn = accuracy("knn")
        knn_matches = knn >= ensemble
        if knn_matches:
            logger.warning(f"{dataset_id} [{protocol}]: KNN simple iguala o supera al ensamble")
        decimals = settings.REPORT_DECIMALS
        report = result.reports[ensemble_id]
        return {
            "dataset": dataset_id,
            "dataset_checksum": report.dataset_checksum,
            "protocol": protocol,
            "seed": report.seed,
            "spec_hash": report.spec_hash,
            "ensemble_id": ensemble_id,
            "ensemble_accuracy": round(ensemble * 100.0, decimals),
            "best_baseline": best_id,
            "best_baseline_accuracy": round(accuracy(best_id) * 100.0, decimals),
            "ensemble_beats_baselines": ensemble >= accuracy(best_id),
            "knn_accuracy": round(knn * 100.0, decimals),
            "knn_matches_ensemble": knn_matches,
        }

    # ------------------------------------------------------------------
    # Utilidades de conjuntos
    # ------------------------------------------------------------------
    def dataset_info(self, path: Union[str, Path], strict_promise: bool = True, record_lock: bool = False,
                     drop_missing: bool = False, lock_path: Optional[str] = None) -> str:
        """Resumen legible: instancias, clases, validación de esquema y checksum"""
        service = DatasetService()
        path = Path(path)
        dataset = service.load(path, drop_missing=drop_missing, lock_path=lock_path)
        violations = service.validate_schema(dataset, strict_promise=strict_promise)

        lines = [
            f"{dataset.origin}: {len(dataset)} instances, {dataset.n_features} attributes",
        ]
        if len(dataset) > 0:
            defective, non_defective = service.class_distribution(dataset)
            lines.append(f"  Defective:    {dataset.n_defective} ({defective * 100:.2f}%)")
            lines.append(f"  NonDefective: {dataset.n_non_defective} ({non_defective * 100:.2f}%)")
        if violations:
            lines.append(f"  Esquema: {len(violations)} violaciones")
            lines.extend(f"    - {violation.kind}: {violation.detail}" for violation in violations)
        else:
            lines.append("  Esquema: válido")
        lines.append(f"  sha256: {dataset.checksum}")

        if record_lock:
            service.record_lock(path.name, dataset, lock_path)
            lines.append("  datasets.lock: registrado")
        else:
            recorded = (service.read_lock(lock_path).get(path.name) or {}).get("sha256")
            status = "sin registro" if recorded is None else ("coincide" if recorded == dataset.checksum else "difiere")
            lines.append(f"  datasets.lock: {status}")
        return "\n".join(lines) + "\n"

    def audit_leakage(self, config: ExperimentConfig) -> str:
        """Particiona y balancea según el protocolo, sin ajustar modelos"""
        dataset = self.load_dataset(config)
        rows = []
        for repetition in range(config.resample.observations_param):
            for fold in self.protocol_folds(dataset, config, repetition):
                rows.append({
                    "protocol": config.protocol,
                    "repetition": fold.repetition,
                    "fold": fold.fold,
                    "n_train": len(fold.train),
                    "n_test": len(fold.test),
                    "duplicate_count": fold.audit.duplicate_count,
                    "duplicate_fraction_of_test": round(fold.audit.duplicate_fraction_of_test, 6),
                    "shared_source_count": fold.audit.shared_source_count,
                    "natural_duplicate_count": fold.audit.natural_duplicate_count,
                })
        return evaluation_service.to_csv(rows)


# Instancia singleton del servicio
experiment_service = ExperimentService()
