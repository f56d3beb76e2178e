import io
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from config import settings  # noqa: E402
from errors import EmptyDatasetError, ReportMismatchError, SingleClassActualsError  # noqa: E402
from models import ClassLabel, ConfusionMatrix, RocCurve  # noqa: E402
from schemas import (  # noqa: E402
    ClassMetrics, ComparisonRow, ComparisonTable, ConfusionCounts, EvaluationReport, FoldResult,
)

logger = logging.getLogger(__name__)

# SVG reproducible: sin fecha y con identificadores internos fijos
plt.rcParams["svg.hashsalt"] = "defectlab"

DEGENERATE = "DegenerateDenominator"
CLASS_VIEWS = (ClassLabel.DEFECTIVE, ClassLabel.NON_DEFECTIVE)


class EvaluationService:
    """Servicio de métricas de matriz de confusión, curvas ROC y reportes comparativos"""

    # ------------------------------------------------------------------
    # Matriz de confusión y métricas
    # ------------------------------------------------------------------
    def confusion(self, predictions: Iterable[Tuple[ClassLabel, ClassLabel]],
                  positive_class: ClassLabel = ClassLabel.DEFECTIVE) -> ConfusionMatrix:
        """Cuenta pares (predicho, real) según la clase positiva elegida"""
        pairs = list(predictions)
        if not pairs:
            raise EmptyDatasetError("no hay predicciones que evaluar")
        predicted = np.array([ClassLabel(p).is_defective for p, _ in pairs])
        actual = np.array([ClassLabel(a).is_defective for _, a in pairs])
        return self.confusion_from_arrays(predicted, actual, positive_class)

    def confusion_from_arrays(self, predicted: np.ndarray, actual: np.ndarray,
                              positive_class: ClassLabel = ClassLabel.DEFECTIVE) -> ConfusionMatrix:
        """Misma matriz a partir de vectores booleanos (True = Defective)"""
        predicted = np.asarray(predicted, dtype=np.bool_)
        actual = np.asarray(actual, dtype=np.bool_)
        if predicted.size == 0:
            raise EmptyDatasetError("no hay predicciones que evaluar")
        if not positive_class.is_defective:
            predicted, actual = ~predicted, ~actual
        return ConfusionMatrix(
            tp=int(np.sum(predicted & actual)),
            fp=int(np.sum(predicted & ~actual)),
            fn=int(np.sum(~predicted & actual)),
            tn=int(np.sum(~predicted & ~actual)),
            positive_class=positive_class,
        )

    def metrics(self, cm: ConfusionMatrix) -> ClassMetrics:
        """
        Exactitud, precisión, exhaustividad y F1. Un denominador nulo da 0 y
        deja la marca `<métrica>:DegenerateDenominator`.
        """
        if cm.total == 0:
            raise EmptyDatasetError("matriz de confusión vacía")
        flags = []
        accuracy = (cm.tp + cm.tn) / cm.total

        if cm.tp + cm.fp == 0:
            precision = 0.0
            flags.append(f"precision:{DEGENERATE}")
        else:
            precision = cm.tp / (cm.tp + cm.fp)

        if cm.tp + cm.fn == 0:
            recall = 0.0
            flags.append(f"recall:{DEGENERATE}")
        else:
            recall = cm.tp / (cm.tp + cm.fn)

        if precision + recall == 0:
            f1 = 0.0
            flags.append(f"f1:{DEGENERATE}")
        else:
            f1 = 2 * precision * recall / (precision + recall)

        return ClassMetrics(accuracy=accuracy, precision=precision, recall=recall, f1=f1, flags=flags)

    def per_class(self, predicted: np.ndarray, actual: np.ndarray
                  ) -> Tuple[Dict[str, ClassMetrics], Dict[str, ConfusionCounts]]:
        """Bloques de métricas y matrices para ambas clases"""
        blocks, matrices = {}, {}
        for view in CLASS_VIEWS:
            cm = self.confusion_from_arrays(predicted, actual, view)
            blocks[view.value] = self.metrics(cm)
            matrices[view.value] = ConfusionCounts(tp=cm.tp, fp=cm.fp, fn=cm.fn, tn=cm.tn)
        return blocks, matrices

    # ------------------------------------------------------------------
    # ROC
    # ------------------------------------------------------------------
    def roc(self, scored: Iterable[Tuple[float, ClassLabel]],
            positive_class: ClassLabel = ClassLabel.DEFECTIVE) -> RocCurve:
        pairs = list(scored)
        scores = np.array([float(score) for score, _ in pairs], dtype=np.float64)
        actual = np.array([ClassLabel(label).is_defective for _, label in pairs], dtype=np.bool_)
        return self.roc_from_arrays(scores, actual, positive_class)

    def roc_from_arrays(self, scores: np.ndarray, actual: np.ndarray,
                        positive_class: ClassLabel = ClassLabel.DEFECTIVE) -> RocCurve:
        """
        Barrido de umbrales sobre los puntajes distintos en orden descendente;
        los empates comparten un único punto. AUC trapezoidal calculada con
        conteos enteros y normalizada al final.
        """
        scores = np.asarray(scores, dtype=np.float64)
        positives = np.asarray(actual, dtype=np.bool_)
        if not positive_class.is_defective:
            # vista NonDefective: puntajes y etiquetas invertidos
            scores, positives = -scores, ~positives

        n_pos = int(positives.sum())
        n_neg = int(positives.size - n_pos)
        if n_pos == 0 or n_neg == 0:
            raise SingleClassActualsError("la curva ROC necesita ambas clases entre los valores reales")

        order = np.argsort(-scores, kind="stable")
        sorted_scores = scores[order]
        hits = positives[order].astype(np.int64)
        ends = np.flatnonzero(np.r_[sorted_scores[1:] != sorted_scores[:-1], True])

        tps = np.r_[0, np.cumsum(hits)[ends]]
        fps = np.r_[0, (ends + 1) - tps[1:]]
        thresholds = np.r_[np.inf, sorted_scores[ends]]

        # 2·área·P·N exacta en enteros
        doubled_area = int(np.sum((fps[1:] - fps[:-1]) * (tps[1:] + tps[:-1])))
        auc = doubled_area / (2 * n_pos * n_neg)

        points = tuple((fp / n_neg, tp / n_pos) for fp, tp in zip(fps.tolist(), tps.tolist()))
        return RocCurve(
            points=points,
            thresholds=tuple(float(value) for value in thresholds),
            auc=float(auc),
            positive_class=positive_class,
        )

    # ------------------------------------------------------------------
    # Agregación y comparación
    # ------------------------------------------------------------------
    def aggregate(self, folds: Sequence[FoldResult]) -> Tuple[Dict[str, ClassMetrics], Dict[str, ConfusionCounts]]:
        """Media sin ponderar de las métricas por pliegue; matrices sumadas"""
        blocks, matrices = {}, {}
        for view in CLASS_VIEWS:
            key = view.value
            rows = [fold.per_class[key] for fold in folds]
            flags = sorted({flag for row in rows for flag in row.flags})
            blocks[key] = ClassMetrics(
                accuracy=float(np.mean([row.accuracy for row in rows])),
                precision=float(np.mean([row.precision for row in rows])),
                recall=float(np.mean([row.recall for row in rows])),
                f1=float(np.mean([row.f1 for row in rows])),
                flags=flags,
            )
            matrices[key] = ConfusionCounts(
                tp=sum(fold.confusion[key].tp for fold in folds),
                fp=sum(fold.confusion[key].fp for fold in folds),
                fn=sum(fold.confusion[key].fn for fold in folds),
                tn=sum(fold.confusion[key].tn for fold in folds),
            )
        return blocks, matrices

    def compare_models(self, reports: Sequence[EvaluationReport],
                       class_view: str = ClassLabel.DEFECTIVE.value) -> ComparisonTable:
        """
        Una fila por modelo (y por clase cuando `class_view="both"`), ordenadas
        por identificador de modelo.
        """
        if not reports:
            raise ReportMismatchError("no hay reportes que comparar")
        first = reports[0]
        for report in reports[1:]:
            if report.dataset_origin != first.dataset_origin or report.dataset_checksum != first.dataset_checksum:
                raise ReportMismatchError(
                    f"conjuntos distintos: {first.dataset_origin} y {report.dataset_origin}"
                )
            if report.protocol != first.protocol:
                raise ReportMismatchError(f"protocolos distintos: {first.protocol} y {report.protocol}")

        views = [view.value for view in CLASS_VIEWS] if class_view == "both" else [ClassLabel(class_view).value]
        rows = []
        for report in sorted(reports, key=lambda r: r.model_id):
            for view in views:
                block = report.per_class[view]
                rows.append(ComparisonRow(
                    model_id=report.model_id, spec_hash=report.spec_hash, seed=report.seed, class_view=view,
                    accuracy=block.accuracy, precision=block.precision,
                    recall=block.recall, f1=block.f1, auc=report.auc,
                    published_accuracy=report.published_accuracy,
                ))
        return ComparisonTable(
            dataset_origin=first.dataset_origin,
            dataset_checksum=first.dataset_checksum,
            protocol=first.protocol,
            rows=rows,
        )

    # ------------------------------------------------------------------
    # Serialización (el redondeo ocurre solo aquí)
    # ------------------------------------------------------------------
    @staticmethod
    def _pct(value: float, decimals: int) -> float:
        return round(value * 100.0, decimals)

    def report_text(self, report: EvaluationReport, decimals: Optional[int] = None) -> str:
        decimals = settings.REPORT_DECIMALS if decimals is None else decimals
        lines = [
            f"Modelo: {report.model_id}",
            f"Protocolo: {report.protocol}",
            f"Conjunto: {report.dataset_origin} (sha256 {report.dataset_checksum})",
            f"Semilla: {report.seed}",
            f"Spec hash: {report.spec_hash}",
            "",
        ]
        for view, block in sorted(report.per_class.items()):
            cm = report.confusion[view]
            lines.extend([
                f"[{view}]",
                f"  accuracy  = {self._pct(block.accuracy, decimals):.{decimals}f}%",
                f"  precision = {self._pct(block.precision, decimals):.{decimals}f}%",
                f"  recall    = {self._pct(block.recall, decimals):.{decimals}f}%",
                f"  f1        = {self._pct(block.f1, decimals):.{decimals}f}%",
                f"  confusion = tp {cm.tp}, fp {cm.fp}, fn {cm.fn}, tn {cm.tn}",
            ])
            if block.flags:
                lines.append(f"  flags     = {', '.join(block.flags)}")
        auc = "n/a" if report.auc is None else f"{report.auc:.{decimals + 2}f}"
        lines.append(f"AUC: {auc}")
        if report.published_accuracy is not None:
            measured = self._pct(report.per_class[ClassLabel.DEFECTIVE.value].accuracy, decimals)
            lines.append(
                f"Publicado: accuracy {report.published_accuracy:.{decimals}f}% "
                f"(diferencia {measured - report.published_accuracy:+.{decimals}f} pp)"
            )
        if report.repetitions is not None:
            summary = report.repetitions
            lines.append(
                f"Repeticiones: {summary.count} (accuracy media {self._pct(summary.accuracy_mean, decimals):.{decimals}f}%, "
                f"mín {self._pct(summary.accuracy_min, decimals):.{decimals}f}%, "
                f"máx {self._pct(summary.accuracy_max, decimals):.{decimals}f}%)"
            )
        if report.flags:
            lines.append(f"Marcas: {', '.join(report.flags)}")
        lines.append(f"Pliegues evaluados: {len(report.folds)}")
        return "\n".join(lines) + "\n"

    def comparison_rows(self, table: ComparisonTable, decimals: Optional[int] = None) -> List[Dict]:
        """Filas planas de la tabla comparativa con la procedencia completa"""
        decimals = settings.REPORT_DECIMALS if decimals is None else decimals
        return [
            {
                "dataset": table.dataset_origin,
                "dataset_checksum": table.dataset_checksum,
                "protocol": table.protocol,
                "seed": row.seed,
                "spec_hash": row.spec_hash,
                "model_id": row.model_id,
                "class_view": row.class_view,
                "accuracy": self._pct(row.accuracy, decimals),
                "precision": self._pct(row.precision, decimals),
                "recall": self._pct(row.recall, decimals),
                "f1": self._pct(row.f1, decimals),
                "auc": None if row.auc is None else round(row.auc, decimals + 2),
                "published_accuracy": row.published_accuracy,
                "accuracy_difference": (
                    None if row.published_accuracy is None
                    else round(self._pct(row.accuracy, decimals) - row.published_accuracy, decimals)
                ),
            }
            for row in table.rows
        ]

    def fold_rows(self, report: EvaluationReport, decimals: Optional[int] = None) -> List[Dict]:
        decimals = settings.REPORT_DECIMALS if decimals is None else decimals
        rows = []
        for fold in report.folds:
            for view, block in sorted(fold.per_class.items()):
                rows.append({
                    "dataset_checksum": report.dataset_checksum,
                    "protocol": report.protocol,
                    "seed": report.seed,
                    "spec_hash": report.spec_hash,
                    "model_id": report.model_id,
                    "repetition": fold.repetition,
                    "fold": fold.fold,
                    "n_train": fold.n_train,
                    "n_test": fold.n_test,
                    "class_view": view,
                    "accuracy": self._pct(block.accuracy, decimals),
                    "precision": self._pct(block.precision, decimals),
                    "recall": self._pct(block.recall, decimals),
                    "f1": self._pct(block.f1, decimals),
                    "auc": None if fold.auc is None else round(fold.auc, decimals + 2),
                    "duplicate_count": fold.leakage.duplicate_count,
                    "shared_source_count": fold.leakage.shared_source_count,
                })
        return rows

    def to_csv(self, rows: List[Dict]) -> str:
        return pd.DataFrame(rows).to_csv(index=False, lineterminator="\n")

    def roc_csv(self, curve: RocCurve) -> str:
        frame = pd.DataFrame({
            "threshold": list(curve.thresholds),
            "fpr": curve.fpr,
            "tpr": curve.tpr,
        })
        return frame.to_csv(index=False, lineterminator="\n", float_format="%.10g")

    def roc_svg(self, curve: RocCurve, title: str) -> str:
        """Gráfico SVG autónomo: ejes 0–1, diagonal de referencia y AUC anotada"""
        figure, axes = plt.subplots(figsize=(5, 5))
        try:
            axes.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=1)
            axes.plot(curve.fpr, curve.tpr, color="tab:blue", linewidth=1.5)
            axes.set_xlim(0, 1)
            axes.set_ylim(0, 1)
            axes.set_xlabel("FPR")
            axes.set_ylabel("TPR")
            axes.set_title(title)
            axes.text(0.6, 0.1, f"AUC = {curve.auc:.4f}")
            buffer = io.StringIO()
            figure.savefig(buffer, format="svg", metadata={"Date": None})
        finally:
            plt.close(figure)
        return buffer.getvalue()


# Instancia singleton del servicio
evaluation_service = EvaluationService()
