import pytest
import numpy as np
from scipy.stats import mannwhitneyu
from sklearn.metrics import accuracy_score, f1_score, precision_score, recall_score, roc_auc_score, roc_curve

from errors import EmptyDatasetError, ReportMismatchError, SingleClassActualsError
from models import ClassLabel, ConfusionMatrix
from schemas import EvaluationReport, FoldResult, LeakageAudit
from services.evaluation_service import DEGENERATE, evaluation_service

D, N = ClassLabel.DEFECTIVE, ClassLabel.NON_DEFECTIVE


def make_report(model_id: str, predicted, actual, origin: str = "CM1", checksum: str = "abc",
                protocol: str = "paper_faithful", auc=None) -> EvaluationReport:
    blocks, matrices = evaluation_service.per_class(np.asarray(predicted), np.asarray(actual))
    return EvaluationReport(
        model_id=model_id, protocol=protocol, dataset_origin=origin, dataset_checksum=checksum,
        seed=1, spec_hash="0" * 12, per_class=blocks, confusion=matrices, auc=auc,
    )


def make_fold(fold: int, predicted, actual) -> FoldResult:
    blocks, matrices = evaluation_service.per_class(np.asarray(predicted), np.asarray(actual))
    return FoldResult(
        repetition=0, fold=fold, n_train=10, n_test=len(actual), per_class=blocks, confusion=matrices,
        leakage=LeakageAudit(duplicate_count=0, duplicate_fraction_of_test=0.0),
    )


class TestConfusionMetrics:
    """Pruebas para la matriz de confusión y sus métricas."""

    def test_reference_values(self):
        """Test: Debería calcular 0.85 / 0.9091 / 0.8333 / 0.8696 para tp50 fp5 fn10 tn35."""
        # Act
        metrics = evaluation_service.metrics(ConfusionMatrix(tp=50, fp=5, fn=10, tn=35))

        # Assert
        assert metrics.accuracy == pytest.approx(0.85)
        assert metrics.precision == pytest.approx(0.9091, abs=1e-4)
        assert metrics.recall == pytest.approx(0.8333, abs=1e-4)
        assert metrics.f1 == pytest.approx(0.8696, abs=1e-4)
        assert metrics.flags == []

    def test_matches_reference_on_random_predictions(self):
        """Test: Debería coincidir con sklearn en 50 matrices aleatorias y ambas vistas."""
        rng = np.random.default_rng(0)
        for _ in range(50):
            # Arrange
            actual = rng.random(30) < rng.uniform(0.1, 0.9)
            predicted = rng.random(30) < rng.uniform(0.1, 0.9)

            for view, pos_label in ((D, True), (N, False)):
                # Act
                metrics = evaluation_service.metrics(evaluation_service.confusion_from_arrays(predicted, actual, view))

                # Assert
                assert metrics.accuracy == pytest.approx(accuracy_score(actual, predicted))
                assert metrics.precision == pytest.approx(
                    precision_score(actual, predicted, pos_label=pos_label, zero_division=0))
                assert metrics.recall == pytest.approx(
                    recall_score(actual, predicted, pos_label=pos_label, zero_division=0))
                assert metrics.f1 == pytest.approx(f1_score(actual, predicted, pos_label=pos_label, zero_division=0))

    def test_pairs_and_views(self):
        """Test: Debería intercambiar tp↔tn y fp↔fn al cambiar de clase positiva."""
        # Arrange
        pairs = [(D, D), (D, N), (N, D), (N, N), (N, N)]

        # Act
        defective = evaluation_service.confusion(pairs, D)
        non_defective = evaluation_service.confusion(pairs, N)

        # Assert
        assert (defective.tp, defective.fp, defective.fn, defective.tn) == (1, 1, 1, 2)
        assert non_defective == defective.swapped()

    def test_all_predicted_defective(self):
        """Test: Debería contar tp=5, fp=5 con todo predicho Defective y mitad real."""
        pairs = [(D, D)] * 5 + [(D, N)] * 5
        cm = evaluation_service.confusion(pairs, D)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (5, 5, 0, 0)

    def test_degenerate_denominator(self):
        """Test: Debería devolver 0 y marcar el denominador nulo."""
        metrics = evaluation_service.metrics(ConfusionMatrix(tp=0, fp=0, fn=3, tn=7))
        assert metrics.precision == 0.0
        assert metrics.f1 == 0.0
        assert f"precision:{DEGENERATE}" in metrics.flags
        assert f"f1:{DEGENERATE}" in metrics.flags
        assert f"recall:{DEGENERATE}" not in metrics.flags

    def test_empty(self):
        """Test: Debería fallar con EmptyDataset sin predicciones."""
        with pytest.raises(EmptyDatasetError):
            evaluation_service.confusion([])

    def test_accuracy_is_view_independent(self):
        """Test: Debería dar la misma exactitud en ambas vistas."""
        blocks, _ = evaluation_service.per_class(np.array([True, False, True]), np.array([True, True, False]))
        assert blocks["defective"].accuracy == blocks["non_defective"].accuracy


class TestRoc:
    """Pruebas para la curva ROC y el AUC."""

    def test_four_points(self):
        """Test: Debería dar AUC 0.75 para {0.9P, 0.8N, 0.7P, 0.1N}."""
        # Act
        curve = evaluation_service.roc([(0.9, D), (0.8, N), (0.7, D), (0.1, N)])

        # Assert
        assert curve.auc == pytest.approx(0.75)
        assert curve.points[0] == (0.0, 0.0)
        assert curve.points[-1] == (1.0, 1.0)
        assert curve.thresholds[0] == float("inf")

    def test_perfect_separation(self):
        """Test: Debería dar AUC exactamente 1.0 con puntajes separados."""
        curve = evaluation_service.roc([(0.9, D), (0.7, D), (0.3, N), (0.2, N)])
        assert curve.auc == 1.0

    def test_all_scores_tied(self):
        """Test: Debería reducir la curva a (0,0)-(1,1) con AUC 0.5 si todo empata."""
        curve = evaluation_service.roc([(0.4, D), (0.4, N), (0.4, N)])
        assert curve.points == ((0.0, 0.0), (1.0, 1.0))
        assert curve.auc == 0.5

    def test_auc_equals_mann_whitney(self):
        """Test: Debería igualar U/(P·N) en 100 conjuntos con empates."""
        rng = np.random.default_rng(1)
        for _ in range(100):
            # Arrange
            actual = rng.random(40) < 0.4
            actual[:2] = [True, False]
            scores = rng.integers(0, 6, size=40).astype(np.float64)

            # Act
            curve = evaluation_service.roc_from_arrays(scores, actual)

            # Assert
            u = mannwhitneyu(scores[actual], scores[~actual]).statistic
            assert curve.auc == pytest.approx(u / (actual.sum() * (~actual).sum()), abs=1e-12)

    def test_matches_reference_curve(self):
        """Test: Debería coincidir con roc_curve/roc_auc_score de sklearn."""
        rng = np.random.default_rng(2)
        for _ in range(20):
            actual = rng.random(50) < 0.3
            actual[:2] = [True, False]
            scores = np.round(rng.random(50), 1)

            curve = evaluation_service.roc_from_arrays(scores, actual)
            fpr, tpr, _ = roc_curve(actual, scores, drop_intermediate=False)

            np.testing.assert_allclose(curve.fpr, fpr)
            np.testing.assert_allclose(curve.tpr, tpr)
            assert curve.auc == pytest.approx(roc_auc_score(actual, scores))

    def test_non_defective_view(self):
        """Test: Debería conservar el AUC al invertir la clase positiva."""
        actual = np.array([True, False, True, False, False])
        scores = np.array([0.9, 0.8, 0.4, 0.3, 0.5])
        defective = evaluation_service.roc_from_arrays(scores, actual, D)
        non_defective = evaluation_service.roc_from_arrays(scores, actual, N)
        assert non_defective.auc == pytest.approx(defective.auc)
        assert non_defective.positive_class is N

    def test_monotone_points(self, promise_dataset):
        """Test: Debería producir puntos no decrecientes en ambos ejes."""
        curve = evaluation_service.roc_from_arrays(promise_dataset.features[:, 0], promise_dataset.labels)
        assert (np.diff(curve.fpr) >= 0).all()
        assert (np.diff(curve.tpr) >= 0).all()

    def test_single_class_actuals(self):
        """Test: Debería fallar con SingleClassActuals si falta una clase."""
        with pytest.raises(SingleClassActualsError):
            evaluation_service.roc([(0.3, D), (0.6, D)])


class TestReports:
    """Pruebas para la agregación y las tablas comparativas."""

    def test_aggregate(self):
        """Test: Debería promediar métricas y sumar matrices."""
        # Arrange
        folds = [
            make_fold(0, [True, True, False, False], [True, False, False, False]),
            make_fold(1, [True, False, False, False], [True, True, False, False]),
        ]

        # Act
        blocks, matrices = evaluation_service.aggregate(folds)

        # Assert
        assert blocks["defective"].accuracy == pytest.approx(0.75)
        assert blocks["defective"].precision == pytest.approx(0.75)
        assert matrices["defective"].tp == 2
        assert matrices["defective"].fp == 1
        assert matrices["defective"].fn == 1
        assert matrices["defective"].tn == 4

    def test_compare_models_sorted(self):
        """Test: Debería ordenar las filas por identificador de modelo."""
        # Arrange
        reports = [
            make_report("svm", [True, False], [True, False]),
            make_report("knn", [False, False], [True, False]),
        ]

        # Act
        table = evaluation_service.compare_models(reports)
        both = evaluation_service.compare_models(reports, class_view="both")

        # Assert
        assert [row.model_id for row in table.rows] == ["knn", "svm"]
        assert [(row.model_id, row.class_view) for row in both.rows] == [
            ("knn", "defective"), ("knn", "non_defective"), ("svm", "defective"), ("svm", "non_defective"),
        ]

    def test_compare_models_mismatch(self):
        """Test: Debería fallar con ReportMismatch si difieren conjunto o protocolo."""
        base = make_report("knn", [True, False], [True, False])
        with pytest.raises(ReportMismatchError):
            evaluation_service.compare_models([base, make_report("svm", [True, False], [True, False], checksum="x")])
        with pytest.raises(ReportMismatchError):
            evaluation_service.compare_models(
                [base, make_report("svm", [True, False], [True, False], protocol="leakage_free")]
            )

    def test_report_text_percentages(self):
        """Test: Debería mostrar porcentajes con dos decimales."""
        report = make_report("knn", [True, True, False, False], [True, False, False, False], auc=0.8)
        text = evaluation_service.report_text(report)
        assert "accuracy  = 75.00%" in text
        assert "[non_defective]" in text
        assert "AUC: 0.8000" in text

    def test_report_text_published_accuracy(self):
        """Test: Debería mostrar la exactitud publicada y la diferencia en puntos."""
        report = make_report("knn", [True, True, False, False], [True, False, False, False])
        report = report.model_copy(update={"published_accuracy": 80.0})
        text = evaluation_service.report_text(report)
        assert "Publicado: accuracy 80.00% (diferencia -5.00 pp)" in text

    def test_comparison_csv(self):
        """Test: Debería escribir una fila por modelo con la procedencia."""
        table = evaluation_service.compare_models([make_report("knn", [True, False], [True, False], auc=1.0)])
        csv_text = evaluation_service.to_csv(evaluation_service.comparison_rows(table))
        header, row = csv_text.strip().split("\n")
        assert header.split(",")[:3] == ["dataset", "dataset_checksum", "protocol"]
        assert ",knn,defective,100.0,100.0,100.0,100.0,1.0" in row


class TestRocArtifacts:
    """Pruebas para la exportación de curvas ROC."""

    def test_roc_csv(self):
        """Test: Debería escribir una fila por punto de la curva."""
        curve = evaluation_service.roc([(0.9, D), (0.8, N), (0.7, D), (0.1, N)])
        lines = evaluation_service.roc_csv(curve).strip().split("\n")
        assert lines[0] == "threshold,fpr,tpr"
        assert len(lines) == len(curve.points) + 1
        assert lines[-1].endswith(",1,1")

    def test_roc_svg_is_reproducible(self):
        """Test: Debería generar el mismo SVG dos veces."""
        curve = evaluation_service.roc([(0.9, D), (0.8, N), (0.7, D), (0.1, N)])
        first = evaluation_service.roc_svg(curve, "CM1 knn")
        second = evaluation_service.roc_svg(curve, "CM1 knn")
        assert "<svg" in first
        assert first == second
