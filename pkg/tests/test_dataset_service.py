import hashlib
import io

import pytest
import numpy as np
import yaml

from errors import (
    ArityMismatchError, DatasetNotFoundError, EmptyDatasetError, MalformedHeaderError, MissingValueError,
    NonNumericFeatureError, TooFewInstancesForFoldsError, UnknownLabelValueError,
)
from models import PROMISE_ATTRIBUTES, ClassLabel
from schemas import SplitPlan
from services.dataset_service import DatasetService, dataset_service

MINIMAL_ARFF = b"""% comentario
@relation minimal
@attribute loc numeric
@attribute defects {false,true}
@data
3.0,true
"""


class TestParseArff:
    """Pruebas para la lectura de archivos ARFF."""

    def test_minimal_file(self):
        """Test: Debería leer un ARFF mínimo con una instancia defectuosa."""
        # Act
        dataset = dataset_service.parse_arff(MINIMAL_ARFF)

        # Assert
        assert len(dataset) == 1
        assert dataset.schema.names == ["loc"]
        assert next(dataset.instances()).label is ClassLabel.DEFECTIVE
        assert dataset.origin == "minimal"

    def test_accepts_stream(self):
        """Test: Debería aceptar un flujo de bytes además de bytes."""
        dataset = dataset_service.parse_arff(io.BytesIO(MINIMAL_ARFF))
        assert len(dataset) == 1

    def test_checksum_is_sha256_of_bytes(self):
        """Test: Debería usar el sha256 del archivo como checksum."""
        dataset = dataset_service.parse_arff(MINIMAL_ARFF)
        assert dataset.checksum == hashlib.sha256(MINIMAL_ARFF).hexdigest()

    def test_quoted_names_and_integer_types(self):
        """Test: Debería aceptar nombres entre comillas y tipos integer/real."""
        # Arrange
        content = b"""@RELATION q
@ATTRIBUTE 'v(g)' INTEGER
@ATTRIBUTE e REAL
@ATTRIBUTE defects {N,Y}
@DATA
1,2.5,Y
3,4.5,N
"""
        # Act
        dataset = dataset_service.parse_arff(content)

        # Assert
        assert dataset.schema.names == ["v(g)", "e"]
        assert dataset.labels.tolist() == [True, False]

    def test_missing_data_section(self):
        """Test: Debería fallar con MalformedHeader si falta @data."""
        content = b"@relation x\n@attribute a numeric\n@attribute defects {false,true}\n"
        with pytest.raises(MalformedHeaderError):
            dataset_service.parse_arff(content)

    def test_arity_mismatch_reports_line(self):
        """Test: Debería fallar con ArityMismatch indicando la línea."""
        # Arrange
        header = "@relation x\n" + "".join(f"@attribute a{i} numeric\n" for i in range(21))
        header += "@attribute defects {false,true}\n@data\n"
        row = ",".join(["1"] * 19) + ",true\n"

        # Act & Assert
        with pytest.raises(ArityMismatchError) as info:
            dataset_service.parse_arff((header + row).encode())
        assert info.value.line == 25

    def test_non_numeric_feature(self):
        """Test: Debería fallar con NonNumericFeature ante un valor no numérico."""
        content = MINIMAL_ARFF.replace(b"3.0,true", b"abc,true")
        with pytest.raises(NonNumericFeatureError):
            dataset_service.parse_arff(content)

    def test_unknown_label_value(self):
        """Test: Debería fallar con UnknownLabelValue ante una etiqueta no declarada."""
        content = MINIMAL_ARFF.replace(b"3.0,true", b"3.0,maybe")
        with pytest.raises(UnknownLabelValueError):
            dataset_service.parse_arff(content)

    def test_missing_value_and_drop(self):
        """Test: Debería rechazar '?' salvo que se pida descartar la fila."""
        content = MINIMAL_ARFF + b"?,false\n"
        with pytest.raises(MissingValueError):
            dataset_service.parse_arff(content)

        dataset = dataset_service.parse_arff(content, drop_missing=True)
        assert len(dataset) == 1

    def test_empty_data_section(self):
        """Test: Debería fallar con EmptyDataset si @data no tiene filas."""
        content = b"@relation x\n@attribute a numeric\n@attribute defects {false,true}\n@data\n"
        with pytest.raises(EmptyDatasetError):
            dataset_service.parse_arff(content)

    def test_custom_truthy_set(self):
        """Test: Debería mapear el otro valor declarado a NonDefective con un conjunto verdadero propio."""
        # Arrange
        content = b"@relation x\n@attribute a numeric\n@attribute defects {clean,buggy}\n@data\n1,buggy\n2,clean\n"
        service = DatasetService(truthy_labels=["buggy"])

        # Act
        dataset = service.parse_arff(content)

        # Assert
        assert dataset.labels.tolist() == [True, False]

    def test_declared_label_needs_one_truthy_value(self):
        """Test: Debería fallar si ninguno o ambos valores declarados son verdaderos."""
        content = b"@relation x\n@attribute a numeric\n@attribute defects {clean,buggy}\n@data\n1,buggy\n2,clean\n"
        with pytest.raises(UnknownLabelValueError):
            dataset_service.parse_arff(content)
        with pytest.raises(UnknownLabelValueError):
            DatasetService(truthy_labels=["buggy", "clean"]).parse_arff(content)

    def test_parses_synthetic_promise_file(self, promise_arff_file, promise_dataset):
        """Test: Debería recuperar exactamente los valores escritos."""
        dataset = dataset_service.parse_arff(promise_arff_file.read_bytes())
        assert len(dataset) == len(promise_dataset)
        assert dataset.n_features == 21
        np.testing.assert_array_equal(dataset.features, promise_dataset.features)
        np.testing.assert_array_equal(dataset.labels, promise_dataset.labels)


class TestParseCsv:
    """Pruebas para la lectura de CSV."""

    def test_header_row(self):
        """Test: Debería leer la cabecera y una instancia no defectuosa."""
        # Arrange
        header = ",".join(PROMISE_ATTRIBUTES) + ",defects\n"
        row = ",".join(["1.1"] * 21) + ",false\n"

        # Act
        dataset = dataset_service.parse_csv((header + row).encode())

        # Assert
        assert len(dataset) == 1
        assert dataset.n_defective == 0
        assert dataset.schema.names == list(PROMISE_ATTRIBUTES)

    def test_without_header(self):
        """Test: Debería generar nombres sintéticos f0..f{p-1}."""
        dataset = dataset_service.parse_csv(b"1,2,yes\n3,4,no\n", has_header=False)
        assert dataset.schema.names == ["f0", "f1"]
        assert dataset.schema.label_name == "defects"
        assert dataset.labels.tolist() == [True, False]

    def test_empty_file(self):
        """Test: Debería fallar con MalformedHeader ante un archivo vacío."""
        with pytest.raises(MalformedHeaderError):
            dataset_service.parse_csv(b"")

    def test_same_table_as_arff(self):
        """Test: Debería leer lo mismo que el ARFF equivalente salvo el checksum."""
        # Arrange
        arff = b"""@relation kc2
@attribute loc numeric
@attribute ev(g) numeric
@attribute problems {no,yes}
@data
12,1,no
40,3.5,yes
7,1,no
"""
        csv = b"loc,ev(g),problems\n12,1,no\n40,3.5,yes\n7,1,no\n"

        # Act
        from_arff = dataset_service.parse_arff(arff)
        from_csv = dataset_service.parse_csv(csv)

        # Assert
        np.testing.assert_array_equal(from_arff.features, from_csv.features)
        assert from_arff.labels.tolist() == from_csv.labels.tolist() == [False, True, False]
        assert from_arff.schema.names == from_csv.schema.names == ["loc", "ev(g)"]
        assert from_arff.schema.label_name == from_csv.schema.label_name == "problems"
        assert from_arff.checksum != from_csv.checksum

    def test_csv_round_trip(self, promise_dataset):
        """Test: Debería conservar valores y etiquetas al exportar y releer."""
        # Act
        exported = dataset_service.to_csv(promise_dataset)
        reread = dataset_service.parse_csv(exported)

        # Assert
        assert reread.schema.names == promise_dataset.schema.names
        np.testing.assert_array_equal(reread.features, promise_dataset.features)
        np.testing.assert_array_equal(reread.labels, promise_dataset.labels)


class TestLoad:
    """Pruebas para la carga desde disco y el manifiesto de checksums."""

    def test_missing_file(self, tmp_path):
        """Test: Debería fallar con DatasetNotFound si el archivo no existe."""
        with pytest.raises(DatasetNotFoundError):
            dataset_service.load(tmp_path / "cm1.arff")

    def test_origin_from_stem(self, promise_arff_file, tmp_path):
        """Test: Debería usar el nombre del archivo en mayúsculas como origen."""
        dataset = dataset_service.load(promise_arff_file, lock_path=str(tmp_path / "none.lock"))
        assert dataset.origin == "SYN"

    def test_record_and_check_lock(self, promise_arff_file, tmp_path):
        """Test: Debería registrar el sha256 y luego reconocerlo."""
        # Arrange
        lock = tmp_path / "datasets.lock"
        dataset = dataset_service.load(promise_arff_file, lock_path=str(lock))

        # Act
        assert dataset_service.check_lock("syn.arff", dataset.checksum, str(lock)) is False
        dataset_service.record_lock("syn.arff", dataset, str(lock))

        # Assert
        content = yaml.safe_load(lock.read_text())
        assert content["datasets"]["syn.arff"]["sha256"] == dataset.checksum
        assert content["datasets"]["syn.arff"]["instances"] == len(dataset)
        assert dataset_service.check_lock("syn.arff", dataset.checksum, str(lock)) is True
        assert dataset_service.check_lock("syn.arff", "0" * 64, str(lock)) is False


class TestValidateSchema:
    """Pruebas para la validación del esquema PROMISE."""

    def test_canonical_names(self, promise_dataset):
        """Test: Debería devolver una lista vacía con los 21 nombres canónicos."""
        assert dataset_service.validate_schema(promise_dataset) == []

    def test_case_insensitive(self, dataset_factory, promise_dataset):
        """Test: Debería aceptar LOC en lugar de loc."""
        names = ["LOC"] + list(PROMISE_ATTRIBUTES[1:])
        renamed = dataset_factory(promise_dataset.features, promise_dataset.labels, names=names)
        assert dataset_service.validate_schema(renamed) == []

    def test_missing_attribute(self, dataset_factory, promise_dataset):
        """Test: Debería reportar un único MissingAttribute con 20 atributos."""
        reduced = dataset_factory(promise_dataset.features[:, 1:], promise_dataset.labels,
                                  names=PROMISE_ATTRIBUTES[1:])
        violations = dataset_service.validate_schema(reduced)
        assert [v.kind for v in violations] == ["MissingAttribute"]
        assert violations[0].attribute == "loc"

    def test_lenient_counts_features(self, dataset_factory):
        """Test: Debería pedir 21 atributos numéricos en modo flexible."""
        dataset = dataset_factory(np.zeros((2, 3)), [True, False])
        violations = dataset_service.validate_schema(dataset, strict_promise=False)
        assert [v.kind for v in violations] == ["WrongFeatureCount"]

    def test_duplicate_attribute(self, dataset_factory):
        """Test: Debería detectar atributos repetidos."""
        dataset = dataset_factory(np.zeros((2, 2)), [True, False], names=["loc", "LOC"])
        kinds = [v.kind for v in dataset_service.validate_schema(dataset, strict_promise=False)]
        assert "DuplicateAttribute" in kinds


class TestClassDistribution:
    """Pruebas para la distribución de clases."""

    def test_one_of_each(self, dataset_factory):
        """Test: Debería devolver (0.5, 0.5) con una instancia por clase."""
        dataset = dataset_factory([[0.0], [1.0]], [True, False])
        assert dataset_service.class_distribution(dataset) == (0.5, 0.5)

    def test_sums_to_one(self, promise_dataset):
        """Test: Debería sumar 1 dentro de 1e-12."""
        defective, non_defective = dataset_service.class_distribution(promise_dataset)
        assert abs(defective + non_defective - 1.0) < 1e-12
        assert defective == pytest.approx(30 / 120)


class TestMakeSplits:
    """Pruebas para las particiones holdout y k-fold."""

    def test_stratified_kfold_one_of_each(self, dataset_factory):
        """Test: Debería poner exactamente una instancia de cada clase por pliegue."""
        # Arrange
        dataset = dataset_factory(np.arange(10.0), [True] * 5 + [False] * 5)

        # Act
        splits = dataset_service.make_splits(dataset, SplitPlan(kind="kfold", k=5, seed=3))

        # Assert
        assert len(splits) == 5
        for split in splits:
            assert sorted(dataset.labels[split.test].tolist()) == [False, True]

    def test_kfold_exact_partition_and_balance(self, promise_dataset):
        """Test: Debería particionar exactamente con ±1 instancia por clase y pliegue."""
        # Act
        splits = dataset_service.make_splits(promise_dataset, SplitPlan(kind="kfold", k=7, seed=5))

        # Assert
        all_tests = np.concatenate([split.test for split in splits])
        assert sorted(all_tests.tolist()) == list(range(len(promise_dataset)))
        for split in splits:
            assert set(split.train.tolist()).isdisjoint(split.test.tolist())
            assert len(split.train) + len(split.test) == len(promise_dataset)
        defective_per_fold = [int(promise_dataset.labels[split.test].sum()) for split in splits]
        non_defective_per_fold = [len(split.test) - count for split, count in zip(splits, defective_per_fold)]
        assert max(defective_per_fold) - min(defective_per_fold) <= 1
        assert max(non_defective_per_fold) - min(non_defective_per_fold) <= 1

    def test_holdout_sizes(self, dataset_factory):
        """Test: Debería separar 70/30 índices disjuntos en 100 instancias."""
        # Arrange
        dataset = dataset_factory(np.arange(100.0), [i % 4 == 0 for i in range(100)])

        # Act
        (split,) = dataset_service.make_splits(dataset, SplitPlan(kind="holdout", train_fraction=0.7, seed=1))

        # Assert
        assert len(split.train) == 70
        assert len(split.test) == 30
        assert set(split.train.tolist()).isdisjoint(split.test.tolist())
        assert int(dataset.labels[split.train].sum()) == 18 or int(dataset.labels[split.train].sum()) == 17

    def test_deterministic(self, promise_dataset):
        """Test: Debería devolver las mismas listas con la misma semilla."""
        plan = SplitPlan(kind="kfold", k=5, seed=99)
        first = dataset_service.make_splits(promise_dataset, plan)
        second = dataset_service.make_splits(promise_dataset, plan)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.train, b.train)
            np.testing.assert_array_equal(a.test, b.test)

    def test_too_few_instances(self, dataset_factory):
        """Test: Debería fallar si hay menos instancias que pliegues."""
        dataset = dataset_factory(np.arange(3.0), [True, False, True])
        with pytest.raises(TooFewInstancesForFoldsError):
            dataset_service.make_splits(dataset, SplitPlan(kind="kfold", k=5))
