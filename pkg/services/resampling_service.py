import logging
import math

import numpy as np

from errors import EmptyDatasetError, SchemaMismatchError, SingleClassDatasetError
from models import Dataset
from schemas import LeakageAudit, ResampleSpec
from services.randomness import make_rng

logger = logging.getLogger(__name__)


class ResamplingService:
    """Servicio de bootstrap (muestreo con reemplazo) y balanceo de clases"""

    def bootstrap_sample(self, dataset: Dataset, size: int, seed: int) -> Dataset:
        """
        Réplica bootstrap de `size` instancias extraídas uniformemente con
        reemplazo. Determinista bajo (checksum, semilla).
        """
        if len(dataset) == 0:
            raise EmptyDatasetError("no se puede remuestrear un conjunto vacío")
        if size < 1:
            raise ValueError("size debe ser positivo")
        rng = make_rng(seed, dataset.checksum_entropy)
        indices = rng.integers(0, len(dataset), size=size)
        return dataset.subset(indices, origin=f"{dataset.origin}+bootstrap")

    def balance_classes(self, dataset: Dataset, spec: ResampleSpec) -> Dataset:
        """
        Sobremuestrea la clase minoritaria con reemplazo hasta la cuota del
        spec; la mayoría pasa intacta y el resultado se baraja con la semilla.
        """
        if not dataset.has_both_classes:
            raise SingleClassDatasetError(f"{dataset.origin} tiene una sola clase; no hay nada que balancear")

        rng = make_rng(spec.seed, dataset.checksum_entropy)
        labels = dataset.labels
        minority_cls = bool(dataset.n_defective <= dataset.n_non_defective)
        minority = np.flatnonzero(labels == minority_cls)
        majority = np.flatnonzero(labels != minority_cls)

        if spec.downsample_majority:
            kept = np.sort(rng.choice(majority, size=len(minority), replace=False))
            indices = np.concatenate([kept, minority])
            logger.info(f"{dataset.origin}: mayoría submuestreada {len(majority)} -> {len(kept)}")
        else:
            target = self._minority_target(len(majority), spec)
            extra = max(target - len(minority), 0)
            drawn = rng.choice(minority, size=extra, replace=True)
            indices = np.concatenate([np.arange(len(dataset)), drawn])
            logger.info(f"{dataset.origin}: minoría sobremuestreada {len(minority)} -> {len(minority) + extra}")

        indices = indices[rng.permutation(len(indices))]
        return dataset.subset(indices, origin=f"{dataset.origin}+balanced")

    @staticmethod
    def _minority_target(majority_count: int, spec: ResampleSpec) -> int:
        if spec.strategy == "balance_to_majority":
            return majority_count
        fraction = spec.target_minority_fraction
        return int(math.ceil(fraction * majority_count / (1.0 - fraction) - 1e-9))

    def leakage_audit(self, train: Dataset, test: Dataset) -> LeakageAudit:
        """
        Cuenta instancias de prueba cuyo vector exacto también está en
        entrenamiento, y cuántas comparten fila cruda (duplicado inducido).
        """
        if train.schema.normalized_names != test.schema.normalized_names:
            raise SchemaMismatchError("entrenamiento y prueba tienen esquemas distintos")
        if len(test) == 0:
            return LeakageAudit(duplicate_count=0, duplicate_fraction_of_test=0.0)

        # +0.0 normaliza -0.0 para comparar bytes
        train_rows = {row.tobytes() for row in np.ascontiguousarray(train.features + 0.0)}
        test_rows = np.ascontiguousarray(test.features + 0.0)
        vector_hit = np.array([row.tobytes() in train_rows for row in test_rows], dtype=bool)
        if train.root_checksum == test.root_checksum:
            source_hit = np.isin(test.provenance, train.provenance)
        else:
            source_hit = np.zeros(len(test), dtype=bool)

        duplicates = int(vector_hit.sum())
        return LeakageAudit(
            duplicate_count=duplicates,
            duplicate_fraction_of_test=duplicates / len(test),
            shared_source_count=int(source_hit.sum()),
            natural_duplicate_count=int(np.sum(vector_hit & ~source_hit)),
        )


# Instancia singleton del servicio
resampling_service = ResamplingService()
