"""
Constructor CART compartido por el árbol de decisión, el bosque aleatorio y
el regresor en árbol de la clasificación por regresión.

Criterios: "gini" (objetivo binario 0/1, hoja = fracción defectuosa con
suavizado de Laplace) y "mse" (objetivo real, hoja = media).
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

LEAF = -1


@dataclass(frozen=True)
class TreeArrays:
    """Árbol aplanado: un nodo por posición; `feature == -1` marca hoja"""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def node_count(self) -> int:
        return int(self.feature.shape[0])

    @property
    def depth(self) -> int:
        depths = np.zeros(self.node_count, dtype=np.int64)
        for node in range(self.node_count):
            if self.feature[node] != LEAF:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def apply(self, features: np.ndarray) -> np.ndarray:
        """Índice de hoja para cada fila (recorrido vectorizado por niveles)"""
        node = np.zeros(features.shape[0], dtype=np.int64)
        while True:
            split_feature = self.feature[node]
            active = np.flatnonzero(split_feature != LEAF)
            if active.size == 0:
                return node
            current = node[active]
            go_left = features[active, split_feature[active]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.value[self.apply(features)]

    def to_dict(self) -> Dict[str, list]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, state: Dict[str, list]) -> "TreeArrays":
        return cls(
            feature=np.asarray(state["feature"], dtype=np.int64),
            threshold=np.asarray(state["threshold"], dtype=np.float64),
            left=np.asarray(state["left"], dtype=np.int64),
            right=np.asarray(state["right"], dtype=np.int64),
            value=np.asarray(state["value"], dtype=np.float64),
            n_samples=np.asarray(state["n_samples"], dtype=np.int64),
        )

    @classmethod
    def leaf(cls, value: float, n_samples: int = 0) -> "TreeArrays":
        return cls(
            feature=np.array([LEAF]), threshold=np.array([0.0]),
            left=np.array([LEAF]), right=np.array([LEAF]),
            value=np.array([float(value)]), n_samples=np.array([n_samples]),
        )


def gini(positives: float, total: float) -> float:
    """Impureza de Gini de un nodo binario"""
    if total == 0:
        return 0.0
    p = positives / total
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def best_split(features: np.ndarray, target: np.ndarray, candidates: np.ndarray,
               criterion: str, min_leaf: int) -> Optional[Tuple[int, float, float]]:
    """
    Mejor (atributo, umbral, impureza ponderada) entre los puntos medios de
    valores distintos consecutivos. Empates: menor índice de atributo y luego
    menor umbral.
    """
    n = features.shape[0]
    if n < 2 * min_leaf:
        return None

    columns = features[:, candidates]
    order = np.argsort(columns, axis=0, kind="stable")
    sorted_x = np.take_along_axis(columns, order, axis=0)
    sorted_y = target[order]

    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    sum_left = np.cumsum(sorted_y, axis=0)[:-1]
    sum_right = sorted_y.sum(axis=0) - sum_left

    if criterion == "gini":
        # n·Gini = 2·s·(n - s)/n para objetivos 0/1
        impurity = 2.0 * sum_left * (n_left - sum_left) / n_left \
            + 2.0 * sum_right * (n_right - sum_right) / n_right
    else:
        squares = np.cumsum(sorted_y * sorted_y, axis=0)
        sq_left = squares[:-1]
        sq_right = squares[-1] - sq_left
        impurity = (sq_left - sum_left ** 2 / n_left) + (sq_right - sum_right ** 2 / n_right)
    impurity = impurity / n

    valid = (sorted_x[:-1] < sorted_x[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    impurity = np.where(valid, impurity, np.inf)

    best = None
    for column, feature in enumerate(candidates):
        position = int(np.argmin(impurity[:, column]))
        value = float(impurity[position, column])
        if not np.isfinite(value):
            continue
        if best is None or value < best[2]:
            threshold = (sorted_x[position, column] + sorted_x[position + 1, column]) / 2.0
            best = (int(feature), float(threshold), value)
    return best


def build_tree(features: np.ndarray, target: np.ndarray, criterion: str = "gini",
               max_depth: Optional[int] = None, min_leaf: int = 1,
               max_features: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> TreeArrays:
    """CART voraz con pila explícita (sin límite de recursión)"""
    n_features = features.shape[1]
    subset_size = n_features if max_features is None else min(max_features, n_features)
    target = np.asarray(target, dtype=np.float64)

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []
    n_samples: List[int] = []

    def new_node(rows: np.ndarray) -> int:
        y = target[rows]
        if criterion == "gini":
            leaf_value = (y.sum() + 1.0) / (len(y) + 2.0)
        else:
            leaf_value = float(y.mean())
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(leaf_value))
        n_samples.append(len(rows))
        return len(feature) - 1

    root = new_node(np.arange(features.shape[0]))
    stack = [(root, np.arange(features.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        y = target[rows]
        if np.all(y == y[0]):
            continue
        if max_depth is not None and depth >= max_depth:
            continue

        if subset_size < n_features:
            candidates = np.sort(rng.choice(n_features, size=subset_size, replace=False))
        else:
            candidates = np.arange(n_features)
        split = best_split(features[rows], y, candidates, criterion, min_leaf)
        if split is None:
            continue

        split_feature, split_threshold, _ = split
        goes_left = features[rows, split_feature] <= split_threshold
        left_rows, right_rows = rows[goes_left], rows[~goes_left]
        if left_rows.size == 0 or right_rows.size == 0:
            # punto medio redondeado sobre uno de los extremos
            continue
        left_node = new_node(left_rows)
        right_node = new_node(right_rows)
        feature[node] = split_feature
        threshold[node] = split_threshold
        left[node] = left_node
        right[node] = right_node
        stack.append((right_node, right_rows, depth + 1))
        stack.append((left_node, left_rows, depth + 1))

    return TreeArrays(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        n_samples=np.asarray(n_samples, dtype=np.int64),
    )
