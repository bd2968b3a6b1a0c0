"""Learnable per-task embeddings kept on the unit L1 sphere."""

from __future__ import annotations

import csv

import numpy as np

from brclab.autodiff import ParameterSet, Tensor, ops


def l1_project_rows(matrix: np.ndarray, rows=None) -> np.ndarray:
    """Divide rows (all, or the given indices) by their L1 norm, in place."""
    idx = np.arange(matrix.shape[0]) if rows is None else np.asarray(rows, dtype=np.int64)
    norms = np.abs(matrix[idx]).sum(axis=1)
    if np.any(norms == 0):
        bad = idx[norms == 0].tolist()
        raise ValueError(f"cannot L1-project all-zero embedding rows {bad}")
    matrix[idx] /= norms[:, None]
    return matrix


class TaskEmbeddingTable:
    """``[num_tasks, dim]`` table; rows are differentiable through ``lookup``."""

    def __init__(self, num_tasks: int, dim: int, rng: np.random.Generator | None = None, matrix=None):
        if matrix is None:
            if rng is None:
                raise ValueError("need an rng to initialise embeddings")
            matrix = rng.uniform(-1.0, 1.0, size=(num_tasks, dim))
            l1_project_rows(matrix)
        self.weight = Tensor(matrix, requires_grad=True)
        self.params = ParameterSet([("embeddings", self.weight)])

    @property
    def num_tasks(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self.weight.data

    def _check(self, tasks):
        tasks = np.asarray(tasks, dtype=np.int64)
        if tasks.size and (tasks.min() < 0 or tasks.max() >= self.num_tasks):
            raise IndexError(f"task id out of range for a table of {self.num_tasks} rows")
        return tasks

    def lookup(self, tasks) -> Tensor:
        """Rows for ``tasks`` (scalar id or array); gradients flow back into the table."""
        tasks = self._check(tasks)
        return ops.take_rows(self.weight, tasks)

    def lookup_const(self, tasks) -> np.ndarray:
        """Same rows as plain data; no gradient path."""
        return self.weight.data[self._check(tasks)].copy()

    def l1_project(self, rows=None) -> "TaskEmbeddingTable":
        l1_project_rows(self.weight.data, rows)
        return self

    def append_row(self, row) -> int:
        row = np.asarray(row, dtype=np.float64).reshape(1, -1)
        if row.shape[1] != self.dim:
            raise ValueError(f"embedding row must have length {self.dim}")
        l1_project_rows(row)
        self.weight.data = np.ascontiguousarray(np.vstack([self.weight.data, row]))
        return self.num_tasks - 1

    def pca_top2(self) -> np.ndarray:
        return pca_top2(self.weight.data)


def l1_project(table: TaskEmbeddingTable) -> TaskEmbeddingTable:
    return table.l1_project()


def lookup(table: TaskEmbeddingTable, task) -> Tensor:
    return table.lookup(task)


def augment_observation(obs, embedding):
    """``[obs | embedding]`` along the last axis; Tensors stay on the tape."""
    if isinstance(obs, Tensor) or isinstance(embedding, Tensor):
        return ops.concat([obs, embedding], axis=-1)
    return np.concatenate([np.asarray(obs, dtype=np.float64), np.asarray(embedding, dtype=np.float64)], axis=-1)


def pca_top2(matrix) -> np.ndarray:
    """Coordinates of each row on the top two principal directions.

    Each direction is signed so its largest-magnitude component is positive.
    A rank-0 table maps to zeros.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("PCA needs at least two rows")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:2]
    vecs = vecs[:, order]
    if vecs.shape[1] < 2:
        vecs = np.hstack([vecs, np.zeros((vecs.shape[0], 2 - vecs.shape[1]))])
    for k in range(vecs.shape[1]):
        j = np.argmax(np.abs(vecs[:, k]))
        if vecs[j, k] < 0:
            vecs[:, k] = -vecs[:, k]
    coords = centered @ vecs
    coords[np.abs(coords) < 1e-12 * max(1.0, np.abs(x).max())] = 0.0
    return coords


def write_pca_csv(path, coords: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task_id", "pc1", "pc2"])
        for i, (a, b) in enumerate(coords):
            w.writerow([i, repr(float(a)), repr(float(b))])
