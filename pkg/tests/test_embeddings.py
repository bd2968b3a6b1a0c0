import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brclab.autodiff import GradTape, ops
from brclab.embeddings import (
    TaskEmbeddingTable,
    augment_observation,
    l1_project,
    l1_project_rows,
    lookup,
    pca_top2,
    write_pca_csv,
)


def test_l1_project_example():
    np.testing.assert_allclose(l1_project_rows(np.array([[2.0, -2.0, 4.0]])), [[0.25, -0.25, 0.5]])


def test_l1_project_idempotent():
    row = np.array([[0.25, -0.25, 0.5]])
    np.testing.assert_array_equal(l1_project_rows(row.copy()), row)


def test_l1_project_scalar():
    np.testing.assert_array_equal(l1_project_rows(np.array([[0.5]])), [[1.0]])


def test_l1_project_zero_row_errors():
    with pytest.raises(ValueError, match=r"\[1\]"):
        l1_project_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_l1_project_selected_rows_only():
    m = np.array([[2.0, 2.0], [3.0, 1.0]])
    l1_project_rows(m, [1])
    np.testing.assert_array_equal(m, [[2.0, 2.0], [0.75, 0.25]])


def test_table_init_rows_on_l1_sphere(rng):
    table = TaskEmbeddingTable(8, 5, rng)
    np.testing.assert_allclose(np.abs(table.matrix).sum(axis=1), 1.0, atol=1e-12)
    l1_project(table)
    np.testing.assert_allclose(np.abs(table.matrix).sum(axis=1), 1.0, atol=1e-12)


def test_lookup_pure(rng):
    table = TaskEmbeddingTable(3, 4, rng)
    np.testing.assert_array_equal(lookup(table, 2).data, lookup(table, 2).data)


def test_lookup_unit_scalar(rng):
    assert abs(TaskEmbeddingTable(1, 1, rng).lookup(0).data.item()) == 1.0


def test_lookup_out_of_range(rng):
    table = TaskEmbeddingTable(3, 4, rng)
    with pytest.raises(IndexError):
        table.lookup(3)
    with pytest.raises(IndexError):
        table.lookup_const([-1])


def test_lookup_gradient_scatters_into_rows(rng):
    table = TaskEmbeddingTable(4, 3, rng)
    with GradTape() as tape:
        loss = ops.sum(table.lookup(np.array([1, 1, 3])))
    tape.backward(loss)
    np.testing.assert_array_equal(table.weight.grad, [[0, 0, 0], [2, 2, 2], [0, 0, 0], [1, 1, 1]])


def test_append_row_projects(rng):
    table = TaskEmbeddingTable(2, 3, rng)
    idx = table.append_row([1.0, 1.0, 2.0])
    assert idx == 2
    np.testing.assert_allclose(table.matrix[2], [0.25, 0.25, 0.5])
    with pytest.raises(ValueError):
        table.append_row([1.0, 2.0])


def test_augment_examples():
    np.testing.assert_array_equal(augment_observation([1.0, 2.0], [0.5, -0.5]), [1, 2, 0.5, -0.5])
    np.testing.assert_array_equal(augment_observation(np.zeros(0), [0.3, 0.7]), [0.3, 0.7])


@settings(max_examples=30, deadline=None)
@given(n=st.integers(0, 6), m=st.integers(0, 6))
def test_augment_length_additive(n, m):
    assert augment_observation(np.ones(n), np.ones(m)).shape == (n + m,)


def test_pca_rank_one():
    direction = np.array([1.0, -2.0, 0.5])
    coords = pca_top2(np.outer([0.1, 0.4, -0.3, 0.2], direction))
    assert np.all(np.abs(coords[:, 1]) <= 1e-9)


def test_pca_antipodal():
    coords = pca_top2(np.array([[0.5, 0.5], [-0.5, -0.5]]))
    np.testing.assert_allclose(coords[0], -coords[1], atol=1e-15)


def test_pca_rank_zero():
    np.testing.assert_array_equal(pca_top2(np.ones((3, 4))), 0.0)


def test_pca_matches_svd_oracle(rng):
    x = rng.standard_normal((8, 4))
    coords = pca_top2(x)
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    recon_oracle = centered @ vt[:2].T @ vt[:2]
    basis = np.linalg.lstsq(coords, centered, rcond=None)[0]
    np.testing.assert_allclose(coords @ basis, recon_oracle, atol=1e-9)
    for k in range(2):
        assert min(np.abs(coords[:, k] - centered @ vt[k]).max(), np.abs(coords[:, k] + centered @ vt[k]).max()) <= 1e-9


def test_pca_csv(tmp_path, rng):
    path = tmp_path / "pca.csv"
    write_pca_csv(path, pca_top2(rng.standard_normal((3, 4))))
    lines = path.read_text().splitlines()
    assert lines[0] == "task_id,pc1,pc2" and len(lines) == 4
