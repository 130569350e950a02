"""
疎ベクトルの値型と共通演算

DenseVector は長さ固定の1次元 ``numpy.ndarray`` (float64) として扱う。
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError

DenseVector = np.ndarray


@dataclass(frozen=True, eq=False)
class SparseVector:
    """
    次元 ``dim`` の疎ベクトル

    Attributes:
        dim: 周囲空間の次元
        indices: 昇順・重複なしの0始まりインデックス (int64)
        values: indices に対応する値 (float64)
    """

    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        indices = np.array(self.indices, dtype=np.int64).reshape(-1)
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if self.dim < 1:
            raise DimensionError(f"dim は正の整数である必要があります: {self.dim}")
        if indices.shape != values.shape:
            raise DimensionError("indices と values の長さが一致しません")
        if indices.size:
            if indices[0] < 0 or indices[-1] >= self.dim:
                raise DimensionError(f"インデックスが範囲外です (dim={self.dim})")
            if np.any(np.diff(indices) <= 0):
                raise ValueError("indices は狭義単調増加である必要があります")
        indices.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_pairs(cls, dim, pairs):
        """(index, value) の列から作成する。順序は問わない"""
        pairs = sorted(pairs)
        return cls(dim, [i for i, _ in pairs], [v for _, v in pairs])

    @classmethod
    def zeros(cls, dim):
        return cls(dim, [], [])

    @property
    def nnz(self):
        return int(self.indices.size)

    @property
    def entries(self):
        return [(int(i), float(v)) for i, v in zip(self.indices, self.values)]

    def __eq__(self, other):
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"SparseVector(dim={self.dim}, entries={self.entries})"


def _check_dim(v, row):
    if v.dim != row.shape[0]:
        raise DimensionError(f"次元不一致: sparse={v.dim}, dense={row.shape[0]}")


def sparse_dense_dot(v: SparseVector, row: DenseVector) -> float:
    """非ゼロ要素だけを使った内積"""
    row = np.asarray(row, dtype=np.float64)
    _check_dim(v, row)
    if not v.nnz:
        return 0.0
    return float(np.dot(v.values, row[v.indices]))


def densify(v: SparseVector) -> DenseVector:
    out = np.zeros(v.dim, dtype=np.float64)
    out[v.indices] = v.values
    return out


def sparsify(row: DenseVector) -> SparseVector:
    """非ゼロ要素だけを残す。ゼロを落とすのはこの関数だけ"""
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    indices = np.flatnonzero(row)
    return SparseVector(row.shape[0], indices, row[indices])


def restrict(v: SparseVector, ids: np.ndarray) -> SparseVector:
    """
    v を ids（昇順）上に制限する

    Args:
        v: 元のベクトル
        ids: 残すインデックス（昇順・重複なし）

    Returns:
        ids に含まれるエントリだけを持つ SparseVector
    """
    keep = np.isin(v.indices, ids, assume_unique=True)
    return SparseVector(v.dim, v.indices[keep], v.values[keep])
