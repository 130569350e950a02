"""
重み行に対する符号付きランダム射影 (SimHash) のLSHインデックス

層の重み行 w_i を L 個のテーブルにハッシュしておき、入力 x と同じバケットに
入っているニューロンだけを活性化の計算対象として取り出す。
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, DimensionError
from .sparse import SparseVector

logger = logging.getLogger(__name__)

# 取得ニューロン数の上限は min_count の何倍まで許すか
QUERY_BUDGET_FACTOR = 4


class SrpHasher:
    """K本の標準正規射影による符号ハッシュ。ビット j は projection_j · v > 0"""

    def __init__(self, k_bits, input_dim, seed, projections=None):
        if not 1 <= k_bits <= 62:
            raise ContractError(f"k_bits は1以上62以下である必要があります: {k_bits}")
        self.k_bits = int(k_bits)
        self.input_dim = int(input_dim)
        self.seed = int(seed)
        if projections is None:
            projections = np.random.default_rng(self.seed).standard_normal((self.k_bits, self.input_dim))
        self.projections = np.asarray(projections, dtype=np.float64)
        if self.projections.shape != (self.k_bits, self.input_dim):
            raise DimensionError(f"射影行列の形が不正です: {self.projections.shape}")
        self.bit_weights = np.left_shift(np.int64(1), np.arange(self.k_bits, dtype=np.int64))

    def hash(self, v: SparseVector) -> int:
        if v.dim != self.input_dim:
            raise DimensionError(f"次元不一致: hasher={self.input_dim}, input={v.dim}")
        dots = self.projections[:, v.indices] @ v.values
        return int((dots > 0).astype(np.int64) @ self.bit_weights)

    def hash_dense(self, row) -> int:
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (self.input_dim,):
            raise DimensionError(f"次元不一致: hasher={self.input_dim}, input={row.shape}")
        return int(((self.projections @ row) > 0).astype(np.int64) @ self.bit_weights)

    def hash_rows(self, matrix) -> np.ndarray:
        """行列の各行のコード"""
        dots = np.asarray(matrix, dtype=np.float64) @ self.projections.T
        return (dots > 0).astype(np.int64) @ self.bit_weights


def srp_hash(h: SrpHasher, v: SparseVector) -> int:
    return h.hash(v)


class HashTable:
    """
    1つのLSHテーブル

    構築直後の中身はコード順に並べたID列と占有バケットのコード一覧で持つ。
    ALNで書き換えたバケットだけを ``_overrides`` にリストとして持つ。
    """

    def __init__(self, hasher: SrpHasher, cap: int):
        self.hasher = hasher
        self.cap = int(cap)
        self._codes = np.empty(0, dtype=np.int64)
        self._starts = np.zeros(1, dtype=np.int64)
        self._ids = np.empty(0, dtype=np.int64)
        self._overrides = {}

    @property
    def num_buckets(self):
        return 1 << self.hasher.k_bits

    def load(self, codes, rng):
        """
        ニューロン i をバケット codes[i] に入れ直す

        定員Rを超えるバケットは、一様ランダムに選んだR個だけを残す
        （逐次的なリザーバーサンプリングと同じ分布）。
        """
        codes = np.asarray(codes, dtype=np.int64)
        order = np.argsort(codes, kind="stable")
        occupied, counts = np.unique(codes[order], return_counts=True)
        starts = np.concatenate(([0], np.cumsum(counts)))
        ids = order
        overfull = np.flatnonzero(counts > self.cap)
        if overfull.size:
            keep = np.ones(ids.size, dtype=bool)
            for b in overfull:
                lo, hi = starts[b], starts[b + 1]
                dropped = rng.choice(hi - lo, size=hi - lo - self.cap, replace=False)
                keep[lo + dropped] = False
            ids = ids[keep]
            counts = np.minimum(counts, self.cap)
            starts = np.concatenate(([0], np.cumsum(counts)))
        self._codes = occupied
        self._starts = starts
        self._ids = ids
        self._overrides = {}
        return int(overfull.size)

    @classmethod
    def from_buckets(cls, hasher, cap, buckets):
        """(code, ids) の列から復元する。ids の並びはそのまま保つ"""
        table = cls(hasher, cap)
        buckets = sorted((int(code), np.asarray(ids, dtype=np.int64)) for code, ids in buckets if len(ids))
        if buckets:
            table._codes = np.array([code for code, _ in buckets], dtype=np.int64)
            table._starts = np.concatenate(([0], np.cumsum([ids.size for _, ids in buckets])))
            table._ids = np.concatenate([ids for _, ids in buckets])
        return table

    def _base_bucket(self, code):
        pos = np.searchsorted(self._codes, code)
        if pos < self._codes.size and self._codes[pos] == code:
            return self._ids[self._starts[pos]:self._starts[pos + 1]]
        return self._ids[:0]

    def bucket(self, code) -> np.ndarray:
        override = self._overrides.get(int(code))
        if override is not None:
            return np.asarray(override, dtype=np.int64)
        return self._base_bucket(code)

    def insert(self, neuron_id, code, rng) -> bool:
        """
        バケットに neuron_id を追加する。既にあれば何もしない。
        満杯なら一様ランダムな1件と入れ替える。

        Returns:
            バケットが変化した場合True
        """
        code = int(code)
        if not 0 <= code < self.num_buckets:
            raise ContractError(f"コードが範囲外です: {code}")
        members = self._overrides.get(code)
        if members is None:
            members = self._base_bucket(code).tolist()
            self._overrides[code] = members
        if neuron_id in members:
            return False
        if len(members) < self.cap:
            members.append(int(neuron_id))
        else:
            members[int(rng.integers(self.cap))] = int(neuron_id)
        return True

    def buckets(self):
        """空でないバケットを (code, ids) のコード昇順で返す"""
        codes = set(self._codes.tolist()) | set(self._overrides)
        for code in sorted(codes):
            ids = self.bucket(code)
            if ids.size:
                yield code, ids

    def occupancy(self) -> np.ndarray:
        """空でないバケットの要素数（X_{i,j} の観測値）"""
        return np.array([ids.size for _, ids in self.buckets()], dtype=np.int64)


@dataclass(frozen=True)
class NeuronSample:
    """
    インデックスへの問い合わせ結果

    Attributes:
        ids: 昇順のニューロンID
        padded: ids と同じ長さの真偽配列。補填で追加したIDが True
        codes: テーブルごとに選ばれたバケットのコード
    """

    ids: np.ndarray
    padded: np.ndarray
    codes: np.ndarray


class NeuronIndex:
    """
    層の重み行に対する L 個のLSHテーブル

    query は並行に呼んでよいが、build / rebuild / insert_labels は排他で呼ぶこと。
    """

    def __init__(self, k_bits, num_tables, bucket_cap, num_neurons, input_dim, seed, table_seeds=None):
        if num_tables < 1:
            raise ContractError(f"テーブル数は1以上である必要があります: {num_tables}")
        self.k_bits = int(k_bits)
        self.bucket_cap = int(bucket_cap)
        self.num_neurons = int(num_neurons)
        self.input_dim = int(input_dim)
        self.seed = int(seed)
        if table_seeds is None:
            table_seeds = np.random.SeedSequence(self.seed).generate_state(num_tables, dtype=np.uint64)
        table_seeds = [int(s) for s in table_seeds]
        if len(set(table_seeds)) != len(table_seeds):
            raise ContractError("テーブルのシードが重複しています")
        self.tables = [
            HashTable(SrpHasher(self.k_bits, self.input_dim, s), self.bucket_cap) for s in table_seeds
        ]
        # 全テーブルの射影を積んでおき、1回の行列積で全コードを出す
        self._projections = np.vstack([t.hasher.projections for t in self.tables])
        self._bit_weights = self.tables[0].hasher.bit_weights
        self._rng = self._fresh_rng()

    @property
    def num_tables(self):
        return len(self.tables)

    @property
    def table_seeds(self):
        return [t.hasher.seed for t in self.tables]

    def _fresh_rng(self):
        return np.random.default_rng([self.seed, 0x0B17])

    def codes(self, x: SparseVector) -> np.ndarray:
        """テーブルごとの入力コード"""
        if x.dim != self.input_dim:
            raise DimensionError(f"次元不一致: index={self.input_dim}, input={x.dim}")
        dots = self._projections[:, x.indices] @ x.values
        bits = (dots > 0).astype(np.int64).reshape(self.num_tables, self.k_bits)
        return bits @ self._bit_weights

    def rebuild(self, weights):
        """
        同じシードのまま現在の重みで全テーブルを作り直す。
        前回の構築以降のALN挿入は破棄される
        """
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (self.num_neurons, self.input_dim):
            raise DimensionError(f"重みの形が不正です: {weights.shape}")
        self._rng = self._fresh_rng()
        overfull = 0
        # テーブルごとに計算して d × (K·L) の中間配列を作らない
        for table in self.tables:
            overfull += table.load(table.hasher.hash_rows(weights), self._rng)
        logger.debug(
            f"LSHインデックス構築: d={self.num_neurons}, K={self.k_bits}, L={self.num_tables}, "
            f"R={self.bucket_cap}, 定員超過バケット={overfull}"
        )

    def candidates(self, x: SparseVector, num_tables=None):
        """
        先頭 num_tables 個のテーブルで選ばれたバケットの和集合

        Returns:
            (ids, multiplicity, codes)：ids は昇順、multiplicity は各IDが現れたテーブル数
        """
        codes = self.codes(x)
        tables = self.tables if num_tables is None else self.tables[:num_tables]
        found = [table.bucket(code) for table, code in zip(tables, codes)]
        if not found:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), codes
        ids, multiplicity = np.unique(np.concatenate(found), return_counts=True)
        return ids, multiplicity, codes

    def sample(self, x: SparseVector, min_count: int) -> NeuronSample:
        """
        入力に対して評価するニューロンを選ぶ

        和集合が min_count に満たなければ入力コードから決まる位置から順に補填し、
        QUERY_BUDGET_FACTOR·min_count を超えれば衝突回数の多い順（同数はID昇順）に切り詰める。
        """
        if not 1 <= min_count <= self.num_neurons:
            raise ContractError(f"min_count が範囲外です: {min_count} (d={self.num_neurons})")
        ids, multiplicity, codes = self.candidates(x)
        budget = QUERY_BUDGET_FACTOR * min_count
        if ids.size > budget:
            keep = np.lexsort((ids, -multiplicity))[:budget]
            ids = np.sort(ids[keep])
        padded = np.zeros(ids.size, dtype=bool)
        if ids.size < min_count:
            start = hash(tuple(codes.tolist())) % self.num_neurons
            ring = (start + np.arange(self.num_neurons)) % self.num_neurons
            extra = ring[~np.isin(ring, ids, assume_unique=True)][: min_count - ids.size]
            ids = np.concatenate((ids, extra))
            padded = np.concatenate((padded, np.ones(extra.size, dtype=bool)))
            order = np.argsort(ids)
            ids, padded = ids[order], padded[order]
        return NeuronSample(ids=ids, padded=padded, codes=codes)

    def query(self, x: SparseVector, min_count: int) -> np.ndarray:
        return self.sample(x, min_count).ids

    def insert_labels(self, label_ids, selected_codes):
        """
        ラベルのニューロンを、各テーブルで実際に選ばれたバケットへ追加する (ALN)
        """
        selected_codes = np.asarray(selected_codes, dtype=np.int64)
        if selected_codes.shape != (self.num_tables,):
            raise ContractError(f"コードの数がテーブル数と一致しません: {selected_codes.shape}")
        changed = 0
        for table, code in zip(self.tables, selected_codes):
            for label in label_ids:
                changed += table.insert(int(label), code, self._rng)
        return changed

    def occupancy(self, table=0) -> np.ndarray:
        return self.tables[table].occupancy()

    def mean_nonempty_occupancy(self) -> float:
        sizes = np.concatenate([t.occupancy() for t in self.tables])
        return float(sizes.mean()) if sizes.size else 0.0

    def max_bucket_size(self) -> int:
        return max((int(t.occupancy().max(initial=0)) for t in self.tables), default=0)

    def bucket_contents(self):
        """テーブルごとの {code: ids のタプル}。比較・テスト用"""
        return [{code: tuple(ids.tolist()) for code, ids in t.buckets()} for t in self.tables]


def build_index(weights, plan, seed) -> NeuronIndex:
    """
    重み行列 (d × d_prev) の各行を plan の (K, L, R) でインデックスする
    """
    weights = np.asarray(weights, dtype=np.float64)
    d, d_prev = weights.shape
    if d < 1:
        raise ContractError("ニューロンが1つもありません")
    index = NeuronIndex(plan.k_bits, plan.num_tables, plan.bucket_cap, d, d_prev, seed)
    index.rebuild(weights)
    return index


def min_count_for(sparsity, dim):
    """評価するニューロン数 ceil(s·d)（1以上d以下）"""
    return min(dim, max(1, math.ceil(sparsity * dim)))
