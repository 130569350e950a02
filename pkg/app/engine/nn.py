"""
LSHでサンプリングする疎な全結合層と、その積み重ね

活性化 a_i = f(w_i · x + b_i) をアクティブ集合のニューロンについてだけ計算し、
逆伝播も使ったリンクだけをたどる。密な参照実装は正しさの基準として同じ契約で持つ。
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import List, Optional

import numpy as np

from .autotune import AutotuneConfig, AutotunePlan, autotune
from .exceptions import ContractError, DimensionError
from .lsh import NeuronIndex, build_index, min_count_for
from .sparse import SparseVector, densify, restrict, sparsify

logger = logging.getLogger(__name__)


class Activation(str, Enum):
    RELU = "relu"
    SOFTMAX = "softmax"
    IDENTITY = "identity"

    @property
    def tag(self):
        return list(Activation).index(self)

    @classmethod
    def from_tag(cls, tag):
        return list(cls)[tag]


class Mode(str, Enum):
    TRAIN = "train"
    SPARSE_INFER = "sparse"
    DENSE_INFER = "dense"


class Origin(IntEnum):
    SAMPLED = 0
    LABEL_FORCED = 1
    PADDED = 2


def positions_in(sorted_ids, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    pos = np.searchsorted(sorted_ids, ids)
    if ids.size and (pos.max() >= sorted_ids.size or np.any(sorted_ids[pos] != ids)):
        raise ContractError("アクティブ集合に含まれないニューロンが指定されました")
    return pos


@dataclass(frozen=True)
class ActiveSet:
    """活性化を計算するニューロン（昇順ID）と、それぞれの由来"""

    ids: np.ndarray
    origin: np.ndarray

    @classmethod
    def full(cls, dim):
        return cls(np.arange(dim, dtype=np.int64), np.full(dim, Origin.SAMPLED, dtype=np.int8))

    def __len__(self):
        return int(self.ids.size)

    def positions(self, ids) -> np.ndarray:
        """ids のアクティブ集合内での位置。含まれないIDがあれば ContractError"""
        return positions_in(self.ids, ids)


@dataclass(frozen=True)
class AlnRecord:
    """サンプリングで取りこぼしたラベルと、そのとき選ばれたバケット"""

    labels: np.ndarray
    codes: np.ndarray


@dataclass(frozen=True)
class ForwardResult:
    activations: SparseVector
    active: ActiveSet
    logits: np.ndarray
    aln: Optional[AlnRecord] = None


@dataclass
class LayerGradients:
    """
    アクティブな行だけの勾配

    Attributes:
        rows: アクティブ集合のID（weight_grads の行に対応）
        cols: 入力の非ゼロ位置（weight_grads の列に対応）
        weight_grads: δ_i · x の外積 (len(rows) × len(cols))
        bias_grads: δ_i
        input_grad: Σ δ_i · w_i を疎にしたもの（不要な場合は None）
    """

    rows: np.ndarray
    cols: np.ndarray
    weight_grads: np.ndarray
    bias_grads: np.ndarray
    input_grad: Optional[SparseVector] = None

    def dense_weight_grad(self, shape):
        out = np.zeros(shape, dtype=np.float64)
        out[np.ix_(self.rows, self.cols)] = self.weight_grads
        return out


def softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def activate(z, activation):
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    if activation is Activation.SOFTMAX:
        return softmax(z) if z.size else z
    return z.copy()


def loss_grad_softmax_ce(logits, active_ids, labels):
    """
    アクティブ集合上のsoftmax交差エントロピー

    Args:
        logits: アクティブ集合上のロジット
        active_ids: logits に対応する昇順ID
        labels: 正解ラベル（アクティブ集合の部分集合）

    Returns:
        (loss, δ)：δ = softmax(logits) − 一様な正解分布
    """
    labels = np.unique(np.asarray(labels, dtype=np.int64))
    if labels.size == 0:
        raise ContractError("ラベルが空です")
    pos = positions_in(np.asarray(active_ids, dtype=np.int64), labels)
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    log_z = math.log(np.exp(shifted).sum())
    target = np.zeros(logits.size)
    target[pos] = 1.0 / labels.size
    loss = log_z - float(shifted[pos].mean())
    delta = np.exp(shifted - log_z) - target
    return loss, delta


class SparseLinearLayer:
    """
    LSHで選んだニューロンだけを計算する全結合層

    sparsity が1未満ならインデックスを持ち、1なら密な層として動く。
    """

    def __init__(self, weights, biases, sparsity, activation, plan: Optional[AutotunePlan] = None,
                 index: Optional[NeuronIndex] = None):
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        self.biases = np.ascontiguousarray(biases, dtype=np.float64)
        self.sparsity = float(sparsity)
        self.activation = Activation(activation)
        self.plan = plan
        self.index = index
        if self.biases.shape != (self.dim,):
            raise DimensionError(f"バイアスの形が不正です: {self.biases.shape}")
        if not 0 < self.sparsity <= 1:
            raise ContractError(f"sparsity は (0, 1] の範囲である必要があります: {self.sparsity}")
        if (self.index is None) != (self.sparsity == 1.0):
            raise ContractError("インデックスは sparsity < 1 の層だけが持ちます")

    @classmethod
    def create(cls, dim, prev_dim, sparsity, activation, seed=0, layer_no=0, autotune_config=None,
               plan=None):
        """
        重みを一様分布 ±sqrt(6/(d_prev+d)) で初期化し、必要ならインデックスを構築する
        """
        rng = np.random.default_rng([seed, layer_no])
        limit = math.sqrt(6.0 / (prev_dim + dim))
        weights = rng.uniform(-limit, limit, size=(dim, prev_dim))
        biases = np.zeros(dim)
        index = None
        if sparsity < 1:
            plan = plan or autotune(dim, prev_dim, sparsity, autotune_config or AutotuneConfig())
            index_seed = int(np.random.SeedSequence([seed, layer_no, 1]).generate_state(1, dtype=np.uint64)[0])
            index = build_index(weights, plan, index_seed)
        return cls(weights, biases, sparsity, activation, plan=plan, index=index)

    @property
    def dim(self):
        return self.weights.shape[0]

    @property
    def prev_dim(self):
        return self.weights.shape[1]

    def rebuild_index(self):
        if self.index is not None:
            self.index.rebuild(self.weights)

    def _check_input(self, x):
        if x.dim != self.prev_dim:
            raise DimensionError(f"入力次元が一致しません: 期待={self.prev_dim}, 実際={x.dim}")

    def select(self, x, mode, labels=None, min_count=None, record_aln=False):
        """
        アクティブ集合を決める

        Returns:
            (ActiveSet, AlnRecord または None)
        """
        if mode is Mode.DENSE_INFER or self.index is None:
            active = ActiveSet.full(self.dim)
            sample = None
        else:
            sample = self.index.sample(x, min_count or min_count_for(self.sparsity, self.dim))
            origin = np.where(sample.padded, Origin.PADDED, Origin.SAMPLED).astype(np.int8)
            active = ActiveSet(sample.ids, origin)

        aln = None
        if mode is Mode.TRAIN and labels is not None:
            labels = np.unique(np.asarray(labels, dtype=np.int64))
            if labels.size == 0 or labels[0] < 0 or labels[-1] >= self.dim:
                raise ContractError(f"学習には d={self.dim} 未満のラベルが1つ以上必要です")
            # 補填で入ったラベルも取りこぼし扱いにする
            hit = active.ids[active.origin == Origin.SAMPLED]
            missed = labels[~np.isin(labels, hit)]
            forced = missed[~np.isin(missed, active.ids)]
            if forced.size:
                ids = np.concatenate((active.ids, forced))
                origin = np.concatenate((active.origin, np.full(forced.size, Origin.LABEL_FORCED, dtype=np.int8)))
                order = np.argsort(ids)
                active = ActiveSet(ids[order], origin[order])
            if missed.size:
                active.origin[active.positions(missed)] = Origin.LABEL_FORCED
            if record_aln and sample is not None and missed.size:
                aln = AlnRecord(missed, sample.codes)
        return active, aln

    def evaluate(self, x: SparseVector, ids):
        """指定したニューロンのロジットと活性化"""
        self._check_input(x)
        z = self.weights[np.ix_(ids, x.indices)] @ x.values + self.biases[ids]
        return z, activate(z, self.activation)

    def forward(self, x: SparseVector, mode=Mode.DENSE_INFER, labels=None, min_count=None,
                record_aln=False) -> ForwardResult:
        self._check_input(x)
        active, aln = self.select(x, mode, labels=labels, min_count=min_count, record_aln=record_aln)
        z, a = self.evaluate(x, active.ids)
        return ForwardResult(SparseVector(self.dim, active.ids, a), active, z, aln)

    def backward(self, x: SparseVector, activations: SparseVector, active: ActiveSet,
                 upstream: SparseVector, need_input_grad=True) -> LayerGradients:
        """
        アクティブ集合のリンクだけをたどる逆伝播

        softmax層の upstream は loss_grad_softmax_ce の δ（ロジットに対する勾配）を渡す。
        """
        self._check_input(x)
        if upstream.dim != self.dim:
            raise DimensionError(f"上流勾配の次元が一致しません: {upstream.dim}")
        delta = np.zeros(len(active))
        delta[active.positions(upstream.indices)] = upstream.values
        if self.activation is Activation.RELU:
            delta *= activations.values > 0
        input_grad = None
        if need_input_grad:
            input_grad = sparsify(self.weights[active.ids].T @ delta)
        return LayerGradients(
            rows=active.ids,
            cols=x.indices,
            weight_grads=np.outer(delta, x.values),
            bias_grads=delta,
            input_grad=input_grad,
        )


def dense_reference_forward(layer: SparseLinearLayer, x: SparseVector) -> ForwardResult:
    """全ニューロンを計算する参照実装"""
    ids = np.arange(layer.dim)
    z, a = layer.evaluate(x, ids)
    return ForwardResult(SparseVector(layer.dim, ids, a), ActiveSet.full(layer.dim), z)


def dense_reference_backward(layer: SparseLinearLayer, x: SparseVector, labels=None, upstream=None):
    """
    密な参照の逆伝播

    softmax層は labels から交差エントロピーの勾配を、それ以外は upstream（密ベクトル）を使う。

    Returns:
        (loss または None, LayerGradients)
    """
    result = dense_reference_forward(layer, x)
    loss = None
    if labels is not None:
        loss, delta = loss_grad_softmax_ce(result.logits, result.active.ids, labels)
    else:
        delta = np.asarray(upstream, dtype=np.float64).copy()
        if layer.activation is Activation.RELU:
            delta *= result.logits > 0
    x_dense = densify(x)
    grads = LayerGradients(
        rows=result.active.ids,
        cols=np.arange(layer.prev_dim),
        weight_grads=np.outer(delta, x_dense),
        bias_grads=delta,
        input_grad=sparsify(layer.weights.T @ delta),
    )
    return loss, grads


@dataclass
class SampleStep:
    """1サンプル分の順伝播・逆伝播の結果"""

    loss: float
    results: List[ForwardResult]
    grads: List[LayerGradients]
    top: int


class SparseNetwork:
    """SparseLinearLayer の積み重ね。隠れ層の疎な活性化をそのまま次の層の入力にする"""

    def __init__(self, layers: List[SparseLinearLayer]):
        if not layers:
            raise ContractError("層が1つもありません")
        for prev, layer in zip(layers, layers[1:]):
            if layer.prev_dim != prev.dim:
                raise DimensionError(f"層の次元がつながりません: {prev.dim} → {layer.prev_dim}")
        if any(layer.activation is Activation.SOFTMAX for layer in layers[:-1]):
            raise ContractError("softmax は出力層だけで使えます")
        self.layers = layers

    @classmethod
    def build(cls, input_dim, dims, sparsities, activations, seed=0, autotune_config=None):
        if not len(dims) == len(sparsities) == len(activations):
            raise ContractError("dims, sparsities, activations の長さが一致しません")
        layers = []
        prev = input_dim
        for no, (dim, s, act) in enumerate(zip(dims, sparsities, activations)):
            layers.append(SparseLinearLayer.create(dim, prev, s, act, seed=seed, layer_no=no,
                                                   autotune_config=autotune_config))
            prev = dim
        logger.info(f"ネットワーク構築: 入力={input_dim}, 層={list(dims)}, sparsity={list(sparsities)}")
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].prev_dim

    @property
    def output_dim(self):
        return self.layers[-1].dim

    @property
    def output(self):
        return self.layers[-1]

    def forward(self, x, mode=Mode.DENSE_INFER, labels=None, inference_sparsity=None, record_aln=False):
        """各層の ForwardResult を入力側から順に返す"""
        results = []
        last = len(self.layers) - 1
        for no, layer in enumerate(self.layers):
            min_count = None
            if no == last and mode is Mode.SPARSE_INFER and inference_sparsity is not None:
                min_count = min_count_for(inference_sparsity, layer.dim)
            result = layer.forward(
                x,
                mode,
                labels=labels if no == last else None,
                min_count=min_count,
                record_aln=record_aln and no == last,
            )
            results.append(result)
            x = result.activations
        return results

    def step(self, x, labels, record_aln=False) -> SampleStep:
        """学習モードで順伝播し、交差エントロピーの勾配を全層について求める"""
        if self.output.activation is not Activation.SOFTMAX:
            raise ContractError("学習には出力層の活性化が softmax である必要があります")
        results = self.forward(x, Mode.TRAIN, labels=labels, record_aln=record_aln)
        out = results[-1]
        loss, delta = loss_grad_softmax_ce(out.logits, out.active.ids, labels)
        upstream = SparseVector(self.output_dim, out.active.ids, delta)
        grads = [None] * len(self.layers)
        for no in range(len(self.layers) - 1, -1, -1):
            layer_input = results[no - 1].activations if no else x
            grads[no] = self.layers[no].backward(
                layer_input, results[no].activations, results[no].active, upstream, need_input_grad=no > 0
            )
            if no:
                upstream = restrict(grads[no].input_grad, results[no - 1].active.ids)
        top = int(out.active.ids[np.argmax(out.logits)])
        return SampleStep(loss, results, grads, top)

    def rebuild_indexes(self):
        for layer in self.layers:
            layer.rebuild_index()
