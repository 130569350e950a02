"""
学習済みネットワークでの推論と評価

疎推論は出力層のLSHテーブルをそのまま使う。inference_sparsity を学習時より
大きくすると、同じテーブルのまま評価するニューロンを増やせる。
"""
import logging
import time
from dataclasses import dataclass

import numpy as np

from ..exceptions import ContractError
from ..metrics import precision_at_k
from ..nn import Mode
from ..sparse import SparseVector

logger = logging.getLogger(__name__)

DEFAULT_LATENCY_SAMPLES = 1000


@dataclass(frozen=True)
class EvalResult:
    precision: float
    k: int
    latency_ms: float
    mode: Mode

    def line(self):
        return f"p@{self.k}={self.precision:.6f} latency_ms={self.latency_ms:.4f} mode={self.mode.value}"


def rank(network, x: SparseVector, mode=Mode.SPARSE_INFER, inference_sparsity=None) -> np.ndarray:
    """出力層のアクティブなニューロンを活性化の降順（同値はID昇順）に並べる"""
    out = network.forward(x, mode, inference_sparsity=inference_sparsity)[-1]
    ids = out.activations.indices
    order = np.lexsort((ids, -out.activations.values))
    return ids[order]


def predict(network, x: SparseVector, mode=Mode.SPARSE_INFER, inference_sparsity=None, top_k=None):
    """
    ラベルの順位付きリストを返す

    Args:
        network: SparseNetwork
        x: 入力特徴量
        mode: Mode.SPARSE_INFER または Mode.DENSE_INFER
        inference_sparsity: 疎推論で評価する割合（省略時は出力層の学習時スパース性）
        top_k: 上位何件を返すか（省略時は全件）
    """
    ranked = rank(network, x, mode, inference_sparsity)
    if top_k is not None:
        ranked = ranked[:top_k]
    return ranked.tolist()


def evaluate(network, dataset, k=1, mode=Mode.SPARSE_INFER, inference_sparsity=None,
             latency_samples=DEFAULT_LATENCY_SAMPLES, limit=None) -> EvalResult:
    """
    precision@k と1サンプルあたりの平均推論時間

    レイテンシは先頭 min(latency_samples, N) 件の単発推論の平均。
    """
    if k < 1:
        raise ContractError(f"k は1以上である必要があります: {k}")
    output = network.output
    if mode is Mode.SPARSE_INFER and inference_sparsity is not None and inference_sparsity < output.sparsity:
        logger.warning(f"⚠️ inference_sparsity={inference_sparsity} が学習時の s={output.sparsity} より小さいです")
    examples = dataset.examples if limit is None else dataset.examples[:limit]
    timed = min(latency_samples, len(examples))
    scores = []
    elapsed = 0.0
    for n, example in enumerate(examples):
        started = time.perf_counter()
        ranked = rank(network, example.features, mode, inference_sparsity)
        if n < timed:
            elapsed += time.perf_counter() - started
        scores.append(precision_at_k(ranked, example.labels, k))
    precision = float(np.mean(scores)) if scores else 0.0
    latency_ms = 1000.0 * elapsed / timed if timed else 0.0
    logger.debug(f"評価: mode={mode.value}, p@{k}={precision:.4f}, latency={latency_ms:.3f}ms, n={len(scores)}")
    return EvalResult(precision, k, latency_ms, mode)


def label_recall(network, dataset, inference_sparsity=None, limit=None) -> float:
    """疎推論で出力層が選んだニューロンに正解ラベルが1つでも含まれるサンプルの割合"""
    examples = dataset.examples if limit is None else dataset.examples[:limit]
    if not examples:
        return 0.0
    hits = 0
    for example in examples:
        out = network.forward(example.features, Mode.SPARSE_INFER, inference_sparsity=inference_sparsity)[-1]
        hits += bool(np.isin(example.labels, out.active.ids).any())
    return hits / len(examples)
