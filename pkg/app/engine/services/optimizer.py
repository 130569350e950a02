"""
触れた行だけを更新する遅延Adam

モーメントは全パラメータ分持つが、読み書きするのはそのバッチで使われた行だけ。
しばらく使われなかった行も、飛ばしたステップ分の減衰はさかのぼって適用しない。
"""
from dataclasses import dataclass
from typing import List

import numpy as np

from ..exceptions import ContractError


@dataclass
class LayerMoments:
    m_weights: np.ndarray
    v_weights: np.ndarray
    m_biases: np.ndarray
    v_biases: np.ndarray
    last_step: np.ndarray


class SparseAdamState:
    """
    遅延Adamの状態

    Attributes:
        lr: 学習率
        beta1, beta2, eps: Adamの定数
        t: 全体のステップ数
        layers: 層ごとのモーメントと、行ごとの最終更新ステップ
    """

    def __init__(self, network, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.layers: List[LayerMoments] = [
            LayerMoments(
                m_weights=np.zeros_like(layer.weights),
                v_weights=np.zeros_like(layer.weights),
                m_biases=np.zeros_like(layer.biases),
                v_biases=np.zeros_like(layer.biases),
                last_step=np.zeros(layer.dim, dtype=np.int64),
            )
            for layer in network.layers
        ]

    def next_step(self):
        self.t += 1
        return self.t


def lazy_adam_update(state: SparseAdamState, layer, layer_no, rows, weight_grads, bias_grads, t):
    """
    rows の行だけにAdamの1ステップを適用する

    Args:
        state: SparseAdamState
        layer: 更新する SparseLinearLayer
        layer_no: 層の番号
        rows: 更新する行ID（重複なし）
        weight_grads: 行ごとの勾配 (len(rows) × d_prev)
        bias_grads: 行ごとのバイアス勾配
        t: 現在の全体ステップ（バイアス補正に使う）
    """
    moments = state.layers[layer_no]
    rows = np.asarray(rows, dtype=np.int64)
    if np.any(moments.last_step[rows] > t):
        raise ContractError(f"ステップが巻き戻っています: t={t}")
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t

    m = b1 * moments.m_weights[rows] + (1.0 - b1) * weight_grads
    v = b2 * moments.v_weights[rows] + (1.0 - b2) * np.square(weight_grads)
    moments.m_weights[rows] = m
    moments.v_weights[rows] = v
    layer.weights[rows] -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)

    mb = b1 * moments.m_biases[rows] + (1.0 - b1) * bias_grads
    vb = b2 * moments.v_biases[rows] + (1.0 - b2) * np.square(bias_grads)
    moments.m_biases[rows] = mb
    moments.v_biases[rows] = vb
    layer.biases[rows] -= state.lr * (mb / correction1) / (np.sqrt(vb / correction2) + state.eps)

    moments.last_step[rows] = t
