"""
スパース層のハッシュパラメータ (K, L, R) の自動チューニング

層幅 d とスパース性 s から、コスト制約 K·L + s·d <= c2·d と L <= l_max の下で
L = c1·s·2^K を最大化する K を探す。
"""
import logging
import math
from dataclasses import dataclass

from .exceptions import ContractError, InfeasibleSparsity

logger = logging.getLogger(__name__)

MAX_K_BITS = 32


@dataclass(frozen=True)
class AutotuneConfig:
    """
    自動チューニングの定数

    Attributes:
        c1: 安全係数（期待される取得ニューロン数 / s·d）
        c2: 密計算に対するコスト比の上限
        l_max: テーブル数の上限
    """

    c1: float = 1.0
    c2: float = 0.1
    l_max: int = 256

    def __post_init__(self):
        if not self.c1 > 0:
            raise ContractError(f"c1 は正である必要があります: {self.c1}")
        if not 0 < self.c2 < 1:
            raise ContractError(f"c2 は (0, 1) の範囲である必要があります: {self.c2}")
        if self.l_max < 1:
            raise ContractError(f"l_max は1以上である必要があります: {self.l_max}")


@dataclass(frozen=True)
class AutotunePlan:
    k_bits: int
    num_tables: int
    bucket_cap: int
    config: AutotuneConfig
    layer_dim: int
    prev_dim: int
    sparsity: float

    @classmethod
    def manual(cls, layer_dim, prev_dim, sparsity, k_bits, num_tables, bucket_cap=None,
               config=None):
        """
        K, L（と任意でR）を直接指定したプランを作る。グリッドサーチ比較用で、
        自動チューニングの等式は満たさなくてよい
        """
        if k_bits < 1 or k_bits > MAX_K_BITS or num_tables < 1:
            raise ContractError(f"不正な手動プラン: K={k_bits}, L={num_tables}")
        if bucket_cap is None:
            bucket_cap = bucket_cap_for(layer_dim, k_bits)
        return cls(
            k_bits=k_bits,
            num_tables=num_tables,
            bucket_cap=bucket_cap,
            config=config or AutotuneConfig(),
            layer_dim=layer_dim,
            prev_dim=prev_dim,
            sparsity=sparsity,
        )

    def is_tuned(self):
        """自動チューニングの3条件とRの定義をすべて満たすか"""
        cfg = self.config
        return (
            self.num_tables == tables_for(self.k_bits, self.sparsity, cfg.c1)
            and _fits_budget(self.k_bits, self.num_tables, self.layer_dim, self.sparsity, cfg.c2)
            and self.num_tables <= cfg.l_max
            and self.bucket_cap == bucket_cap_for(self.layer_dim, self.k_bits)
        )


def round_half_up(x):
    return int(math.floor(x + 0.5))


def tables_for(k_bits, sparsity, c1=1.0):
    """L(K) = max(1, round(c1·s·2^K))"""
    return max(1, round_half_up(c1 * sparsity * (1 << k_bits)))


def bucket_cap_for(dim, k_bits):
    """R = ceil(2·d / 2^K)：期待占有数の2倍"""
    return max(1, -(-2 * dim // (1 << k_bits)))


def _fits_budget(k_bits, num_tables, dim, sparsity, c2):
    return k_bits * num_tables + sparsity * dim <= c2 * dim


def autotune(d, d_prev, s, cfg=None):
    """
    層の形とスパース性から (K, L, R) を選ぶ

    K = 1, 2, ... と増やし、最初に制約を破った時点で1つ前のKを採用する。

    Args:
        d: 層の幅
        d_prev: 入力の次元
        s: スパース性（評価するニューロンの割合）
        cfg: AutotuneConfig（省略時はデフォルト）

    Returns:
        AutotunePlan

    Raises:
        InfeasibleSparsity: K=1 でもコスト制約を満たさない場合
    """
    cfg = cfg or AutotuneConfig()
    if d < 2:
        raise ContractError(f"d は2以上である必要があります: {d}")
    if not 0 < s < 1:
        raise ContractError(f"s は (0, 1) の範囲である必要があります: {s}")

    best = None
    for k in range(1, MAX_K_BITS + 1):
        num_tables = tables_for(k, s, cfg.c1)
        if not _fits_budget(k, num_tables, d, s, cfg.c2) or num_tables > cfg.l_max:
            break
        best = (k, num_tables)

    if best is None:
        raise InfeasibleSparsity(d, s, cfg.c2)

    k, num_tables = best
    plan = AutotunePlan(
        k_bits=k,
        num_tables=num_tables,
        bucket_cap=bucket_cap_for(d, k),
        config=cfg,
        layer_dim=d,
        prev_dim=d_prev,
        sparsity=s,
    )
    logger.info(
        f"自動チューニング完了: d={d}, s={s} → K={plan.k_bits}, L={plan.num_tables}, "
        f"R={plan.bucket_cap}, cost_ratio={plan_cost_ratio(plan):.5f}"
    )
    return plan


def plan_cost_ratio(plan: AutotunePlan) -> float:
    """疎計算と密計算の予測コスト比 (K·L + s·d) / d"""
    return (plan.k_bits * plan.num_tables + plan.sparsity * plan.layer_dim) / plan.layer_dim
