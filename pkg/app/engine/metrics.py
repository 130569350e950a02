import numpy as np


def precision_at_k(ranked, labels, k=1) -> float:
    """
    上位k件の予測のうち正解ラベルに含まれる割合

    Args:
        ranked: スコア降順のラベルID
        labels: 正解ラベルの集合
        k: 評価する件数（1以上）

    Returns:
        |top-k ∩ labels| / k
    """
    if k < 1:
        raise ValueError(f"k は1以上である必要があります: {k}")
    top = np.asarray(ranked, dtype=np.int64)[:k]
    return float(np.isin(top, np.asarray(labels, dtype=np.int64)).sum()) / k


def mean_precision_at_k(rankings, label_sets, k=1) -> float:
    scores = [precision_at_k(r, y, k) for r, y in zip(rankings, label_sets)]
    return float(np.mean(scores)) if scores else 0.0
