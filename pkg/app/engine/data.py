"""
Extreme Classification Repository 形式のデータセット読み書きと、合成タスクの生成

形式:
    1行目: "num_points num_features num_labels"
    以降: "l1,l2,... f1:v1 f2:v2 ..."（IDは0始まり）
"""
import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np

from .exceptions import (
    CountMismatch,
    DataError,
    EmptyLabelSet,
    FeatureOutOfRange,
    LabelOutOfRange,
    MalformedHeader,
    MalformedLine,
)
from .sparse import SparseVector

logger = logging.getLogger(__name__)

# 合成タスクで各サンプルに残す特徴量の数
SYNTH_TOP_FEATURES = 32


@dataclass(frozen=True)
class Example:
    labels: np.ndarray
    features: SparseVector


@dataclass(frozen=True)
class XcDataset:
    num_points: int
    num_features: int
    num_labels: int
    examples: List[Example]

    def __post_init__(self):
        if len(self.examples) != self.num_points:
            raise CountMismatch(f"サンプル数 {len(self.examples)} がヘッダーの {self.num_points} と一致しません")

    def __len__(self):
        return self.num_points

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def subset(self, indices):
        examples = [self.examples[i] for i in indices]
        return XcDataset(len(examples), self.num_features, self.num_labels, examples)


def _parse_header(line):
    parts = line.split()
    if len(parts) != 3:
        raise MalformedHeader("ヘッダーは 'num_points num_features num_labels' である必要があります", line=1)
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise MalformedHeader(f"ヘッダーが整数ではありません: {line!r}", line=1)
    if min(values) < 0:
        raise MalformedHeader(f"ヘッダーに負の値があります: {line!r}", line=1)
    return values


def _parse_line(line, lineno, num_features, num_labels, index_base):
    tokens = line.split()
    if not tokens or ":" in tokens[0] or line[0].isspace():
        raise EmptyLabelSet("ラベルがありません", line=lineno)
    try:
        labels = [int(t) - index_base for t in tokens[0].split(",") if t]
        pairs = []
        for token in tokens[1:]:
            index, value = token.split(":", 1)
            pairs.append((int(index) - index_base, float(value)))
    except ValueError:
        raise MalformedLine(f"解析できない行です: {line!r}", line=lineno)

    if not labels:
        raise EmptyLabelSet("ラベルがありません", line=lineno)
    labels = np.unique(np.array(labels, dtype=np.int64))
    if labels[0] < 0 or labels[-1] >= num_labels:
        raise LabelOutOfRange(f"ラベルが範囲外です (num_labels={num_labels})", line=lineno)

    pairs.sort()
    indices = np.array([i for i, _ in pairs], dtype=np.int64)
    if indices.size:
        if indices[0] < 0 or indices[-1] >= num_features:
            raise FeatureOutOfRange(f"特徴量が範囲外です (num_features={num_features})", line=lineno)
        if np.any(np.diff(indices) == 0):
            raise MalformedLine("同じ特徴量が重複しています", line=lineno)
    features = SparseVector(num_features, indices, [v for _, v in pairs])
    return Example(labels, features)


def parse_xc(stream, index_base=0) -> XcDataset:
    """
    XC形式のテキストを1パスで読む

    Args:
        stream: テキストの行を返すイテラブル（ファイルオブジェクトなど）
        index_base: ファイル中のIDの始まり（0 または 1）

    Returns:
        XcDataset

    Raises:
        MalformedHeader, MalformedLine, LabelOutOfRange, FeatureOutOfRange,
        EmptyLabelSet, CountMismatch
    """
    if index_base not in (0, 1):
        raise DataError(f"index_base は0か1である必要があります: {index_base}")
    header = None
    examples = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if header is None:
            header = _parse_header(line)
            num_points, num_features, num_labels = header
            continue
        if not line.strip():
            continue
        if len(examples) == num_points:
            raise CountMismatch(f"ヘッダーの件数 {num_points} より多くの行があります", line=lineno)
        examples.append(_parse_line(line, lineno, num_features, num_labels, index_base))
    if header is None:
        raise MalformedHeader("ヘッダーがありません", line=1)
    if len(examples) != num_points:
        raise CountMismatch(f"ヘッダーの件数 {num_points} に対して {len(examples)} 行しかありません")
    return XcDataset(num_points, num_features, num_labels, examples)


def load_xc(path, index_base=0) -> XcDataset:
    with open(path, "r", encoding="utf-8", newline="") as f:
        dataset = parse_xc(f, index_base=index_base)
    logger.info(
        f"データセット読み込み: {path} (points={dataset.num_points}, "
        f"features={dataset.num_features}, labels={dataset.num_labels})"
    )
    return dataset


def serialize_xc(dataset: XcDataset, stream):
    """XC形式（0始まり）で書き出す。値は repr で出すので読み戻すと完全に一致する"""
    stream.write(f"{dataset.num_points} {dataset.num_features} {dataset.num_labels}\n")
    for example in dataset:
        labels = ",".join(str(int(label)) for label in example.labels)
        features = " ".join(f"{i}:{v!r}" for i, v in example.features.entries)
        stream.write(f"{labels} {features}".rstrip() + "\n")


def synth_clustered(num_classes, samples_per_class, feature_dim, noise, seed) -> XcDataset:
    """
    クラスごとのランダムな単位方向 μ_c にガウスノイズを足した合成タスク

    ノイズは座標ごとに標準偏差 σ/sqrt(feature_dim) で、ノルムの期待値がおよそ σ になる。
    各サンプルは絶対値の大きい SYNTH_TOP_FEATURES 個の座標だけを残して疎にする。
    """
    if noise < 0:
        raise DataError(f"noise は0以上である必要があります: {noise}")
    if feature_dim < 1 or num_classes < 1 or samples_per_class < 0:
        raise DataError("合成タスクの形が不正です")
    rng = np.random.default_rng(seed)
    keep = min(SYNTH_TOP_FEATURES, feature_dim)
    examples = []
    for c in range(num_classes):
        center = rng.standard_normal(feature_dim)
        center /= np.linalg.norm(center)
        scale = noise / math.sqrt(feature_dim)
        points = center + scale * rng.standard_normal((samples_per_class, feature_dim))
        for point in points:
            top = np.sort(np.argpartition(-np.abs(point), keep - 1)[:keep])
            examples.append(Example(np.array([c], dtype=np.int64), SparseVector(feature_dim, top, point[top])))
    return XcDataset(len(examples), feature_dim, num_classes, examples)


def split_dataset(dataset: XcDataset, holdout_fraction, seed=0):
    """
    学習用と評価用に分ける

    Returns:
        (train, holdout)
    """
    if not 0 <= holdout_fraction < 1:
        raise DataError(f"holdout_fraction は [0, 1) の範囲である必要があります: {holdout_fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    cut = int(round(len(dataset) * holdout_fraction))
    return dataset.subset(np.sort(order[cut:])), dataset.subset(np.sort(order[:cut]))


def parse_feature_string(text, num_features, index_base=0) -> SparseVector:
    """ "3:0.5 10:1.0" のような特徴量だけの文字列を SparseVector にする"""
    # ダミーのラベルを付けてデータ行として解釈する
    example = _parse_line(f"{index_base} {text.strip()}", 1, num_features, 1, index_base)
    return example.features
