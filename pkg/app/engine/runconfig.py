"""
実行設定ファイル (RunConfig)

セクション接頭辞付きのフラットな key=value 形式:

    # コメント
    model.dims=128,10000
    model.sparsities=1.0,0.05
    model.activations=relu,softmax
    train.epochs=5
    data.train=data/train.txt
    output.model=out/model.bltm

値は django-environ の型変換 (``environ.Env.parse_value``) で読む。
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict

import environ
from django.conf import settings

from .autotune import AutotuneConfig
from .data import load_xc, split_dataset, synth_clustered
from .exceptions import ConfigError
from .nn import Activation, SparseNetwork
from .services.trainer import TrainConfig

logger = logging.getLogger(__name__)

REQUIRED = object()


@dataclass(frozen=True)
class ConfigKey:
    name: str
    cast: Any
    default: Any
    help: str


def _setting(name, default):
    return lambda: getattr(settings, name, default)


SCHEMA = [
    ConfigKey("model.dims", [int], REQUIRED, "層の幅（カンマ区切り、最後が出力層）"),
    ConfigKey("model.sparsities", [float], REQUIRED, "層ごとのスパース性 s (0, 1]"),
    ConfigKey("model.activations", [str], REQUIRED, "層ごとの活性化 relu|softmax|identity"),
    ConfigKey("model.c1", float, 1.0, "自動チューニングの安全係数"),
    ConfigKey("model.c2", float, 0.1, "自動チューニングのコスト比上限"),
    ConfigKey("model.lmax", int, 256, "テーブル数の上限"),
    ConfigKey("model.seed", int, 0, "重み初期化とLSHのシード"),
    ConfigKey("train.batch_size", int, 128, "バッチサイズ"),
    ConfigKey("train.epochs", int, 5, "エポック数"),
    ConfigKey("train.lr", float, 1e-3, "Adamの学習率"),
    ConfigKey("train.rebuild_interval", int, _setting("ENGINE_REBUILD_INTERVAL", 50), "インデックス再構築の間隔（バッチ数）"),
    ConfigKey("train.aln", bool, True, "取りこぼした正解ラベルを選ばれたバケットへ追加する"),
    ConfigKey("train.inference_sparsity", float, None, "疎推論で評価する割合（省略時は出力層の s）"),
    ConfigKey("train.seed", int, 0, "シャッフルのシード"),
    ConfigKey("train.deterministic", bool, True, "勾配をサンプル順に集計する"),
    ConfigKey("train.workers", int, _setting("ENGINE_WORKERS", 1), "ワーカースレッド数"),
    ConfigKey("train.checkpoints_per_epoch", int, 2, "エポックあたりの p@1 チェックポイント数"),
    ConfigKey("train.eval_samples", int, 1000, "p@1 評価に使うサンプル数の上限"),
    ConfigKey("data.train", str, None, "学習データ（XC形式）"),
    ConfigKey("data.test", str, None, "評価データ（XC形式、省略可）"),
    ConfigKey("data.index_base", int, 0, "ファイル中のIDの始まり（0 または 1）"),
    ConfigKey("data.synthetic", bool, False, "data.train の代わりに合成タスクを使う"),
    ConfigKey("data.synth_classes", int, 1000, "合成タスクのクラス数"),
    ConfigKey("data.synth_samples_per_class", int, 10, "合成タスクのクラスあたりサンプル数"),
    ConfigKey("data.synth_feature_dim", int, 1000, "合成タスクの特徴量次元"),
    ConfigKey("data.synth_noise", float, 0.1, "合成タスクのノイズ σ"),
    ConfigKey("data.synth_seed", int, 0, "合成タスクのシード"),
    ConfigKey("data.synth_holdout", float, 0.2, "合成タスクの評価用割合"),
    ConfigKey("output.model", str, None, "モデルの出力先"),
    ConfigKey("output.report", str, None, "学習レポート（JSON lines）の出力先"),
    ConfigKey("output.bench", str, None, "ベンチマークCSVの出力先"),
]
SCHEMA_BY_NAME = {key.name: key for key in SCHEMA}


def describe_schema():
    """--help 用の設定キー一覧"""
    lines = []
    for key in SCHEMA:
        default = key.default() if callable(key.default) else key.default
        default = "必須" if default is REQUIRED else f"既定値={default}"
        lines.append(f"  {key.name}: {key.help} ({default})")
    return "\n".join(lines)


@dataclass(frozen=True)
class RunConfig:
    values: Dict[str, Any]

    def __getitem__(self, name):
        return self.values[name]

    @property
    def activations(self):
        return [Activation(a) for a in self["model.activations"]]

    def autotune_config(self):
        return AutotuneConfig(c1=self["model.c1"], c2=self["model.c2"], l_max=self["model.lmax"])

    def train_config(self):
        inference_sparsity = self["train.inference_sparsity"]
        if inference_sparsity is None and self["model.sparsities"][-1] < 1:
            inference_sparsity = self["model.sparsities"][-1]
        return TrainConfig(
            batch_size=self["train.batch_size"],
            epochs=self["train.epochs"],
            lr=self["train.lr"],
            rebuild_interval=self["train.rebuild_interval"],
            aln_enabled=self["train.aln"],
            inference_sparsity=inference_sparsity,
            seed=self["train.seed"],
            deterministic=self["train.deterministic"],
            workers=self["train.workers"],
            checkpoints_per_epoch=self["train.checkpoints_per_epoch"],
            eval_samples=self["train.eval_samples"],
        )

    def dense(self):
        """全層のスパース性を1にした密な版"""
        values = dict(self.values)
        values["model.sparsities"] = [1.0] * len(values["model.sparsities"])
        values["train.inference_sparsity"] = None
        return RunConfig(values)

    def build_network(self, input_dim):
        return SparseNetwork.build(
            input_dim,
            self["model.dims"],
            self["model.sparsities"],
            self.activations,
            seed=self["model.seed"],
            autotune_config=self.autotune_config(),
        )

    def load_datasets(self):
        """
        Returns:
            (学習データ, 評価データ)
        """
        if self["data.synthetic"]:
            dataset = synth_clustered(
                self["data.synth_classes"],
                self["data.synth_samples_per_class"],
                self["data.synth_feature_dim"],
                self["data.synth_noise"],
                self["data.synth_seed"],
            )
            train, test = split_dataset(dataset, self["data.synth_holdout"], seed=self["data.synth_seed"])
            if not test.num_points:
                logger.warning("⚠️ 評価用のサンプルがありません。p@1 は学習データで測ります")
                test = None
            return train, test
        train = load_xc(self["data.train"], index_base=self["data.index_base"])
        test = load_xc(self["data.test"], index_base=self["data.index_base"]) if self["data.test"] else None
        return train, test


def _cast(key, raw, lineno):
    try:
        return environ.Env.parse_value(raw, key.cast)
    except (TypeError, ValueError):
        raise ConfigError(f"{lineno}行目: {key.name} の値を解釈できません: {raw!r}")


def _validate(values):
    n = len(values["model.dims"])
    if not n or n != len(values["model.sparsities"]) or n != len(values["model.activations"]):
        raise ConfigError("model.dims / model.sparsities / model.activations の長さが一致しません")
    if min(values["model.dims"]) < 1:
        raise ConfigError("model.dims は正の整数である必要があります")
    if not all(0 < s <= 1 for s in values["model.sparsities"]):
        raise ConfigError("model.sparsities は (0, 1] の範囲である必要があります")
    values["model.activations"] = [a.strip().lower() for a in values["model.activations"]]
    try:
        activations = [Activation(a) for a in values["model.activations"]]
    except ValueError as e:
        raise ConfigError(f"model.activations が不正です: {e}")
    if activations[-1] is not Activation.SOFTMAX:
        raise ConfigError("出力層の活性化は softmax である必要があります")
    if Activation.SOFTMAX in activations[:-1]:
        raise ConfigError("softmax は出力層だけで使えます")
    if values["data.index_base"] not in (0, 1):
        raise ConfigError("data.index_base は0か1である必要があります")
    if not values["data.synthetic"] and not values["data.train"]:
        raise ConfigError("data.train か data.synthetic=true のどちらかが必要です")


def parse_run_config(text) -> RunConfig:
    """
    key=value のテキストを検証済みの RunConfig にする

    Raises:
        ConfigError: 未知のキー、必須キーの欠落、型変換の失敗、値の不整合
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{lineno}行目: key=value の形式ではありません: {raw!r}")
        name, value = (part.strip() for part in line.split("=", 1))
        key = SCHEMA_BY_NAME.get(name)
        if key is None:
            raise ConfigError(f"{lineno}行目: 未知の設定キーです: {name}")
        if name in values:
            raise ConfigError(f"{lineno}行目: 設定キーが重複しています: {name}")
        values[name] = _cast(key, value, lineno)

    for key in SCHEMA:
        if key.name in values:
            continue
        default = key.default() if callable(key.default) else key.default
        if default is REQUIRED:
            raise ConfigError(f"必須の設定キーがありません: {key.name}")
        values[key.name] = default

    _validate(values)
    return RunConfig(values)


def load_run_config(path) -> RunConfig:
    """
    Raises:
        OSError: 設定ファイルを読めない場合
        ConfigError: 内容が不正な場合
    """
    return parse_run_config(Path(path).read_text(encoding="utf-8"))
