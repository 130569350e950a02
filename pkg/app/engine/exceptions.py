"""エンジン共通の例外クラス"""


class EngineError(Exception):
    """エンジン例外の基底クラス"""


class DimensionError(EngineError, ValueError):
    """ベクトルや層の次元が一致しない"""


class ContractError(EngineError):
    """呼び出し側の前提条件（サポート、ラベル集合など）が満たされていない"""


class InfeasibleSparsity(EngineError):
    """指定スパース性ではコスト制約を満たすK, Lが存在しない"""

    def __init__(self, dim, sparsity, c2):
        self.dim = dim
        self.sparsity = sparsity
        self.c2 = c2
        super().__init__(
            f"sparsity={sparsity} は d={dim}, c2={c2} では実現できません "
            f"(s·d + K·L <= c2·d を満たすKがありません)。"
            f"sparsity を下げるか c2 を上げてください"
        )


class ConfigError(EngineError):
    """実行設定ファイルの不備"""


class SerializationError(EngineError):
    """モデル／インデックスのバイナリ形式が不正"""


class DataError(EngineError):
    """データセットの不備"""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"{line}行目: {message}"
        super().__init__(message)


class MalformedHeader(DataError):
    pass


class MalformedLine(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class FeatureOutOfRange(DataError):
    pass


class EmptyLabelSet(DataError):
    pass


class CountMismatch(DataError):
    pass
