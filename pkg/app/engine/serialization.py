"""
モデル (BLTM) とLSHインデックス (BLTI) のバイナリ形式

すべてリトルエンディアンの固定長整数 / float64。
"""
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .autotune import AutotuneConfig, AutotunePlan
from .exceptions import ContractError, SerializationError
from .lsh import HashTable, NeuronIndex
from .nn import Activation, SparseLinearLayer, SparseNetwork

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"BLTI"
MODEL_MAGIC = b"BLTM"
FORMAT_VERSION = 1

_INDEX_HEADER = struct.Struct("<4sIIIIIIQ")
_MODEL_HEADER = struct.Struct("<4sII")
_LAYER_HEADER = struct.Struct("<IIdBB")
_PLAN = struct.Struct("<IIIddI")


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def unpack(self, fmt: struct.Struct):
        if self.pos + fmt.size > len(self.buf):
            raise SerializationError("データが途中で終わっています")
        values = fmt.unpack_from(self.buf, self.pos)
        self.pos += fmt.size
        return values

    def array(self, dtype, count):
        dtype = np.dtype(dtype)
        size = dtype.itemsize * count
        if self.pos + size > len(self.buf):
            raise SerializationError("データが途中で終わっています")
        out = np.frombuffer(self.buf, dtype=dtype, count=count, offset=self.pos).copy()
        self.pos += size
        return out

    def raw(self, size):
        if self.pos + size > len(self.buf):
            raise SerializationError("データが途中で終わっています")
        out = bytes(self.buf[self.pos:self.pos + size])
        self.pos += size
        return out


def dump_index(index: NeuronIndex) -> bytes:
    parts = [
        _INDEX_HEADER.pack(
            INDEX_MAGIC, FORMAT_VERSION, index.k_bits, index.num_tables, index.bucket_cap,
            index.num_neurons, index.input_dim, index.seed,
        ),
        np.asarray(index.table_seeds, dtype="<u8").tobytes(),
    ]
    for table in index.tables:
        buckets = list(table.buckets())
        parts.append(struct.pack("<I", len(buckets)))
        for code, ids in buckets:
            parts.append(struct.pack("<II", code, ids.size))
            parts.append(ids.astype("<u4").tobytes())
    return b"".join(parts)


def load_index(buf) -> NeuronIndex:
    reader = _Reader(buf)
    magic, version, k, num_tables, cap, d, d_prev, seed = reader.unpack(_INDEX_HEADER)
    if magic != INDEX_MAGIC:
        raise SerializationError(f"インデックスのマジックが不正です: {magic!r}")
    if version != FORMAT_VERSION:
        raise SerializationError(f"未対応のインデックス形式バージョンです: {version}")
    seeds = reader.array("<u8", num_tables)
    index = NeuronIndex(k, num_tables, cap, d, d_prev, seed, table_seeds=seeds.tolist())
    tables = []
    for table in index.tables:
        (count,) = reader.unpack(struct.Struct("<I"))
        buckets = []
        for _ in range(count):
            code, size = reader.unpack(struct.Struct("<II"))
            ids = reader.array("<u4", size).astype(np.int64)
            if size > cap or (size and ids.max() >= d):
                raise SerializationError("バケットの内容が不正です")
            buckets.append((code, ids))
        tables.append(HashTable.from_buckets(table.hasher, cap, buckets))
    index.tables = tables
    return index


def dump_model(network: SparseNetwork) -> bytes:
    parts = [_MODEL_HEADER.pack(MODEL_MAGIC, FORMAT_VERSION, len(network.layers))]
    for layer in network.layers:
        plan = layer.plan
        parts.append(_LAYER_HEADER.pack(layer.dim, layer.prev_dim, layer.sparsity, layer.activation.tag,
                                        plan is not None))
        if plan is not None:
            cfg = plan.config
            parts.append(_PLAN.pack(plan.k_bits, plan.num_tables, plan.bucket_cap, cfg.c1, cfg.c2, cfg.l_max))
        parts.append(layer.weights.astype("<f8").tobytes())
        parts.append(layer.biases.astype("<f8").tobytes())
        if layer.index is None:
            parts.append(struct.pack("<B", 0))
        else:
            blob = dump_index(layer.index)
            parts.append(struct.pack("<BQ", 1, len(blob)))
            parts.append(blob)
    return b"".join(parts)


def load_model_bytes(buf) -> SparseNetwork:
    reader = _Reader(buf)
    magic, version, count = reader.unpack(_MODEL_HEADER)
    if magic != MODEL_MAGIC:
        raise SerializationError(f"モデルファイルではありません: {magic!r}")
    if version != FORMAT_VERSION:
        raise SerializationError(f"未対応のモデル形式バージョンです: {version}")
    layers = []
    for _ in range(count):
        d, d_prev, sparsity, tag, has_plan = reader.unpack(_LAYER_HEADER)
        try:
            plan = None
            if has_plan:
                k, num_tables, cap, c1, c2, l_max = reader.unpack(_PLAN)
                plan = AutotunePlan(k, num_tables, cap, AutotuneConfig(c1, c2, l_max), d, d_prev, sparsity)
            weights = reader.array("<f8", d * d_prev).reshape(d, d_prev)
            biases = reader.array("<f8", d)
            (has_index,) = reader.unpack(struct.Struct("<B"))
            index = None
            if has_index:
                (size,) = reader.unpack(struct.Struct("<Q"))
                index = load_index(reader.raw(size))
            layers.append(SparseLinearLayer(weights, biases, sparsity, Activation.from_tag(tag), plan=plan,
                                            index=index))
        except (ContractError, IndexError, ValueError) as e:
            raise SerializationError(f"層の復元に失敗しました: {e}")
    if reader.pos != len(reader.buf):
        raise SerializationError("モデルファイルの末尾に余分なデータがあります")
    return SparseNetwork(layers)


def _stage(path: Path, data: bytes, staged):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    staged.append((tmp, path))
    with os.fdopen(fd, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())


def atomic_write_all(files):
    """
    複数のファイルをすべて一時ファイルに書き終えてから rename する

    Args:
        files: (パス, バイト列) の列

    どれか1つの書き込みに失敗した場合は、どのパスにもファイルを置かない。
    """
    staged = []
    try:
        for path, data in files:
            _stage(Path(path), data, staged)
        for tmp, path in staged:
            os.replace(tmp, path)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise


def atomic_write(path, data: bytes):
    """一時ファイルに書いてから rename する。失敗時に中途半端なファイルを残さない"""
    atomic_write_all([(path, data)])


def save_model(network: SparseNetwork, path):
    atomic_write(path, dump_model(network))
    logger.info(f"💾 モデルを保存しました: {path}")


def load_model(path) -> SparseNetwork:
    with open(path, "rb") as f:
        return load_model_bytes(f.read())
