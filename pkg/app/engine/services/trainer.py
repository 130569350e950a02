"""
バッチ学習ループ

1バッチは次の3段階で進む:
    1. サンプルごとの順伝播・逆伝播（ワーカーで並列）
    2. 触れた行だけの遅延Adam更新と、ALNで溜めたラベル挿入の反映（排他）
    3. rebuild_interval バッチごとのインデックス再構築（排他）
"""
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np

from ..exceptions import ConfigError, DataError
from ..nn import Mode
from .inference import evaluate
from .optimizer import SparseAdamState, lazy_adam_update

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 5
    lr: float = 1e-3
    rebuild_interval: int = 50
    aln_enabled: bool = True
    inference_sparsity: Optional[float] = None
    seed: int = 0
    deterministic: bool = True
    workers: int = 1
    checkpoints_per_epoch: int = 0
    eval_samples: int = 1000

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError(f"batch_size / epochs が不正です: {self.batch_size}, {self.epochs}")
        if self.rebuild_interval < 1:
            raise ConfigError(f"rebuild_interval は1以上である必要があります: {self.rebuild_interval}")
        if self.inference_sparsity is not None and not 0 < self.inference_sparsity <= 1:
            raise ConfigError(f"inference_sparsity は (0, 1] の範囲である必要があります: {self.inference_sparsity}")
        if self.workers < 1 or self.checkpoints_per_epoch < 0 or self.eval_samples < 1:
            raise ConfigError("workers / checkpoints_per_epoch / eval_samples が不正です")


@dataclass(frozen=True)
class BatchRecord:
    epoch: int
    batch: int
    loss: float
    p_at_1: float
    seconds: float

    def to_json(self):
        return json.dumps(asdict(self))


@dataclass(frozen=True)
class EpochSummary:
    epoch: int
    loss: float
    p_at_1: float
    seconds: float


@dataclass(frozen=True)
class Checkpoint:
    seconds: float
    p_at_1: float


@dataclass
class TrainReport:
    records: List[BatchRecord] = field(default_factory=list)
    epochs: List[EpochSummary] = field(default_factory=list)
    checkpoints: List[Checkpoint] = field(default_factory=list)

    def lines(self):
        return [record.to_json() for record in self.records]


class Trainer:
    """
    SparseNetwork の学習

    deterministic のときはサンプルの勾配をサンプル順に足し合わせるので、
    ワーカー数によらず同じ結果になる。そうでないときは各ワーカーが終わった順に
    共有バッファへ直接足し込む。
    """

    def __init__(self, network, cfg: TrainConfig):
        self.network = network
        self.cfg = cfg
        self.state = SparseAdamState(network, lr=cfg.lr)
        self.batches_seen = 0
        self._grad_w = [np.zeros_like(layer.weights) for layer in network.layers]
        self._grad_b = [np.zeros_like(layer.biases) for layer in network.layers]
        self._touched = [[] for _ in network.layers]

    @property
    def record_aln(self):
        return self.cfg.aln_enabled and self.network.output.index is not None

    def inference_mode(self):
        return Mode.DENSE_INFER if self.network.output.index is None else Mode.SPARSE_INFER

    def check_dataset(self, dataset):
        if dataset.num_features != self.network.input_dim:
            raise DataError(
                f"特徴量の次元 {dataset.num_features} がモデルの入力次元 {self.network.input_dim} と一致しません"
            )
        for n, example in enumerate(dataset):
            if example.labels.size == 0 or example.labels[-1] >= self.network.output_dim:
                raise DataError(f"{n}番目のサンプルのラベルが出力次元 {self.network.output_dim} の範囲外です")

    def _run_sample(self, example):
        return self.network.step(example.features, example.labels, record_aln=self.record_aln)

    def _accumulate(self, step):
        for no, grads in enumerate(step.grads):
            self._grad_w[no][np.ix_(grads.rows, grads.cols)] += grads.weight_grads
            self._grad_b[no][grads.rows] += grads.bias_grads
            self._touched[no].append(grads.rows)

    def _run_batch_samples(self, examples, executor):
        if executor is None:
            steps = [self._run_sample(example) for example in examples]
            for step in steps:
                self._accumulate(step)
            return steps
        if self.cfg.deterministic:
            steps = list(executor.map(self._run_sample, examples))
            for step in steps:
                self._accumulate(step)
            return steps

        def run_and_accumulate(example):
            step = self._run_sample(example)
            self._accumulate(step)
            return step

        futures = [executor.submit(run_and_accumulate, example) for example in examples]
        # 集計は完了順、戻り値はサンプル順
        return [future.result() for future in futures]

    def _apply_updates(self):
        t = self.state.next_step()
        for no, layer in enumerate(self.network.layers):
            if not self._touched[no]:
                continue
            rows = np.unique(np.concatenate(self._touched[no]))
            lazy_adam_update(self.state, layer, no, rows, self._grad_w[no][rows], self._grad_b[no][rows], t)
            self._grad_w[no][rows] = 0.0
            self._grad_b[no][rows] = 0.0
            self._touched[no] = []

    def _flush_aln(self, steps):
        index = self.network.output.index
        inserted = 0
        for step in steps:
            record = step.results[-1].aln
            if record is not None:
                inserted += index.insert_labels(record.labels, record.codes)
        return inserted

    def train_batch(self, examples, executor=None):
        """
        1バッチ分の学習

        Returns:
            (平均損失, 学習中のアクティブ集合での p@1)
        """
        steps = self._run_batch_samples(examples, executor)
        self._apply_updates()
        inserted = self._flush_aln(steps) if self.record_aln else 0
        self.batches_seen += 1
        if self.batches_seen % self.cfg.rebuild_interval == 0:
            self.network.rebuild_indexes()
            logger.debug(f"インデックス再構築: batch={self.batches_seen}")
        if inserted:
            logger.debug(f"ALN: {inserted}件のラベルをバケットに追加")
        loss = float(np.mean([step.loss for step in steps]))
        hits = [bool(np.isin(step.top, example.labels)) for step, example in zip(steps, examples)]
        return loss, float(np.mean(hits))

    def _eval_p_at_1(self, dataset):
        result = evaluate(
            self.network,
            dataset,
            k=1,
            mode=self.inference_mode(),
            inference_sparsity=self.cfg.inference_sparsity,
            limit=self.cfg.eval_samples,
        )
        return result.precision

    def train(self, dataset, eval_dataset=None, on_record: Optional[Callable] = None,
              on_checkpoint: Optional[Callable] = None) -> TrainReport:
        """
        データセットで cfg.epochs エポック学習する

        Args:
            dataset: 学習用 XcDataset
            eval_dataset: p@1 の評価用（省略時は学習データ）
            on_record: BatchRecord を受け取るコールバック
            on_checkpoint: Checkpoint を受け取るコールバック

        Returns:
            TrainReport（時間は評価にかかった分を含まない）

        Raises:
            DataError: ラベルや特徴量の次元がモデルと合わない場合（学習開始前）
        """
        self.check_dataset(dataset)
        if eval_dataset is None:
            eval_dataset = dataset
        cfg = self.cfg
        report = TrainReport()
        rng = np.random.default_rng(cfg.seed)
        num_batches = -(-len(dataset) // cfg.batch_size)
        checkpoint_at = []
        if cfg.checkpoints_per_epoch and num_batches:
            checkpoint_at = np.linspace(0, num_batches, cfg.checkpoints_per_epoch + 1)[1:]
            checkpoint_at = [max(0, int(np.ceil(b)) - 1) for b in checkpoint_at]

        executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
        train_seconds = 0.0
        try:
            for epoch in range(1, cfg.epochs + 1):
                order = rng.permutation(len(dataset))
                epoch_started = train_seconds
                losses = []
                for batch in range(num_batches):
                    started = time.perf_counter()
                    examples = [dataset[i] for i in order[batch * cfg.batch_size:(batch + 1) * cfg.batch_size]]
                    loss, p_at_1 = self.train_batch(examples, executor)
                    train_seconds += time.perf_counter() - started
                    losses.append(loss)
                    record = BatchRecord(epoch, batch + 1, loss, p_at_1, train_seconds)
                    report.records.append(record)
                    if on_record:
                        on_record(record)
                    due = checkpoint_at.count(batch)
                    if due:
                        checkpoint = Checkpoint(train_seconds, self._eval_p_at_1(eval_dataset))
                        for _ in range(due):
                            report.checkpoints.append(checkpoint)
                            if on_checkpoint:
                                on_checkpoint(checkpoint)

                summary = EpochSummary(
                    epoch=epoch,
                    loss=float(np.mean(losses)) if losses else 0.0,
                    p_at_1=self._eval_p_at_1(eval_dataset),
                    seconds=train_seconds - epoch_started,
                )
                report.epochs.append(summary)
                logger.info(
                    f"✅ epoch {epoch}/{cfg.epochs}: loss={summary.loss:.4f}, "
                    f"p@1={summary.p_at_1:.4f}, {summary.seconds:.2f}秒"
                )
        finally:
            if executor is not None:
                executor.shutdown()
        return report


def train(network, dataset, cfg: TrainConfig, **kwargs) -> TrainReport:
    return Trainer(network, cfg).train(dataset, **kwargs)
