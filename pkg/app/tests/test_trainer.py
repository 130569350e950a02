import threading
from concurrent.futures import ThreadPoolExecutor
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from engine.data import Example, XcDataset, synth_clustered
from engine.exceptions import ConfigError, DataError
from engine.nn import SampleStep, SparseLinearLayer, SparseNetwork, dense_reference_backward
from engine.serialization import dump_model
from engine.services import trainer as trainer_module
from engine.services.trainer import TrainConfig, Trainer, train
from engine.sparse import SparseVector, densify

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


def toy_dataset():
    """4サンプル・8特徴量・8クラスの線形分離できるタスク"""
    examples = [
        Example(np.array([label]), SparseVector(8, [feature], [1.0]))
        for feature, label in [(0, 1), (2, 3), (4, 5), (6, 7)]
    ]
    return XcDataset(4, 8, 8, examples)


def sparse_network(seed=0):
    return SparseNetwork.build(64, [32, 200], [1.0, 0.05], ["relu", "softmax"], seed=seed)


def synth_task():
    return synth_clustered(num_classes=200, samples_per_class=3, feature_dim=64, noise=0.1, seed=1)


class TrainConfigTest(SimpleTestCase):
    """学習設定の検証のテスト"""

    def test_invalid_values(self):
        """範囲外の設定は ConfigError"""
        with self.assertRaises(ConfigError):
            TrainConfig(batch_size=0)
        with self.assertRaises(ConfigError):
            TrainConfig(rebuild_interval=0)
        with self.assertRaises(ConfigError):
            TrainConfig(inference_sparsity=1.5)
        with self.assertRaises(ConfigError):
            TrainConfig(workers=0)


class TrainLoopTest(SimpleTestCase):
    """学習ループのテスト"""

    def test_toy_loss_decreases(self):
        """密なsoftmax層でトイタスクの損失が下がる"""
        network = SparseNetwork.build(8, [8], [1.0], ["softmax"], seed=0)
        report = train(network, toy_dataset(), TrainConfig(batch_size=4, epochs=50, lr=0.01))
        losses = [summary.loss for summary in report.epochs]
        self.assertEqual(len(losses), 50)
        self.assertLess(losses[24], losses[0])
        self.assertLess(losses[49], losses[24])
        self.assertLess(losses[49], 0.75 * losses[0])

    def test_report_shape(self):
        """バッチごとの記録とエポックあたりのチェックポイント数"""
        dataset = synth_task()
        cfg = TrainConfig(batch_size=64, epochs=2, checkpoints_per_epoch=3, eval_samples=50)
        seen = []
        report = train(sparse_network(), dataset, cfg, on_checkpoint=seen.append)
        batches = -(-len(dataset) // 64)
        self.assertEqual(len(report.records), 2 * batches)
        self.assertEqual(len(report.checkpoints), 6)
        self.assertEqual(seen, report.checkpoints)
        self.assertEqual([r.epoch for r in report.records], [1] * batches + [2] * batches)
        seconds = [c.seconds for c in report.checkpoints]
        self.assertEqual(seconds, sorted(seconds))
        self.assertTrue(all(0.0 <= r.p_at_1 <= 1.0 for r in report.records))

    def test_label_out_of_range_fails_before_training(self):
        """出力次元を超えるラベルがあれば学習前に DataError"""
        network = SparseNetwork.build(8, [4], [1.0], ["softmax"], seed=0)
        weights = network.layers[0].weights.copy()
        with self.assertRaises(DataError):
            train(network, toy_dataset(), TrainConfig(batch_size=4, epochs=1))
        np.testing.assert_array_equal(network.layers[0].weights, weights)

    def test_feature_dim_mismatch(self):
        """特徴量の次元が合わなければ DataError"""
        network = SparseNetwork.build(9, [8], [1.0], ["softmax"], seed=0)
        with self.assertRaises(DataError):
            train(network, toy_dataset(), TrainConfig(batch_size=4, epochs=1))

    def test_empty_eval_dataset_is_used(self):
        """空の評価データを渡したときは学習データに置き換えない"""
        network = SparseNetwork.build(8, [8], [1.0], ["softmax"], seed=0)
        empty = XcDataset(0, 8, 8, [])
        with mock.patch.object(trainer_module, "evaluate", wraps=trainer_module.evaluate) as evaluate:
            report = train(network, toy_dataset(), TrainConfig(batch_size=4, epochs=1), eval_dataset=empty)
        self.assertIs(evaluate.call_args.args[1], empty)
        self.assertEqual(report.epochs[0].p_at_1, 0.0)


class DeterminismTest(SimpleTestCase):
    """再現性のテスト"""

    def _trained_bytes(self, workers):
        network = sparse_network(seed=3)
        cfg = TrainConfig(batch_size=32, epochs=2, rebuild_interval=5, workers=workers, seed=4)
        train(network, synth_task(), cfg)
        return dump_model(network)

    def test_same_seed_same_model(self):
        """同じシード・同じ設定ならモデルはバイト単位で一致する"""
        self.assertEqual(self._trained_bytes(1), self._trained_bytes(1))

    def test_worker_count_does_not_matter(self):
        """決定的モードではワーカー数によらず同じモデルになる"""
        self.assertEqual(self._trained_bytes(1), self._trained_bytes(3))

    def test_racy_mode_still_learns(self):
        """非決定的モードでも学習は進む"""
        network = sparse_network(seed=5)
        cfg = TrainConfig(batch_size=32, epochs=3, lr=0.01, workers=3, deterministic=False, eval_samples=100)
        report = train(network, synth_task(), cfg)
        self.assertLess(report.epochs[-1].loss, report.epochs[0].loss)

    def test_racy_batch_p_at_1_pairs_own_labels(self):
        """非決定的モードで終わる順が入れ替わっても、バッチの p@1 は各サンプル自身のラベルで数える"""
        second_done = threading.Event()

        class OrderedTrainer(Trainer):
            def _run_sample(self, example):
                label = int(example.labels[0])
                if label == 1:
                    # 先頭のサンプルは2番目より後に終わる
                    second_done.wait(timeout=5)
                else:
                    second_done.set()
                return SampleStep(loss=0.0, results=[], grads=[], top=label)

        network = SparseNetwork.build(8, [8], [1.0], ["softmax"], seed=0)
        trainer = OrderedTrainer(network, TrainConfig(workers=2, deterministic=False))
        examples = toy_dataset().examples[:2]
        with ThreadPoolExecutor(max_workers=2) as executor:
            _, p_at_1 = trainer.train_batch(examples, executor)
        self.assertEqual(p_at_1, 1.0)


class UpdateLocalityTest(SimpleTestCase):
    """更新の局所性のテスト"""

    def test_only_active_rows_change(self):
        """1バッチで変わるのは、どれかのサンプルでアクティブだった出力層の行だけ"""
        network = sparse_network(seed=6)
        dataset = synth_task()
        examples = dataset.examples[:6]
        trainer = Trainer(network, TrainConfig(rebuild_interval=1000))
        touched = set()
        for example in examples:
            step = network.step(example.features, example.labels)
            touched.update(step.results[-1].active.ids.tolist())
        output = network.output
        weights, biases = output.weights.copy(), output.biases.copy()
        trainer.train_batch(examples)
        changed = np.flatnonzero(np.any(output.weights != weights, axis=1) | (output.biases != biases))
        self.assertTrue(changed.size > 0)
        self.assertLessEqual(set(changed.tolist()), touched)
        self.assertLess(len(touched), output.dim)


class DenseEquivalenceTest(SimpleTestCase):
    """s=1 の学習が密な参照の学習と一致するかのテスト"""

    def test_twenty_steps_match_dense_reference(self):
        """全層 s=1・ALNなしなら、20ステップ後の重みが密な参照と1e-8以内で一致する"""
        rng = np.random.default_rng(7)
        network = SparseNetwork.build(10, [6, 5], [1.0, 1.0], ["relu", "softmax"], seed=8)
        reference = [
            SparseLinearLayer(layer.weights.copy(), layer.biases.copy(), 1.0, layer.activation)
            for layer in network.layers
        ]
        moments = [
            {name: np.zeros_like(getattr(layer, name)) for name in ("weights", "biases")}
            for layer in reference
        ]
        moments2 = [
            {name: np.zeros_like(getattr(layer, name)) for name in ("weights", "biases")}
            for layer in reference
        ]
        lr = 0.01
        trainer = Trainer(network, TrainConfig(lr=lr, aln_enabled=False))

        for t in range(1, 21):
            examples = []
            for _ in range(4):
                x = rng.standard_normal(10) * (rng.random(10) < 0.7)
                x[0] = 1.0
                nonzero = np.flatnonzero(x)
                examples.append(Example(np.array([int(rng.integers(5))]), SparseVector(10, nonzero, x[nonzero])))
            trainer.train_batch(examples)

            totals = [
                {"weights": np.zeros_like(layer.weights), "biases": np.zeros_like(layer.biases)} for layer in reference
            ]
            for example in examples:
                hidden = reference[0].forward(example.features)
                _, out_grads = dense_reference_backward(reference[1], hidden.activations, labels=example.labels)
                _, hidden_grads = dense_reference_backward(
                    reference[0], example.features, upstream=densify(out_grads.input_grad)
                )
                for no, grads in enumerate([hidden_grads, out_grads]):
                    totals[no]["weights"] += grads.weight_grads
                    totals[no]["biases"] += grads.bias_grads
            for no, layer in enumerate(reference):
                for name in ("weights", "biases"):
                    g = totals[no][name]
                    moments[no][name] = BETA1 * moments[no][name] + (1 - BETA1) * g
                    moments2[no][name] = BETA2 * moments2[no][name] + (1 - BETA2) * g**2
                    m_hat = moments[no][name] / (1 - BETA1**t)
                    v_hat = moments2[no][name] / (1 - BETA2**t)
                    getattr(layer, name)[...] -= lr * m_hat / (np.sqrt(v_hat) + EPS)

        for layer, expected in zip(network.layers, reference):
            np.testing.assert_allclose(layer.weights, expected.weights, atol=1e-8, rtol=0)
            np.testing.assert_allclose(layer.biases, expected.biases, atol=1e-8, rtol=0)
