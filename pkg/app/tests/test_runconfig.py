import tempfile
from pathlib import Path

from django.test import SimpleTestCase, override_settings

from engine.autotune import AutotuneConfig
from engine.exceptions import ConfigError, InfeasibleSparsity
from engine.nn import Activation
from engine.runconfig import SCHEMA, describe_schema, load_run_config, parse_run_config

BASE = """
# 最小構成
model.dims=16,400
model.sparsities=1.0,0.05
model.activations=relu,softmax
data.synthetic=true
"""


class ParseRunConfigTest(SimpleTestCase):
    """実行設定の読み込みのテスト"""

    def test_minimal(self):
        """必須キーだけで、残りは既定値になる"""
        cfg = parse_run_config(BASE)
        self.assertEqual(cfg["model.dims"], [16, 400])
        self.assertEqual(cfg["model.sparsities"], [1.0, 0.05])
        self.assertEqual(cfg.activations, [Activation.RELU, Activation.SOFTMAX])
        self.assertEqual(cfg.autotune_config(), AutotuneConfig())
        self.assertEqual(cfg["train.epochs"], 5)
        self.assertTrue(cfg["train.aln"])

    def test_inference_sparsity_defaults_to_output_sparsity(self):
        """train.inference_sparsity の既定は出力層の s"""
        self.assertEqual(parse_run_config(BASE).train_config().inference_sparsity, 0.05)
        cfg = parse_run_config(BASE + "train.inference_sparsity=0.2\n")
        self.assertEqual(cfg.train_config().inference_sparsity, 0.2)

    def test_casts(self):
        """数値・真偽値は型変換される"""
        cfg = parse_run_config(BASE + "train.lr=0.01\ntrain.aln=false\ntrain.batch_size=32\nmodel.c2=0.2\n")
        train_cfg = cfg.train_config()
        self.assertEqual((train_cfg.lr, train_cfg.aln_enabled, train_cfg.batch_size), (0.01, False, 32))
        self.assertEqual(cfg.autotune_config().c2, 0.2)

    def test_synthetic_split(self):
        """合成タスクは評価用に分け、評価用が空なら None を返す"""
        small = "data.synth_classes=10\ndata.synth_samples_per_class=2\ndata.synth_feature_dim=16\n"
        train, test = parse_run_config(BASE + small).load_datasets()
        self.assertEqual((len(train), len(test)), (16, 4))
        with self.assertLogs("engine.runconfig", level="WARNING"):
            train, test = parse_run_config(BASE + small + "data.synth_holdout=0.0\n").load_datasets()
        self.assertEqual(len(train), 20)
        self.assertIsNone(test)

    @override_settings(ENGINE_REBUILD_INTERVAL=7, ENGINE_WORKERS=2)
    def test_defaults_from_settings(self):
        """一部の既定値は Django の設定から取る"""
        train_cfg = parse_run_config(BASE).train_config()
        self.assertEqual((train_cfg.rebuild_interval, train_cfg.workers), (7, 2))

    def test_unknown_key(self):
        """未知のキーは ConfigError"""
        with self.assertRaises(ConfigError) as ctx:
            parse_run_config(BASE + "train.epoch=3\n")
        self.assertIn("train.epoch", str(ctx.exception))

    def test_missing_required_key(self):
        """必須キーがなければ ConfigError"""
        with self.assertRaises(ConfigError):
            parse_run_config("model.dims=10\nmodel.activations=softmax\ndata.synthetic=true\n")

    def test_bad_values(self):
        """不正な値は ConfigError"""
        for extra in ["train.epochs=abc\n", "no equals sign\n", "model.dims=1\n"]:
            with self.assertRaises(ConfigError, msg=extra):
                parse_run_config(BASE + extra)
        with self.assertRaises(ConfigError):
            parse_run_config(BASE.replace("relu,softmax", "relu,relu"))
        with self.assertRaises(ConfigError):
            parse_run_config(BASE.replace("1.0,0.05", "1.0,0"))
        with self.assertRaises(ConfigError):
            parse_run_config(BASE.replace("relu,softmax", "relu,tanh"))
        with self.assertRaises(ConfigError):
            parse_run_config(BASE.replace("relu,softmax", "softmax,softmax"))

    def test_data_source_required(self):
        """data.train か data.synthetic が必要"""
        with self.assertRaises(ConfigError):
            parse_run_config(BASE.replace("data.synthetic=true", ""))

    def test_infeasible_sparsity_surfaces_on_build(self):
        """実現できないスパース性はネットワーク構築時に InfeasibleSparsity"""
        cfg = parse_run_config(BASE.replace("1.0,0.05", "1.0,0.2"))
        with self.assertRaises(InfeasibleSparsity):
            cfg.build_network(30)

    def test_dense_variant(self):
        """dense() は全層の s を1にする"""
        cfg = parse_run_config(BASE).dense()
        self.assertEqual(cfg["model.sparsities"], [1.0, 1.0])
        self.assertIsNone(cfg.train_config().inference_sparsity)
        self.assertIsNone(cfg.build_network(30).output.index)

    def test_describe_schema_lists_every_key(self):
        """--help 用の一覧にすべてのキーが載る"""
        text = describe_schema()
        for key in SCHEMA:
            self.assertIn(key.name, text)

    def test_load_from_file(self):
        """ファイルから読み、読めなければ OSError をそのまま投げる"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.cfg"
            path.write_text(BASE, encoding="utf-8")
            self.assertEqual(load_run_config(path)["model.dims"], [16, 400])
            with self.assertRaises(OSError):
                load_run_config(Path(tmp) / "missing.cfg")
