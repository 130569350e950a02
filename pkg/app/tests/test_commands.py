import json
import re
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from engine.data import load_xc, serialize_xc, synth_clustered
from engine.management.commands.train import Command as TrainCommand
from engine.nn import Mode
from engine.runconfig import SCHEMA
from engine.serialization import load_model
from engine.services.inference import evaluate

SYNTH_CONFIG = """
model.dims=32,200
model.sparsities=1.0,0.05
model.activations=relu,softmax
model.seed=1
train.batch_size=64
train.epochs=1
train.eval_samples=50
data.synthetic=true
data.synth_classes=200
data.synth_samples_per_class=3
data.synth_feature_dim=64
data.synth_seed=2
"""


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def call(self, *args, **kwargs):
        out = StringIO()
        call_command(*args, stdout=out, **kwargs)
        return out.getvalue().splitlines()

    def write_config(self, name, text, **outputs):
        path = self.dir / name
        extra = "".join(f"output.{key}={self.dir / value}\n" for key, value in outputs.items())
        path.write_text(text + extra, encoding="utf-8")
        return path

    def write_dataset(self, name, dataset):
        path = self.dir / name
        with open(path, "w", encoding="utf-8") as f:
            serialize_xc(dataset, f)
        return path


class AutotuneCommandTest(CommandTestCase):
    """autotune コマンドのテスト"""

    def test_prints_plan(self):
        """k, l, r, cost_ratio を1行ずつ出す"""
        lines = self.call("autotune", dim=670091, prev_dim=128, sparsity=0.05)
        self.assertEqual(lines[:3], ["k=12", "l=205", "r=328"])
        self.assertTrue(lines[3].startswith("cost_ratio=0.0536"))

    def test_infeasible(self):
        """実現できないスパース性は終了コード2"""
        with self.assertRaises(CommandError) as ctx:
            self.call("autotune", dim=10000, prev_dim=128, sparsity=0.1)
        self.assertEqual(ctx.exception.returncode, 2)


class TrainCommandTest(CommandTestCase):
    """train コマンドのテスト"""

    def test_trains_and_writes_outputs(self):
        """モデルとバッチごとのレポートを書き出す"""
        config = self.write_config("run.cfg", SYNTH_CONFIG, model="model.bltm", report="report.jsonl")
        lines = self.call("train", str(config))
        report = (self.dir / "report.jsonl").read_text(encoding="utf-8").splitlines()
        batches = -(-480 // 64)
        self.assertEqual(len(report), batches)
        record = json.loads(report[0])
        self.assertEqual(set(record), {"epoch", "batch", "loss", "p_at_1", "seconds"})
        self.assertEqual(lines[:batches], report)
        self.assertEqual(load_model(self.dir / "model.bltm").output_dim, 200)

    def test_rerun_is_byte_identical(self):
        """同じ設定で2回学習すると同じモデルファイルになる"""
        first = self.write_config("a.cfg", SYNTH_CONFIG, model="a.bltm")
        second = self.write_config("b.cfg", SYNTH_CONFIG, model="b.bltm")
        self.call("train", str(first))
        self.call("train", str(second))
        self.assertEqual((self.dir / "a.bltm").read_bytes(), (self.dir / "b.bltm").read_bytes())

    def test_infeasible_sparsity_writes_nothing(self):
        """s=0.2, c2=0.1 は終了コード2で、モデルファイルを作らない"""
        config = self.write_config("run.cfg", SYNTH_CONFIG.replace("1.0,0.05", "1.0,0.2"), model="model.bltm")
        with self.assertRaises(CommandError) as ctx:
            self.call("train", str(config))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertFalse((self.dir / "model.bltm").exists())

    def test_config_errors(self):
        """未知のキーは終了コード2"""
        config = self.write_config("run.cfg", SYNTH_CONFIG + "train.unknown=1\n", model="model.bltm")
        with self.assertRaises(CommandError) as ctx:
            self.call("train", str(config))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_missing_config_file(self):
        """設定ファイルが読めなければ終了コード4"""
        with self.assertRaises(CommandError) as ctx:
            self.call("train", str(self.dir / "missing.cfg"))
        self.assertEqual(ctx.exception.returncode, 4)

    def test_unwritable_report_leaves_no_model(self):
        """レポートが書けなければ終了コード4で、モデルファイルも残さない"""
        (self.dir / "blocker").write_text("", encoding="utf-8")
        config = self.write_config("run.cfg", SYNTH_CONFIG, model="model.bltm", report="blocker/report.jsonl")
        with self.assertRaises(CommandError) as ctx:
            self.call("train", str(config))
        self.assertEqual(ctx.exception.returncode, 4)
        self.assertFalse((self.dir / "model.bltm").exists())
        self.assertEqual(sorted(p.name for p in self.dir.iterdir()), ["blocker", "run.cfg"])

    def test_missing_training_file(self):
        """学習データが読めなければ終了コード4"""
        text = SYNTH_CONFIG.replace("data.synthetic=true", f"data.train={self.dir / 'missing.txt'}")
        config = self.write_config("run.cfg", text, model="model.bltm")
        with self.assertRaises(CommandError) as ctx:
            self.call("train", str(config))
        self.assertEqual(ctx.exception.returncode, 4)

    def test_help_lists_every_key(self):
        """--help に設定キーがすべて載る"""
        text = TrainCommand().create_parser("manage.py", "train").format_help()
        for key in SCHEMA:
            self.assertIn(key.name, text)


class EvalCommandTest(CommandTestCase):
    """eval / predict コマンドのテスト"""

    def setUp(self):
        super().setUp()
        config = self.write_config("run.cfg", SYNTH_CONFIG, model="model.bltm")
        self.call("train", str(config))
        self.model = self.dir / "model.bltm"
        self.data = self.write_dataset("test.txt", synth_clustered(200, 1, 64, 0.1, seed=2))

    def test_line_format(self):
        """p@k=<値> latency_ms=<値> mode=<モード> の1行を出す"""
        lines = self.call("eval", model=str(self.model), data=str(self.data), k=1, mode="sparse")
        self.assertEqual(len(lines), 1)
        match = re.fullmatch(r"p@1=([0-9.]+) latency_ms=([0-9.]+) mode=sparse", lines[0])
        self.assertIsNotNone(match)
        expected = evaluate(load_model(self.model), load_xc(self.data), k=1, mode=Mode.SPARSE_INFER)
        self.assertAlmostEqual(float(match.group(1)), expected.precision, places=6)

    def test_both_modes(self):
        """--mode both は密と疎の2行を出す"""
        lines = self.call("eval", model=str(self.model), data=str(self.data), k=5, mode="both")
        self.assertEqual(len(lines), 2)
        self.assertTrue(lines[0].startswith("p@5=") and lines[0].endswith("mode=dense"))
        self.assertTrue(lines[1].endswith("mode=sparse"))

    def test_missing_model(self):
        """モデルファイルがなければ終了コード4"""
        with self.assertRaises(CommandError) as ctx:
            self.call("eval", model=str(self.dir / "missing.bltm"), data=str(self.data))
        self.assertEqual(ctx.exception.returncode, 4)

    def test_dimension_mismatch(self):
        """特徴量の次元が合わなければ終了コード3"""
        other = self.write_dataset("other.txt", synth_clustered(10, 1, 50, 0.1, seed=0))
        with self.assertRaises(CommandError) as ctx:
            self.call("eval", model=str(self.model), data=str(other))
        self.assertEqual(ctx.exception.returncode, 3)

    def test_corrupt_model(self):
        """壊れたモデルファイルは終了コード3"""
        broken = self.dir / "broken.bltm"
        broken.write_bytes(b"BLTM\x01")
        with self.assertRaises(CommandError) as ctx:
            self.call("eval", model=str(broken), data=str(self.data))
        self.assertEqual(ctx.exception.returncode, 3)

    def test_predict_input(self):
        """--input の特徴量から上位 --top 件のラベルを出す"""
        lines = self.call("predict", model=str(self.model), input="0:1.0 5:0.5", top=3)
        self.assertEqual(len(lines), 1)
        labels = [int(v) for v in lines[0].split()]
        self.assertEqual(len(labels), 3)
        self.assertTrue(all(0 <= label < 200 for label in labels))

    def test_predict_data(self):
        """--data なら1サンプル1行"""
        lines = self.call("predict", model=str(self.model), data=str(self.data), top=2, mode="dense")
        self.assertEqual(len(lines), 200)

    def test_predict_requires_one_source(self):
        """--input と --data は片方だけ"""
        with self.assertRaises(CommandError) as ctx:
            self.call("predict", model=str(self.model))
        self.assertEqual(ctx.exception.returncode, 2)


class BenchCommandTest(CommandTestCase):
    """bench コマンドのテスト"""

    def test_csv(self):
        """ヘッダー付きのCSVを、エポックあたり2行以上出す"""
        config = self.write_config("run.cfg", SYNTH_CONFIG.replace("train.epochs=1", "train.epochs=2"))
        lines = self.call("bench", str(config), output=str(self.dir / "bench.csv"))
        self.assertEqual(lines[0], "seconds,p_at_1")
        self.assertGreaterEqual(len(lines) - 1, 4)
        for row in lines[1:]:
            seconds, p_at_1 = (float(v) for v in row.split(","))
            self.assertGreaterEqual(seconds, 0.0)
            self.assertTrue(0.0 <= p_at_1 <= 1.0)
        self.assertEqual((self.dir / "bench.csv").read_text(encoding="utf-8").splitlines(), lines)

    def test_dense_baseline(self):
        """--dense でも同じ形式"""
        config = self.write_config("run.cfg", SYNTH_CONFIG)
        lines = self.call("bench", str(config), dense=True)
        self.assertEqual(lines[0], "seconds,p_at_1")
        self.assertGreaterEqual(len(lines) - 1, 2)
