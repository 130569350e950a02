import logging

from ...exceptions import ConfigError
from ...runconfig import describe_schema, load_run_config
from ...serialization import atomic_write_all, dump_model
from ...services.trainer import Trainer
from ..base import EngineCommand

logger = logging.getLogger(__name__)


class Command(EngineCommand):
    help = '設定ファイルに従ってモデルを学習し、モデルファイルと学習レポートを書き出します'
    epilog = '設定キー:\n' + describe_schema()

    def add_arguments(self, parser):
        parser.add_argument('config', type=str, help='実行設定ファイル（key=value 形式）のパス')

    def run(self, *args, **options):
        cfg = load_run_config(options['config'])
        if not cfg['output.model']:
            raise ConfigError('output.model が指定されていません')
        train_cfg = cfg.train_config()
        train_set, test_set = cfg.load_datasets()
        network = cfg.build_network(train_set.num_features)

        trainer = Trainer(network, train_cfg)
        report = trainer.train(
            train_set,
            eval_dataset=test_set,
            on_record=lambda record: self.stdout.write(record.to_json()),
        )

        # モデルとレポートは両方書けた場合だけ置く
        outputs = [(cfg['output.model'], dump_model(network))]
        if cfg['output.report']:
            outputs.append((cfg['output.report'], ('\n'.join(report.lines()) + '\n').encode('utf-8')))
        atomic_write_all(outputs)
        logger.info(f'💾 モデルを保存しました: {cfg["output.model"]}')

        final = report.epochs[-1] if report.epochs else None
        summary = f'学習完了: {cfg["output.model"]}'
        if final is not None:
            summary += f' (epoch={final.epoch}, loss={final.loss:.4f}, p@1={final.p_at_1:.4f})'
        self.stdout.write(self.style.SUCCESS(summary))
