import logging
from dataclasses import replace

from ...runconfig import describe_schema, load_run_config
from ...serialization import atomic_write
from ...services.trainer import Trainer
from ..base import EngineCommand

logger = logging.getLogger(__name__)

CSV_HEADER = 'seconds,p_at_1'
MIN_CHECKPOINTS_PER_EPOCH = 2


class Command(EngineCommand):
    help = '学習中の (経過秒, p@1) をCSVで出力します。グラフ化は行いません'
    epilog = '設定キー:\n' + describe_schema()

    def add_arguments(self, parser):
        parser.add_argument('config', type=str, help='実行設定ファイル（key=value 形式）のパス')
        parser.add_argument('--dense', action='store_true', help='全層のスパース性を1にして実行')
        parser.add_argument('--output', type=str, default=None, help='CSVの出力先（output.bench より優先）')

    def run(self, *args, **options):
        cfg = load_run_config(options['config'])
        if options['dense']:
            cfg = cfg.dense()
        train_cfg = cfg.train_config()
        if train_cfg.checkpoints_per_epoch < MIN_CHECKPOINTS_PER_EPOCH:
            train_cfg = replace(train_cfg, checkpoints_per_epoch=MIN_CHECKPOINTS_PER_EPOCH)
        train_set, test_set = cfg.load_datasets()
        network = cfg.build_network(train_set.num_features)

        rows = [CSV_HEADER]
        self.stdout.write(CSV_HEADER)

        def on_checkpoint(checkpoint):
            row = f'{checkpoint.seconds:.6f},{checkpoint.p_at_1:.6f}'
            rows.append(row)
            self.stdout.write(row)

        Trainer(network, train_cfg).train(train_set, eval_dataset=test_set, on_checkpoint=on_checkpoint)

        output = options['output'] or cfg['output.bench']
        if output:
            atomic_write(output, ('\n'.join(rows) + '\n').encode('utf-8'))
            logger.info(f'ベンチマーク結果を保存しました: {output}')
