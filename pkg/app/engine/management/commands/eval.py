from django.conf import settings

from ...data import load_xc
from ...exceptions import DimensionError
from ...nn import Mode
from ...serialization import load_model
from ...services.inference import evaluate
from ..base import EngineCommand


def check_compatible(network, dataset):
    if dataset.num_features != network.input_dim:
        raise DimensionError(
            f'データセットの特徴量次元 {dataset.num_features} がモデルの入力次元 {network.input_dim} と一致しません'
        )
    if dataset.num_labels > network.output_dim:
        raise DimensionError(
            f'データセットのラベル数 {dataset.num_labels} がモデルの出力次元 {network.output_dim} を超えています'
        )


class Command(EngineCommand):
    help = '学習済みモデルの precision@k と平均推論時間を表示します'

    def add_arguments(self, parser):
        parser.add_argument('--model', type=str, required=True, help='モデルファイルのパス')
        parser.add_argument('--data', type=str, required=True, help='評価データ（XC形式）のパス')
        parser.add_argument('--k', type=int, default=1, help='precision@k の k（デフォルト: 1）')
        parser.add_argument(
            '--mode', choices=['sparse', 'dense', 'both'], default='sparse', help='推論モード（デフォルト: sparse）'
        )
        parser.add_argument('--inference-sparsity', type=float, default=None, help='疎推論で評価する割合')
        parser.add_argument('--index-base', type=int, default=0, choices=[0, 1], help='ファイル中のIDの始まり')
        parser.add_argument(
            '--latency-samples',
            type=int,
            default=getattr(settings, 'ENGINE_LATENCY_SAMPLES', 1000),
            help='レイテンシを測るサンプル数の上限',
        )

    def run(self, *args, **options):
        network = load_model(options['model'])
        dataset = load_xc(options['data'], index_base=options['index_base'])
        check_compatible(network, dataset)

        modes = [Mode.DENSE_INFER, Mode.SPARSE_INFER] if options['mode'] == 'both' else [Mode(options['mode'])]
        for mode in modes:
            result = evaluate(
                network,
                dataset,
                k=options['k'],
                mode=mode,
                inference_sparsity=options['inference_sparsity'],
                latency_samples=options['latency_samples'],
            )
            self.stdout.write(result.line())
