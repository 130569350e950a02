from ...data import load_xc, parse_feature_string
from ...exceptions import ConfigError
from ...nn import Mode
from ...serialization import load_model
from ...services.inference import predict
from ..base import EngineCommand
from .eval import check_compatible


class Command(EngineCommand):
    help = '学習済みモデルで上位のラベルを予測します'

    def add_arguments(self, parser):
        parser.add_argument('--model', type=str, required=True, help='モデルファイルのパス')
        parser.add_argument('--input', type=str, default=None, help='特徴量の文字列（例: "3:0.5 10:1.0"）')
        parser.add_argument('--data', type=str, default=None, help='XC形式のファイル（各行を予測）')
        parser.add_argument('--top', type=int, default=5, help='表示するラベル数（デフォルト: 5）')
        parser.add_argument('--mode', choices=['sparse', 'dense'], default='sparse', help='推論モード')
        parser.add_argument('--inference-sparsity', type=float, default=None, help='疎推論で評価する割合')
        parser.add_argument('--index-base', type=int, default=0, choices=[0, 1], help='IDの始まり')

    def run(self, *args, **options):
        if (options['input'] is None) == (options['data'] is None):
            raise ConfigError('--input と --data のどちらか一方を指定してください')
        network = load_model(options['model'])
        if options['input'] is not None:
            inputs = [parse_feature_string(options['input'], network.input_dim, options['index_base'])]
        else:
            dataset = load_xc(options['data'], index_base=options['index_base'])
            check_compatible(network, dataset)
            inputs = [example.features for example in dataset]

        mode = Mode(options['mode'])
        for x in inputs:
            ranked = predict(network, x, mode, options['inference_sparsity'], top_k=options['top'])
            self.stdout.write(' '.join(str(label) for label in ranked))
