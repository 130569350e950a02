from ...autotune import AutotuneConfig, autotune, plan_cost_ratio
from ..base import EngineCommand


class Command(EngineCommand):
    help = '層の形とスパース性からLSHのパラメータ (K, L, R) を選びます'

    def add_arguments(self, parser):
        parser.add_argument('--dim', type=int, required=True, help='層の幅 d')
        parser.add_argument('--prev-dim', type=int, required=True, help='入力の次元 d_prev')
        parser.add_argument('--sparsity', type=float, required=True, help='スパース性 s (0, 1)')
        parser.add_argument('--c1', type=float, default=1.0, help='安全係数（デフォルト: 1.0）')
        parser.add_argument('--c2', type=float, default=0.1, help='コスト比の上限（デフォルト: 0.1）')
        parser.add_argument('--lmax', type=int, default=256, help='テーブル数の上限（デフォルト: 256）')

    def run(self, *args, **options):
        cfg = AutotuneConfig(c1=options['c1'], c2=options['c2'], l_max=options['lmax'])
        plan = autotune(options['dim'], options['prev_dim'], options['sparsity'], cfg)
        self.stdout.write(f'k={plan.k_bits}')
        self.stdout.write(f'l={plan.num_tables}')
        self.stdout.write(f'r={plan.bucket_cap}')
        self.stdout.write(f'cost_ratio={plan_cost_ratio(plan):.6f}')
