import argparse
import logging

from django.core.management.base import BaseCommand, CommandError, DjangoHelpFormatter

from ..exceptions import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    InfeasibleSparsity,
    SerializationError,
)

logger = logging.getLogger(__name__)

# 終了コード
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_IO = 4


class RawHelpFormatter(DjangoHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


class EngineCommand(BaseCommand):
    """
    エンジンのコマンドの基底クラス

    サブクラスは handle の代わりに run を実装する。エンジンの例外は
    終了コード付きの CommandError に変換される。
    """

    epilog = None

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        if self.epilog:
            parser.epilog = self.epilog
            parser.formatter_class = RawHelpFormatter
        return parser

    def run(self, *args, **options):
        raise NotImplementedError

    def handle(self, *args, **options):
        try:
            self.run(*args, **options)
        except (ConfigError, InfeasibleSparsity, ContractError) as e:
            logger.error(f'❌ 設定エラー: {e}')
            raise CommandError(str(e), returncode=EXIT_CONFIG)
        except (DataError, DimensionError, SerializationError) as e:
            logger.error(f'❌ データエラー: {e}')
            raise CommandError(str(e), returncode=EXIT_DATA)
        except OSError as e:
            logger.error(f'❌ 入出力エラー: {e}')
            raise CommandError(str(e), returncode=EXIT_IO)
