"""
Django settings for config project.

学習エンジンはWebサーバーを持たず、管理コマンド (train / eval / predict /
autotune / bench) だけで使う。エンジンの設定は環境変数か .env で上書きできる。

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import environ

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# .envファイルから環境変数を読み込む
env = environ.Env()
env.read_env(BASE_DIR / ".env")

# 管理コマンドしか使わないため、SECRET_KEY はデフォルト値でよい
SECRET_KEY = env("SECRET_KEY", default="engine-local-only")

DEBUG = env.bool("DEBUG", default=False)

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    "engine",  # 疎学習エンジン
]

# データベースは使わない
DATABASES = {}

LANGUAGE_CODE = "ja"

TIME_ZONE = "Asia/Tokyo"

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# エンジン設定
ENGINE_LOG_LEVEL = env("ENGINE_LOG_LEVEL", default="INFO")
ENGINE_WORKERS = env.int("ENGINE_WORKERS", default=1)  # train.workers のデフォルト
ENGINE_REBUILD_INTERVAL = env.int("ENGINE_REBUILD_INTERVAL", default=50)  # バッチ数
ENGINE_LATENCY_SAMPLES = env.int("ENGINE_LATENCY_SAMPLES", default=1000)
ENGINE_SLOW_TESTS = env.bool("ENGINE_SLOW_TESTS", default=False)  # 実規模の受け入れテスト

# ログ設定（標準出力は管理コマンドの出力に使うため、ログは標準エラーへ）
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {
            "format": "{asctime} {levelname} {name}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
            "formatter": "simple",
        },
    },
    "loggers": {
        "engine": {
            "handlers": ["console"],
            "level": ENGINE_LOG_LEVEL,
            "propagate": False,
        },
    },
}
