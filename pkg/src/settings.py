import os
from enum import StrEnum
from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent

DEBUG = os.getenv('DEBUG', 'False') == 'True'
LOG_LEVEL = 'DEBUG' if DEBUG else os.getenv('LOG_LEVEL', 'INFO')


class OutputFormat(StrEnum):
    JSON = 'json'
    TEXT = 'text'
    CSV = 'csv'
    XLSX = 'xlsx'


class MissingPolicy(StrEnum):
    DROP = 'drop'
    ERROR = 'error'


REPORT_VERSION = '1.0'
SIGNIFICANT_DIGITS = 12
MAX_WORKERS = int(os.getenv('MAX_WORKERS', '4'))
MISSING_TOKENS = ('', '?')
