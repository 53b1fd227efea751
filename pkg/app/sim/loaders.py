import json
import logging
import os
import tempfile
from datetime import datetime
from typing import Any, Dict, Optional, Union

import pandas as pd
from pydantic import BaseModel

logger = logging.getLogger(__name__)


def _default_file_mode() -> int:
    umask = os.umask(0)
    os.umask(umask)
    return 0o666 & ~umask


# права, с которыми open() создал бы файл; mkstemp создает 0o600
_FILE_MODE = _default_file_mode()


class ResultWriter:
    """Запись результатов: CSV и JSON пишутся во временный файл и атомарно переименовываются"""

    def __init__(self, keep_dir: Optional[str] = None):
        self.keep_dir = keep_dir
        if keep_dir:
            os.makedirs(keep_dir, exist_ok=True)

    @staticmethod
    def _atomic_write(path: str, write):
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=os.path.splitext(path)[1])
        try:
            with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
                write(f)
            os.chmod(tmp_path, _FILE_MODE)
            os.replace(tmp_path, path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise

    def write_csv(self, df: pd.DataFrame, path: str) -> int:
        """CSV с заголовком и завершающим переводом строки; возвращает число строк"""
        self._atomic_write(path, lambda f: df.to_csv(f, index=False, lineterminator='\n'))
        logger.info(f"Сохранено {len(df)} строк: {path}")
        return len(df)

    def write_json(self, payload: Union[BaseModel, Dict[str, Any]], path: str):
        if isinstance(payload, BaseModel):
            text = payload.model_dump_json(indent=2, by_alias=True)
        else:
            text = json.dumps(payload, ensure_ascii=False, indent=2, default=str)
        self._atomic_write(path, lambda f: f.write(text + '\n'))
        logger.info(f"JSON сохранен: {path}")

    def save_intermediate(self, name: str, df: pd.DataFrame) -> Optional[str]:
        """Промежуточный артефакт конвейера; ничего не делает без keep_dir"""
        if not self.keep_dir:
            return None
        path = os.path.join(self.keep_dir, f"{name}.csv")
        self.write_csv(df, path)
        return path

    def save_run_report(self, stats: Dict[str, Any], summary: Dict[str, Any]) -> Optional[str]:
        """Итоговый отчет о запуске рядом с промежуточными файлами"""
        if not self.keep_dir:
            return None
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        path = os.path.join(self.keep_dir, f"run_report_{timestamp}.json")
        self.write_json({'timestamp': timestamp, 'statistics': stats, 'summary': summary}, path)
        return path
