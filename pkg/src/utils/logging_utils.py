import json
import logging
import math
from pathlib import Path

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def setup_logging(level='INFO', log_file=None):
    root = logging.getLogger()
    if not getattr(setup_logging, '_configured', False):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
        setup_logging._configured = True
    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(file_handler)
    root.setLevel(level)
    return root


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, 'item'):
        return _jsonable(value.item())
    return value


class JsonlWriter:
    def __init__(self, file_path):
        self.file_path = Path(file_path)
        self.file_path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record):
        line = json.dumps({key: _jsonable(value) for key, value in record.items()})
        with open(self.file_path, 'a', encoding='utf-8') as file:
            file.write(line + '\n')
            file.flush()

    def read(self):
        if not self.file_path.exists():
            return []
        with open(self.file_path, 'r', encoding='utf-8') as file:
            return [json.loads(line) for line in file if line.strip()]

    def truncate_after(self, step):
        """Drop records past ``step`` so a resumed run continues without gaps."""
        kept = [record for record in self.read() if record['step'] <= step]
        with open(self.file_path, 'w', encoding='utf-8') as file:
            for record in kept:
                file.write(json.dumps(record) + '\n')
        return len(kept)
