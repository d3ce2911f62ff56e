from collections import Counter
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from config import CONSTANTS
from src.core.errors import DatasetError


def list_images(directory):
    directory = Path(directory)
    extensions = CONSTANTS['IMAGE_EXTENSIONS']
    return sorted(
        path for path in directory.iterdir()
        if path.is_file() and path.suffix.lower() in extensions
    )


def shared_stems(paths):
    counts = Counter(Path(path).stem for path in paths)
    return sorted(stem for stem, count in counts.items() if count > 1)


def load_image(file_path):
    try:
        with Image.open(file_path) as image:
            if image.mode not in ('L', 'RGB'):
                image = image.convert('RGB' if image.mode in ('RGBA', 'P', 'CMYK') else 'L')
            array = np.asarray(image, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DatasetError(f"cannot decode image {file_path}: {exc}") from exc

    if array.ndim == 2:
        array = array[:, :, None]
    return array.astype(np.float32) / 255.0


def to_uint8(array):
    return np.clip(np.rint(np.asarray(array, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(array, file_path):
    """Write a [0, 1] H×W, H×W×1 or H×W×3 array as an 8-bit PNG."""
    data = to_uint8(array)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    Path(file_path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data).save(file_path, format='PNG')


def atomic_write_text(file_path, text):
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=file_path.parent, prefix=f".{file_path.name}.")
    with os.fdopen(fd, 'w', encoding='utf-8') as file:
        file.write(text)
    os.replace(tmp_path, file_path)
