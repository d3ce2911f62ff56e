import logging
import time
from pathlib import Path

import numpy as np
import torch
from tqdm import tqdm

from src.core.data_processor import resize_image
from src.core.errors import DatasetError, Pix2NextError, ShapeError
from src.core.extractor import ExtractorSpec, build_extractor
from src.core.generator import Generator, GeneratorSpec
from src.utils import checkpoint_utils
from src.utils.data_utils import list_images, load_image, save_image, shared_stems

logger = logging.getLogger(__name__)


class Translator:
    def __init__(self, checkpoint, weights_dir='', device='cpu'):
        self.checkpoint_dir = checkpoint_utils.resolve_checkpoint(checkpoint)
        self.manifest = checkpoint_utils.read_manifest(self.checkpoint_dir)
        self.device = torch.device(device)
        self.resolution = tuple(int(side) for side in self.manifest['resolution'])
        if any(side % 8 for side in self.resolution):
            raise ShapeError(f"checkpoint resolution {self.resolution} is not divisible by 8")

        extractor_fields = dict(self.manifest['extractor'])
        if weights_dir:
            extractor_fields['weights_dir'] = weights_dir
        self.extractor_spec = ExtractorSpec(**extractor_fields)
        self.extractor = build_extractor(self.extractor_spec).to(self.device)

        self.generator_spec = GeneratorSpec(**self.manifest['generator'])
        self.generator = Generator(self.generator_spec, use_features=self.extractor_spec.enabled)
        checkpoint_utils.load_module(self.generator, self.checkpoint_dir, 'generator')
        self.generator.to(self.device).eval()
        self.results = {}
        logger.info(
            "translator loaded %s (step %s, %s attention)",
            self.checkpoint_dir, self.manifest.get('step'), self.manifest.get('attention'),
        )

    @torch.no_grad()
    def translate_array(self, rgb):
        """H×W×3 array in [0, 1] → H'×W'×1 array at the model resolution."""
        rgb = np.asarray(rgb, dtype=np.float32)
        if rgb.ndim == 2:
            rgb = rgb[:, :, None]
        if rgb.shape[2] == 1:
            rgb = np.repeat(rgb, 3, axis=2)
        rgb = resize_image(rgb, self.resolution)
        batch = torch.from_numpy(np.ascontiguousarray(rgb)).permute(2, 0, 1)[None].to(self.device)
        generated = self.generator(batch, self.extractor(batch))
        return generated[0].permute(1, 2, 0).cpu().numpy()

    def translate(self, inputs, output_dir, progress=True):
        if isinstance(inputs, (str, Path)) and Path(inputs).is_dir():
            files = list_images(inputs)
        else:
            files = [Path(path) for path in ([inputs] if isinstance(inputs, (str, Path)) else inputs)]
        if not files:
            raise DatasetError(f"no inputs found in {inputs}")
        shared = shared_stems(files)
        if shared:
            # 输出统一为 <stem>.png，同名不同扩展名会互相覆盖
            names = sorted(path.name for path in files if path.stem in shared)
            raise DatasetError(f"inputs would overwrite each other: {', '.join(names)}")

        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        outputs, failures = {}, {}
        for file_path in tqdm(files, disable=not progress, desc='translate'):
            target_path = output_dir / f"{file_path.stem}.png"
            try:
                save_image(self.translate_array(load_image(file_path)), target_path)
            except (Pix2NextError, OSError) as exc:
                logger.error("translate failed for %s: %s", file_path, exc)
                failures[file_path.name] = str(exc)
                continue
            outputs[file_path.name] = target_path

        elapsed = time.perf_counter() - started
        self.results = {'outputs': outputs, 'failures': failures, 'seconds': elapsed}
        logger.info("translated %d / %d images in %.2fs", len(outputs), len(files), elapsed)
        return self.results


def translate(checkpoint, inputs, output_dir, **kwargs):
    return Translator(checkpoint).translate(inputs, output_dir, **kwargs)
