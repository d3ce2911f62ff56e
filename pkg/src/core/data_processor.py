import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from sklearn.model_selection import train_test_split

from config import CONSTANTS
from src.core.errors import DatasetError, ShapeError
from src.utils.data_utils import list_images, load_image, save_image, to_uint8

logger = logging.getLogger(__name__)

# 合成数据的目标映射: 亮度权重交换了 R/G 通道
SYNTHETIC_WEIGHTS = np.array([0.587, 0.299, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class PairEntry:
    rgb_path: str
    target_path: str
    id: str
    split: str = 'train'


@dataclass(frozen=True)
class ImagePair:
    id: str
    rgb: np.ndarray
    target: np.ndarray
    split: str = 'train'

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ShapeError(f"{self.id}: rgb must be H×W×3, got {self.rgb.shape}")
        if self.target.ndim != 3 or self.target.shape[2] != 1:
            raise ShapeError(f"{self.id}: target must be H×W×1, got {self.target.shape}")
        if self.rgb.shape[:2] != self.target.shape[:2]:
            raise ShapeError(
                f"{self.id}: rgb {self.rgb.shape[:2]} and target {self.target.shape[:2]} differ"
            )
        if self.split not in CONSTANTS['SPLITS']:
            raise DatasetError(f"{self.id}: unknown split {self.split!r}")
        self.rgb.setflags(write=False)
        self.target.setflags(write=False)


@dataclass
class DatasetManifest:
    root: str
    entries: Tuple[PairEntry, ...]
    modality: str = 'NIR'
    resolution: Tuple[int, int] = (256, 256)
    unmatched: Tuple[str, ...] = ()
    excluded: Tuple[str, ...] = ()

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if entry.id in seen:
                raise DatasetError(f"duplicate id {entry.id!r} in manifest {self.root}")
            seen.add(entry.id)

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self):
        return [entry.id for entry in self.entries]

    def split_entries(self, split):
        return [entry for entry in self.entries if entry.split == split]

    def summary(self):
        return {
            'root': self.root,
            'modality': self.modality,
            'resolution': list(self.resolution),
            'pairs': len(self.entries),
            'train': len(self.split_entries('train')),
            'test': len(self.split_entries('test')),
            'unmatched': len(self.unmatched),
            'excluded': len(self.excluded),
        }


@dataclass(frozen=True)
class BatchSpec:
    batch_size: int
    seed: int = 0
    resize: Tuple[int, int] = (256, 256)

    def __post_init__(self):
        if self.batch_size < 1:
            raise DatasetError(f"batch size must be >= 1, got {self.batch_size}")
        if len(self.resize) != 2 or any(side % 8 for side in self.resize):
            raise ShapeError(f"resize target {self.resize} must have sides divisible by 8")


@dataclass
class Batch:
    ids: List[str]
    rgb: torch.Tensor
    target: torch.Tensor
    epoch: int = 0
    index: int = 0

    def __len__(self):
        return len(self.ids)


def _read_id_file(file_path):
    if not file_path.exists():
        return []
    with open(file_path, 'r', encoding='utf-8') as file:
        return [line.strip() for line in file if line.strip() and not line.startswith('#')]


def _read_split_file(file_path):
    splits = {}
    for line in _read_id_file(file_path):
        parts = line.split()
        if len(parts) != 2 or parts[1] not in CONSTANTS['SPLITS']:
            raise DatasetError(f"bad line in {file_path}: {line!r}")
        splits[parts[0]] = parts[1]
    return splits


def _image_size(file_path):
    with Image.open(file_path) as image:
        width, height = image.size
    return height, width


def _scan_paired_subdirs(root, modality):
    rgb_dir = root / CONSTANTS['RGB_SUBDIR']
    target_dir = root / CONSTANTS['TARGET_SUBDIRS'][modality]
    for directory in (rgb_dir, target_dir):
        if not directory.is_dir():
            raise DatasetError(f"missing directory: {directory}")

    def by_stem(directory):
        found = {}
        for path in list_images(directory):
            if path.stem in found:
                raise DatasetError(f"duplicate id {path.stem!r} in {directory}")
            found[path.stem] = path
        return found

    rgb_files = by_stem(rgb_dir)
    target_files = by_stem(target_dir)
    matched = sorted(set(rgb_files) & set(target_files))
    unmatched = sorted(
        [rgb_files[key].name for key in set(rgb_files) - set(target_files)]
        + [f"{target_dir.name}/{target_files[key].name}" for key in set(target_files) - set(rgb_files)]
    )
    pairs = [(str(rgb_files[key]), str(target_files[key]), key) for key in matched]
    return pairs, unmatched


def _scan_file_list(root, manifest_file):
    listing = root / manifest_file
    if not listing.exists():
        raise DatasetError(f"missing manifest file: {listing}")
    pairs = []
    with open(listing, 'r', encoding='utf-8') as file:
        for line_no, line in enumerate(file, start=1):
            line = line.rstrip('\n')
            if not line.strip() or line.startswith('#'):
                continue
            parts = line.split('\t')
            if len(parts) != 3:
                raise DatasetError(f"{listing}:{line_no}: expected rgb<TAB>target<TAB>id")
            rgb_path, target_path, pair_id = parts
            resolved = []
            for path in (rgb_path, target_path):
                path = Path(path)
                path = path if path.is_absolute() else root / path
                if not path.exists():
                    raise DatasetError(f"missing file listed in {listing}: {path}")
                resolved.append(str(path))
            pairs.append((resolved[0], resolved[1], pair_id))
    return pairs, []


def load_manifest(root, layout='paired-subdirs', modality='NIR', manifest_file='pairs.tsv',
                  test_fraction=0.0, seed=0):
    """Discover the pairs under ``root``.

    ``split.txt`` assigns splits; without it every pair is ``train`` unless
    ``test_fraction`` asks for a seeded hold-out. Ids in ``exclude.txt``
    are dropped before splitting.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"missing directory: {root}")
    if modality not in CONSTANTS['TARGET_SUBDIRS']:
        raise DatasetError(f"unknown target modality {modality!r}")

    if layout == 'paired-subdirs':
        pairs, unmatched = _scan_paired_subdirs(root, modality)
    elif layout == 'file-list':
        pairs, unmatched = _scan_file_list(root, manifest_file)
    else:
        raise DatasetError(f"unknown layout {layout!r}")

    for name in unmatched:
        logger.warning("unmatched file %s under %s", name, root)

    excluded_ids = set(_read_id_file(root / CONSTANTS['EXCLUDE_FILE']))
    excluded = tuple(sorted(pair_id for _, _, pair_id in pairs if pair_id in excluded_ids))
    pairs = [pair for pair in pairs if pair[2] not in excluded_ids]
    if excluded:
        logger.info("excluded %d pairs listed in %s", len(excluded), CONSTANTS['EXCLUDE_FILE'])

    if not pairs:
        listing = ', '.join(unmatched) if unmatched else 'none'
        raise DatasetError(f"zero matched pairs under {root}; unmatched: {listing}")

    ids = [pair_id for _, _, pair_id in pairs]
    duplicates = sorted({pair_id for pair_id in ids if ids.count(pair_id) > 1})
    if duplicates:
        raise DatasetError(f"duplicate ids in {root}: {', '.join(duplicates)}")

    splits = _read_split_file(root / CONSTANTS['SPLIT_FILE'])
    if not splits and test_fraction > 0:
        _, test_ids = train_test_split(sorted(ids), test_size=test_fraction, random_state=seed)
        splits = {pair_id: 'test' for pair_id in test_ids}
    elif splits:
        missing = [pair_id for pair_id in ids if pair_id not in splits]
        if missing:
            logger.warning("%d ids absent from %s default to train", len(missing), CONSTANTS['SPLIT_FILE'])

    entries = tuple(
        PairEntry(rgb_path, target_path, pair_id, splits.get(pair_id, 'train'))
        for rgb_path, target_path, pair_id in sorted(pairs, key=lambda pair: pair[2])
    )
    manifest = DatasetManifest(
        root=str(root),
        entries=entries,
        modality=modality,
        resolution=_image_size(entries[0].rgb_path),
        unmatched=tuple(unmatched),
        excluded=excluded,
    )
    logger.info("loaded manifest %s", manifest.summary())
    return manifest


def resize_image(array, size):
    height, width = size
    if array.shape[:2] == (height, width):
        return np.ascontiguousarray(array, dtype=np.float32)
    tensor = torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32)).permute(2, 0, 1)[None]
    resized = F.interpolate(tensor, size=(height, width), mode='bilinear',
                            align_corners=False, antialias=True)
    return resized[0].permute(1, 2, 0).clamp(0.0, 1.0).numpy().copy()


def collapse_to_single_channel(array, name=''):
    if array.shape[2] == 1:
        return array
    # 三通道相同 (差异不超过一个灰度级) 时直接取第一通道
    spread = float(np.max(array.max(axis=2) - array.min(axis=2)))
    if spread <= 1.0 / 255.0 + 1e-6:
        return np.ascontiguousarray(array[:, :, :1])
    logger.warning("target %s has unequal channels (max spread %.4f); averaging", name, spread)
    return array.mean(axis=2, keepdims=True).astype(np.float32)


def load_pair(entry, resize=(256, 256)):
    rgb = load_image(entry.rgb_path)
    target = load_image(entry.target_path)
    if rgb.shape[:2] != target.shape[:2]:
        raise ShapeError(
            f"{entry.id}: rgb {rgb.shape[:2]} and target {target.shape[:2]} resolutions differ"
        )
    # 灰度输入复制为三通道
    if rgb.shape[2] == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    target = collapse_to_single_channel(target, entry.target_path)
    return ImagePair(
        id=entry.id,
        rgb=resize_image(rgb, resize),
        target=resize_image(target, resize),
        split=entry.split,
    )


def synthetic_target(rgb):
    return np.asarray(rgb, dtype=np.float64) @ SYNTHETIC_WEIGHTS


def make_synthetic_dataset(out_dir, n, seed=0, resolution=(64, 64), modality='NIR'):
    if n < 1:
        raise DatasetError(f"synthetic dataset needs n >= 1, got {n}")
    out_dir = Path(out_dir)
    rgb_dir = out_dir / CONSTANTS['RGB_SUBDIR']
    target_dir = out_dir / CONSTANTS['TARGET_SUBDIRS'][modality]
    try:
        rgb_dir.mkdir(parents=True, exist_ok=True)
        target_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot write synthetic dataset to {out_dir}: {exc}") from exc

    rng = np.random.default_rng(seed)
    height, width = resolution
    for index in range(n):
        coarse = torch.from_numpy(rng.random((1, 3, 4, 4)).astype(np.float32))
        field_ = F.interpolate(coarse, size=(height, width), mode='bilinear', align_corners=True)
        rgb8 = to_uint8(field_[0].permute(1, 2, 0).numpy())
        target = synthetic_target(rgb8.astype(np.float64) / 255.0)
        pair_id = f"pair_{index:04d}"
        try:
            save_image(rgb8.astype(np.float64) / 255.0, rgb_dir / f"{pair_id}.png")
            save_image(target, target_dir / f"{pair_id}.png")
        except OSError as exc:
            raise DatasetError(f"cannot write synthetic dataset to {out_dir}: {exc}") from exc

    logger.info("wrote %d synthetic pairs to %s", n, out_dir)
    return load_manifest(out_dir, 'paired-subdirs', modality=modality)


class DataProcessor:
    """Serves seeded mini-batches over a split.

    Decoded pairs are kept in an LRU cache of ``cache_size`` entries
    (0 decodes every batch afresh). With ``num_workers > 0`` one thread
    pool lives as long as the processor and decodes the next batch while
    the current one is in use.
    """

    def __init__(self, manifest, batch_spec, augment=False, num_workers=0, cache_size=256):
        if cache_size < 0:
            raise DatasetError(f"cache size must be >= 0, got {cache_size}")
        self.manifest = manifest
        self.batch_spec = batch_spec
        self.augment = augment
        self.num_workers = num_workers
        self.cache_size = cache_size
        self.load_pair = functools.lru_cache(maxsize=cache_size)(self._decode)
        self._pool: Optional[ThreadPoolExecutor] = None

    def _decode(self, entry):
        return load_pair(entry, self.batch_spec.resize)

    @property
    def pool(self):
        if self._pool is None and self.num_workers > 0:
            self._pool = ThreadPoolExecutor(max_workers=self.num_workers, thread_name_prefix='pix2next-load')
        return self._pool

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def _load_many(self, entries):
        if self.num_workers > 0:
            return list(self.pool.map(self.load_pair, entries))
        return [self.load_pair(entry) for entry in entries]

    def steps_per_epoch(self, split='train'):
        return math.ceil(len(self.manifest.split_entries(split)) / self.batch_spec.batch_size)

    def epoch_order(self, split, epoch):
        entries = self.manifest.split_entries(split)
        rng = np.random.default_rng([self.batch_spec.seed, epoch])
        return [entries[i] for i in rng.permutation(len(entries))]

    def make_batch(self, entries, epoch=0, index=0):
        return self.assemble(self._load_many(entries), epoch, index)

    def assemble(self, pairs, epoch=0, index=0):
        rgb = torch.from_numpy(np.stack([pair.rgb for pair in pairs])).permute(0, 3, 1, 2).contiguous()
        target = torch.from_numpy(np.stack([pair.target for pair in pairs])).permute(0, 3, 1, 2).contiguous()
        if self.augment:
            rng = np.random.default_rng([self.batch_spec.seed, epoch, index])
            flip = torch.from_numpy(rng.random(len(pairs)) < 0.5)
            rgb[flip] = rgb[flip].flip(-1)
            target[flip] = target[flip].flip(-1)
        return Batch([pair.id for pair in pairs], rgb, target, epoch, index)

    def _plan(self, split, epochs, start_epoch, start_batch):
        size = self.batch_spec.batch_size
        for epoch in range(start_epoch, start_epoch + epochs):
            order = self.epoch_order(split, epoch)
            first = start_batch if epoch == start_epoch else 0
            for index in range(first, math.ceil(len(order) / size)):
                yield epoch, index, order[index * size:(index + 1) * size]

    def _submit(self, step):
        if step is None:
            return None
        return [self.pool.submit(self.load_pair, entry) for entry in step[2]]

    def iter_batches(self, split='train', epochs=1, start_epoch=0, start_batch=0) -> Iterator[Batch]:
        entries = self.manifest.split_entries(split)
        if not entries:
            raise DatasetError(f"split {split!r} is empty in {self.manifest.root}")
        size = self.batch_spec.batch_size
        if size > len(entries):
            logger.warning("batch size %d exceeds %s split size %d", size, split, len(entries))

        plan = self._plan(split, epochs, start_epoch, start_batch)
        if self.num_workers == 0:
            for epoch, index, chunk in plan:
                yield self.make_batch(chunk, epoch, index)
            return

        current = next(plan, None)
        pending = self._submit(current)
        while current is not None:
            following = next(plan, None)
            upcoming = self._submit(following)
            epoch, index, _ = current
            yield self.assemble([future.result() for future in pending], epoch, index)
            current, pending = following, upcoming


def iter_batches(manifest, batch_spec, split='train', epochs=1, start_epoch=0,
                 augment=False, num_workers=0) -> Iterator[Batch]:
    processor = DataProcessor(manifest, batch_spec, augment=augment, num_workers=num_workers)
    try:
        yield from processor.iter_batches(split, epochs=epochs, start_epoch=start_epoch)
    finally:
        processor.close()
