import numpy as np
import pytest
from PIL import Image

from src.core.data_processor import (
    BatchSpec,
    DataProcessor,
    collapse_to_single_channel,
    load_manifest,
    load_pair,
    make_synthetic_dataset,
    synthetic_target,
)
from src.core.errors import DatasetError, ShapeError
from src.utils.data_utils import load_image


def write_png(path, array):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)


def make_pairs(root, ids, size=16, value=128):
    for pair_id in ids:
        write_png(root / 'rgb' / f"{pair_id}.png", np.full((size, size, 3), value))
        write_png(root / 'nir' / f"{pair_id}.png", np.full((size, size), value))


def test_paired_subdirs_manifest(tmp_path):
    make_pairs(tmp_path, ['a', 'b'])
    manifest = load_manifest(tmp_path)
    assert len(manifest) == 2
    assert manifest.ids == ['a', 'b']
    assert all(entry.split == 'train' for entry in manifest.entries)


def test_zero_matched_pairs_lists_unmatched(tmp_path):
    write_png(tmp_path / 'rgb' / 'a.png', np.zeros((8, 8, 3)))
    (tmp_path / 'nir').mkdir()
    with pytest.raises(DatasetError, match='zero matched pairs') as excinfo:
        load_manifest(tmp_path)
    assert 'a.png' in str(excinfo.value)


def test_missing_directory(tmp_path):
    with pytest.raises(DatasetError, match='missing directory'):
        load_manifest(tmp_path / 'nowhere')


def test_unmatched_files_are_reported(tmp_path):
    make_pairs(tmp_path, ['a', 'b'])
    write_png(tmp_path / 'rgb' / 'c.png', np.zeros((16, 16, 3)))
    manifest = load_manifest(tmp_path)
    assert len(manifest) == 2
    assert manifest.unmatched == ('c.png',)


def test_split_and_exclude_files(tmp_path):
    make_pairs(tmp_path, ['a', 'b', 'c', 'd'])
    (tmp_path / 'split.txt').write_text('a train\nb test\nc test\n')
    (tmp_path / 'exclude.txt').write_text('d\n')
    manifest = load_manifest(tmp_path)
    assert manifest.ids == ['a', 'b', 'c']
    assert [e.id for e in manifest.split_entries('test')] == ['b', 'c']
    assert manifest.excluded == ('d',)


def test_test_fraction_draws_seeded_holdout(tmp_path):
    make_pairs(tmp_path, [f"p{i}" for i in range(10)])
    first = load_manifest(tmp_path, test_fraction=0.2, seed=3)
    second = load_manifest(tmp_path, test_fraction=0.2, seed=3)
    assert len(first.split_entries('test')) == 2
    assert first.split_entries('test') == second.split_entries('test')


def test_file_list_layout(tmp_path):
    make_pairs(tmp_path, ['a', 'b'])
    (tmp_path / 'pairs.tsv').write_text('rgb/a.png\tnir/a.png\tfirst\nrgb/b.png\tnir/b.png\tsecond\n')
    manifest = load_manifest(tmp_path, layout='file-list')
    assert manifest.ids == ['first', 'second']


def test_file_list_missing_file(tmp_path):
    (tmp_path / 'pairs.tsv').write_text('rgb/a.png\tnir/a.png\ta\n')
    with pytest.raises(DatasetError, match='a.png'):
        load_manifest(tmp_path, layout='file-list')


def test_load_pair_resizes_and_scales(tmp_path):
    make_pairs(tmp_path, ['big'], size=512, value=255)
    pair = load_pair(load_manifest(tmp_path).entries[0], resize=(256, 256))
    assert pair.rgb.shape == (256, 256, 3)
    assert pair.target.shape == (256, 256, 1)
    assert pair.rgb.min() >= 0.0 and pair.rgb.max() <= 1.0
    assert not pair.rgb.flags.writeable


def test_all_black_pair_is_zero(tmp_path):
    make_pairs(tmp_path, ['black'], size=32, value=0)
    pair = load_pair(load_manifest(tmp_path).entries[0], resize=(32, 32))
    assert not pair.rgb.any() and not pair.target.any()


def test_rgb_target_resolution_mismatch(tmp_path):
    write_png(tmp_path / 'rgb' / 'a.png', np.zeros((16, 16, 3)))
    write_png(tmp_path / 'nir' / 'a.png', np.zeros((32, 32)))
    with pytest.raises(ShapeError):
        load_pair(load_manifest(tmp_path).entries[0], resize=(16, 16))


def test_equal_channel_target_collapses_to_channel_zero():
    rng = np.random.default_rng(0)
    gray = rng.random((8, 8, 1)).astype(np.float32)
    collapsed = collapse_to_single_channel(np.repeat(gray, 3, axis=2))
    np.testing.assert_array_equal(collapsed, gray)


def test_unequal_channel_target_is_averaged():
    array = np.stack([np.zeros((4, 4)), np.ones((4, 4)), np.full((4, 4), 0.5)], axis=2).astype(np.float32)
    np.testing.assert_allclose(collapse_to_single_channel(array), 0.5)


def test_synthetic_dataset_round_trip(tmp_path):
    manifest = make_synthetic_dataset(tmp_path / 'a', 8, seed=0)
    assert len(manifest) == 8
    for entry in manifest.entries:
        rgb = load_image(entry.rgb_path)
        target = load_image(entry.target_path)[:, :, 0]
        assert np.abs(synthetic_target(rgb) - target).max() <= 1.0 / 255.0 + 1e-6


def test_synthetic_dataset_is_byte_identical(tmp_path):
    first = make_synthetic_dataset(tmp_path / 'a', 3, seed=5)
    second = make_synthetic_dataset(tmp_path / 'b', 3, seed=5)
    for a, b in zip(first.entries, second.entries):
        assert open(a.rgb_path, 'rb').read() == open(b.rgb_path, 'rb').read()
        assert open(a.target_path, 'rb').read() == open(b.target_path, 'rb').read()


def test_synthetic_dataset_rejects_zero(tmp_path):
    with pytest.raises(DatasetError):
        make_synthetic_dataset(tmp_path, 0)


def test_batch_spec_validation():
    with pytest.raises(DatasetError):
        BatchSpec(0)
    with pytest.raises(ShapeError):
        BatchSpec(2, resize=(60, 64))


def test_batches_partition_and_repeat(tmp_path):
    make_synthetic_dataset(tmp_path, 5, seed=1, resolution=(16, 16))
    manifest = load_manifest(tmp_path)
    spec = BatchSpec(2, seed=7, resize=(16, 16))
    first = list(DataProcessor(manifest, spec).iter_batches('train', epochs=1))
    second = list(DataProcessor(manifest, spec).iter_batches('train', epochs=1))
    assert [len(batch) for batch in first] == [2, 2, 1]
    assert [batch.ids for batch in first] == [batch.ids for batch in second]
    assert sorted(pair_id for batch in first for pair_id in batch.ids) == manifest.ids


def test_epochs_cover_every_id_once(synthetic_root):
    manifest = load_manifest(synthetic_root)
    processor = DataProcessor(manifest, BatchSpec(3, seed=0, resize=(64, 64)))
    seen = {}
    for batch in processor.iter_batches('train', epochs=3):
        seen.setdefault(batch.epoch, []).extend(batch.ids)
    assert all(sorted(ids) == manifest.ids for ids in seen.values())
    assert seen[0] != seen[1]


def test_different_seeds_give_different_orders(tmp_path):
    make_pairs(tmp_path, [f"p{i:03d}" for i in range(100)], size=8)
    manifest = load_manifest(tmp_path)
    differing = 0
    for seed in range(10):
        a = DataProcessor(manifest, BatchSpec(4, seed=seed, resize=(8, 8))).epoch_order('train', 0)
        b = DataProcessor(manifest, BatchSpec(4, seed=seed + 100, resize=(8, 8))).epoch_order('train', 0)
        differing += a != b
    assert differing == 10


def test_threaded_loading_matches_sequential(synthetic_root):
    manifest = load_manifest(synthetic_root)
    spec = BatchSpec(3, seed=2, resize=(64, 64))
    sequential = list(DataProcessor(manifest, spec).iter_batches('train'))
    threaded = list(DataProcessor(manifest, spec, num_workers=3).iter_batches('train'))
    for a, b in zip(sequential, threaded):
        assert a.ids == b.ids
        assert a.rgb.numpy().tobytes() == b.rgb.numpy().tobytes()


def test_augment_flips_pairs_together(synthetic_root):
    manifest = load_manifest(synthetic_root)
    spec = BatchSpec(8, seed=0, resize=(64, 64))
    plain = next(DataProcessor(manifest, spec).iter_batches('train'))
    flipped = next(DataProcessor(manifest, spec, augment=True).iter_batches('train'))
    again = next(DataProcessor(manifest, spec, augment=True).iter_batches('train'))
    assert flipped.rgb.equal(again.rgb)
    for i in range(len(plain)):
        rgb_flipped = flipped.rgb[i].equal(plain.rgb[i].flip(-1))
        target_flipped = flipped.target[i].equal(plain.target[i].flip(-1))
        assert rgb_flipped == target_flipped or flipped.rgb[i].equal(plain.rgb[i])


def test_decoded_pairs_cache_is_bounded(synthetic_root):
    manifest = load_manifest(synthetic_root)
    spec = BatchSpec(4, seed=0, resize=(64, 64))
    processor = DataProcessor(manifest, spec, cache_size=3)
    list(processor.iter_batches('train', epochs=2))
    info = processor.load_pair.cache_info()
    assert info.currsize == 3 and info.maxsize == 3

    uncached = DataProcessor(manifest, spec, cache_size=0)
    list(uncached.iter_batches('train'))
    assert uncached.load_pair.cache_info().currsize == 0
    with pytest.raises(DatasetError):
        DataProcessor(manifest, spec, cache_size=-1)


def test_worker_pool_is_shared_across_batches(synthetic_root):
    manifest = load_manifest(synthetic_root)
    processor = DataProcessor(manifest, BatchSpec(2, seed=0, resize=(64, 64)), num_workers=2)
    pools = []
    for batch in processor.iter_batches('train', epochs=2):
        pools.append(processor.pool)
    assert len(pools) == 8 and all(pool is pools[0] for pool in pools)
    processor.close()
    assert processor._pool is None
    assert processor.make_batch(manifest.entries[:2]).ids == manifest.ids[:2]
    processor.close()
