"""Checkpoint directories.

Layout of ``<run>/checkpoints/step_00000200/``::

    manifest.json        specs, seed, step, epoch, attention, last losses
    generator.bin        parameter blob
    discriminator_1.bin  … one blob per discriminator
    train_state.pt       optimizer moments, scheduler and RNG state

Blob layout: 8-byte magic ``P2NBLOB1``, little-endian uint64 header length,
UTF-8 JSON header ``[{"name", "shape", "offset"}]``, then each tensor as
row-major little-endian float32 at its byte offset from the data start.
"""
import json
import logging
import os
import shutil
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from src.core.errors import CheckpointError
from src.utils.data_utils import atomic_write_text

logger = logging.getLogger(__name__)

BLOB_MAGIC = b'P2NBLOB1'
MANIFEST_FILE = 'manifest.json'
TRAIN_STATE_FILE = 'train_state.pt'
LATEST_FILE = 'latest'
CHECKPOINT_PREFIX = 'step_'


def write_blob(state_dict, file_path):
    header = []
    chunks = []
    offset = 0
    for name, tensor in state_dict.items():
        array = np.ascontiguousarray(tensor.detach().cpu().to(torch.float32).numpy(), dtype='<f4')
        header.append({'name': name, 'shape': list(array.shape), 'offset': offset})
        chunks.append(array.tobytes(order='C'))
        offset += array.nbytes

    header_bytes = json.dumps(header).encode('utf-8')
    with open(file_path, 'wb') as file:
        file.write(BLOB_MAGIC)
        file.write(struct.pack('<Q', len(header_bytes)))
        file.write(header_bytes)
        for chunk in chunks:
            file.write(chunk)


def read_blob(file_path):
    try:
        with open(file_path, 'rb') as file:
            payload = file.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read parameter blob {file_path}: {exc}") from exc
    if payload[:8] != BLOB_MAGIC:
        raise CheckpointError(f"{file_path} is not a parameter blob")

    (header_length,) = struct.unpack('<Q', payload[8:16])
    try:
        header = json.loads(payload[16:16 + header_length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt blob header in {file_path}") from exc

    data = memoryview(payload)[16 + header_length:]
    state = OrderedDict()
    for item in header:
        count = int(np.prod(item['shape'])) if item['shape'] else 1
        end = item['offset'] + 4 * count
        if end > len(data):
            raise CheckpointError(f"{file_path}: tensor {item['name']} truncated")
        array = np.frombuffer(data[item['offset']:end], dtype='<f4').reshape(item['shape'])
        state[item['name']] = torch.from_numpy(array.copy())
    return state


def checkpoint_root(run_dir):
    return Path(run_dir) / 'checkpoints'


def list_checkpoints(run_dir):
    root = checkpoint_root(run_dir)
    if not root.exists():
        return []
    return sorted(path for path in root.iterdir()
                  if path.is_dir() and path.name.startswith(CHECKPOINT_PREFIX))


def save_checkpoint(run_dir, step, modules, manifest, train_state, keep=3):
    root = checkpoint_root(run_dir)
    root.mkdir(parents=True, exist_ok=True)
    name = f"{CHECKPOINT_PREFIX}{step:08d}"
    final_dir = root / name
    tmp_dir = root / f".tmp-{name}"
    if tmp_dir.exists():
        shutil.rmtree(tmp_dir)

    try:
        tmp_dir.mkdir()
        for module_name, module in modules.items():
            write_blob(module.state_dict(), tmp_dir / f"{module_name}.bin")
        torch.save(train_state, tmp_dir / TRAIN_STATE_FILE)
        manifest = dict(manifest, step=step, modules=sorted(modules))
        (tmp_dir / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2), encoding='utf-8')
        if final_dir.exists():
            shutil.rmtree(final_dir)
        os.replace(tmp_dir, final_dir)
        atomic_write_text(root / LATEST_FILE, name)
    except OSError as exc:
        shutil.rmtree(tmp_dir, ignore_errors=True)
        raise CheckpointError(f"cannot write checkpoint {final_dir}: {exc}") from exc

    logger.info("checkpoint written: %s", final_dir)
    _prune(run_dir, keep, final_dir)
    return final_dir


def _prune(run_dir, keep, current):
    # 刚写入的检查点始终保留
    if keep <= 0:
        return
    others = [path for path in list_checkpoints(run_dir) if path != current]
    for stale in others[:max(0, len(others) - (keep - 1))]:
        shutil.rmtree(stale, ignore_errors=True)
        logger.info("removed old checkpoint %s", stale)


def archive_checkpoints(run_dir):
    """Move existing checkpoints aside to ``checkpoints.prev`` before a fresh run."""
    root = checkpoint_root(run_dir)
    if not root.exists():
        return None
    archive = root.with_name(f"{root.name}.prev")
    if archive.exists():
        shutil.rmtree(archive)
    try:
        os.replace(root, archive)
    except OSError as exc:
        raise CheckpointError(f"cannot archive checkpoints in {run_dir}: {exc}") from exc
    logger.warning("existing checkpoints moved to %s", archive)
    return archive


def latest_checkpoint(run_dir):
    root = checkpoint_root(run_dir)
    pointer = root / LATEST_FILE
    if pointer.exists():
        candidate = root / pointer.read_text(encoding='utf-8').strip()
        if (candidate / MANIFEST_FILE).exists():
            return candidate
    checkpoints = [path for path in list_checkpoints(run_dir) if (path / MANIFEST_FILE).exists()]
    return checkpoints[-1] if checkpoints else None


def resolve_checkpoint(path):
    path = Path(path)
    if (path / MANIFEST_FILE).exists():
        return path
    latest = latest_checkpoint(path)
    if latest is None and path.name == 'checkpoints':
        latest = latest_checkpoint(path.parent)
    if latest is None:
        raise CheckpointError(f"no checkpoint found at {path}")
    return latest


def read_manifest(checkpoint_dir):
    manifest_path = Path(checkpoint_dir) / MANIFEST_FILE
    try:
        return json.loads(manifest_path.read_text(encoding='utf-8'))
    except FileNotFoundError as exc:
        raise CheckpointError(f"missing {manifest_path}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest {manifest_path}: {exc}") from exc


def load_module(module, checkpoint_dir, name):
    state = read_blob(Path(checkpoint_dir) / f"{name}.bin")
    try:
        module.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{name} in {checkpoint_dir} does not match the model: {exc}") from exc
    return module


def load_train_state(checkpoint_dir):
    path = Path(checkpoint_dir) / TRAIN_STATE_FILE
    if not path.exists():
        raise CheckpointError(f"missing {path}")
    return torch.load(path, map_location='cpu', weights_only=False)
