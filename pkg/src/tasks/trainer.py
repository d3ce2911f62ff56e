import logging
import math
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from tqdm import tqdm

from src.core.data_processor import BatchSpec, DataProcessor, load_manifest
from src.core.discriminator import (
    DiscriminatorSpec,
    build_discriminators,
    multiscale_pyramid,
    score,
)
from src.core.errors import ConfigError, NumericalError, TrainingDivergedError
from src.core.extractor import ExtractorSpec, build_extractor, probe_feature_dim
from src.core.generator import GeneratorSpec, build_generator, count_parameters
from src.core.losses import (
    LossWeights,
    SSIMParams,
    feature_matching_loss,
    gan_loss,
    ssim_loss,
    total_generator_loss,
)
from src.core.scheduler import WarmupCosineSchedule, WarmupCosineScheduler
from src.core.visualizer import Visualizer
from src.utils import checkpoint_utils
from src.utils.logging_utils import JsonlWriter
from src.utils.visualization_utils import save_plot

logger = logging.getLogger(__name__)

LOG_FILE = 'train_log.jsonl'
SAMPLE_COUNT = 4


def set_seed(seed):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def set_requires_grad(modules, flag):
    for module in modules:
        for param in module.parameters():
            param.requires_grad = flag


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    iterations: int = 0
    batch_size: int = 4
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    betas: Tuple[float, float] = (0.5, 0.999)
    warmup_fraction: float = 0.05
    min_lr_fraction: float = 0.01
    grad_clip: float = 0.0
    attention: str = 'EBD'
    seed: int = 0
    checkpoint_interval: int = 500
    keep_checkpoints: int = 3
    output_dir: str = 'runs/pix2next'
    device: str = 'cpu'
    num_workers: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    gan_mode: str = 'bce'
    ssim: SSIMParams = field(default_factory=SSIMParams)

    def __post_init__(self):
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError('train.lr_g', f"learning rates must be > 0, got {self.lr_g}, {self.lr_d}")
        if self.iterations <= 0 and self.epochs <= 0:
            raise ConfigError('train.epochs', "either epochs or iterations must be positive")

    @classmethod
    def from_run_config(cls, config):
        train, loss = config['train'], config['loss']
        return cls(
            epochs=int(train['epochs']),
            iterations=int(train['iterations']),
            batch_size=int(train['batch_size']),
            lr_g=float(train['lr_g']),
            lr_d=float(train['lr_d']),
            betas=tuple(float(beta) for beta in train['betas']),
            warmup_fraction=float(train['warmup_fraction']),
            min_lr_fraction=float(train['min_lr_fraction']),
            grad_clip=float(train['grad_clip']),
            attention=train['attention'],
            seed=int(train['seed']),
            checkpoint_interval=int(train['checkpoint_interval']),
            keep_checkpoints=int(train['keep_checkpoints']),
            output_dir=str(train['output_dir']),
            device=train['device'],
            num_workers=int(train['num_workers']),
            weights=LossWeights.from_config(loss),
            gan_mode=loss['gan_mode'],
            ssim=SSIMParams(window=int(loss['ssim_window']), sigma=float(loss['ssim_sigma'])),
        )

    def total_steps(self, steps_per_epoch):
        return self.iterations if self.iterations > 0 else self.epochs * steps_per_epoch

    def schedule(self, base_lr, total_steps):
        if total_steps < 2:
            raise ConfigError('train.iterations', f"training needs at least 2 steps, got {total_steps}")
        warmup = min(max(1, int(round(self.warmup_fraction * total_steps))), total_steps - 1)
        return WarmupCosineSchedule(base_lr, total_steps, warmup, self.min_lr_fraction)


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    last_record: Dict[str, float] = field(default_factory=dict)


class Trainer:
    def __init__(self, run_config, manifest=None):
        self.config = run_config
        self.train_config = TrainConfig.from_run_config(run_config)
        self.results = {}
        self.state = TrainState()
        self.output_dir = Path(self.train_config.output_dir)
        self.device = torch.device(self.train_config.device)
        self.last_checkpoint: Optional[Path] = None
        tc = self.train_config
        set_seed(tc.seed)

        data_config = run_config['data']
        if manifest is None:
            manifest = load_manifest(
                data_config['root'], data_config['layout'], data_config['modality'],
                data_config['manifest_file'], data_config['test_fraction'], tc.seed,
            )
        self.manifest = manifest
        self.batch_spec = BatchSpec(tc.batch_size, tc.seed, tuple(int(s) for s in data_config['resolution']))
        self.processor = DataProcessor(
            manifest, self.batch_spec, bool(data_config['augment']), tc.num_workers, int(data_config['cache_size']),
        )
        self.steps_per_epoch = self.processor.steps_per_epoch('train')
        self.total_steps = tc.total_steps(self.steps_per_epoch)

        self.extractor_spec = ExtractorSpec.from_config(run_config['extractor'])
        if run_config['generator'].get('variant') == 'residual' and self.extractor_spec.enabled:
            logger.warning("residual generator has no attention sites; extractor %s is not used",
                           self.extractor_spec.backbone)
            self.extractor_spec = replace(self.extractor_spec, backbone='none')
        self.extractor = build_extractor(self.extractor_spec).to(self.device)
        probed = probe_feature_dim(self.extractor, self.device)
        feature_dim = probed[0] if probed else self.extractor_spec.feature_dim

        self.generator_spec = GeneratorSpec.from_config(run_config['generator'], tc.attention, feature_dim)
        self.generator = build_generator(
            self.generator_spec, tc.seed, use_features=self.extractor_spec.enabled,
        ).to(self.device)
        self.discriminator_spec = DiscriminatorSpec.from_config(
            run_config['discriminator'], target_channels=self.generator_spec.out_channels,
        )
        self.discriminators = build_discriminators(self.discriminator_spec, tc.seed + 1).to(self.device)

        self.g_optimizer = torch.optim.Adam(self.generator.parameters(), lr=tc.lr_g, betas=tc.betas)
        self.d_optimizers = [
            torch.optim.Adam(disc.parameters(), lr=tc.lr_d, betas=tc.betas)
            for disc in self.discriminators
        ]
        self.g_scheduler = WarmupCosineScheduler(self.g_optimizer, tc.schedule(tc.lr_g, self.total_steps))
        self.d_schedulers = [
            WarmupCosineScheduler(opt, tc.schedule(tc.lr_d, self.total_steps)) for opt in self.d_optimizers
        ]
        self.visualizer = Visualizer()
        logger.info(
            "trainer ready: %d train pairs, %d steps/epoch, %d total steps, G %d params",
            len(manifest.split_entries('train')), self.steps_per_epoch, self.total_steps,
            count_parameters(self.generator),
        )

    def extract_features(self, rgb):
        with torch.no_grad():
            return self.extractor(rgb)

    def _pyramids(self, rgb, target, generated):
        real = multiscale_pyramid(target)
        fake = multiscale_pyramid(generated)
        if self.discriminator_spec.conditioning == 'rgb-concat':
            conditions = multiscale_pyramid(rgb)
        else:
            conditions = [None] * len(real)
        return real, fake, conditions

    def _clip(self, parameters):
        if self.train_config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(parameters, self.train_config.grad_clip)

    def update_discriminators(self, real, fake, conditions, step):
        # 每个尺度各走一步优化; 生成器输出视为常量
        set_requires_grad(self.discriminators, True)
        full_size = tuple(real[0].shape[-2:])
        losses = []
        for k, (disc, optimizer) in enumerate(zip(self.discriminators, self.d_optimizers)):
            optimizer.zero_grad(set_to_none=True)
            real_scores, _ = score(disc, real[k], conditions[k], full_size)
            fake_scores, _ = score(disc, fake[k].detach(), conditions[k], full_size)
            loss = gan_loss(real_scores, fake_scores, 'discriminator', self.train_config.gan_mode)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"D{k + 1}", step, self.last_checkpoint)
            loss.backward()
            self._clip(disc.parameters())
            optimizer.step()
            losses.append(float(loss))
        return losses

    def update_generator(self, target, generated, real, fake, conditions, step):
        set_requires_grad(self.discriminators, False)
        full_size = tuple(real[0].shape[-2:])
        self.g_optimizer.zero_grad(set_to_none=True)
        gan_terms, real_taps, fake_taps = [], [], []
        try:
            for k, disc in enumerate(self.discriminators):
                fake_scores, fake_features = score(disc, fake[k], conditions[k], full_size)
                with torch.no_grad():
                    _, real_features = score(disc, real[k], conditions[k], full_size)
                gan_terms.append(gan_loss(None, fake_scores, 'generator', self.train_config.gan_mode))
                fake_taps.append(fake_features)
                real_taps.append(real_features)
            fm_term = feature_matching_loss(real_taps, fake_taps)
            ssim_term = ssim_loss(target, generated, self.train_config.ssim)
            total, breakdown = total_generator_loss(gan_terms, fm_term, ssim_term, self.train_config.weights)
        except NumericalError as exc:
            raise TrainingDivergedError('generator', step, self.last_checkpoint) from exc
        finally:
            set_requires_grad(self.discriminators, True)

        total.backward()
        self._clip(self.generator.parameters())
        self.g_optimizer.step()
        return breakdown

    def train_step(self, batch):
        if len(batch) == 0:
            raise ValueError("empty batch")
        step = self.state.step + 1
        lr_g = self.g_scheduler.step(step)
        lr_d = [scheduler.step(step) for scheduler in self.d_schedulers][0]

        self.generator.train()
        self.discriminators.train()
        rgb = batch.rgb.to(self.device)
        target = batch.target.to(self.device)
        features = self.extract_features(rgb)
        generated = self.generator(rgb, features)
        real, fake, conditions = self._pyramids(rgb, target, generated)

        d_losses = self.update_discriminators(real, fake, conditions, step)
        breakdown = self.update_generator(target, generated, real, fake, conditions, step)

        record = {'step': step, 'epoch': batch.epoch, **breakdown, 'L_D': sum(d_losses)}
        for k, value in enumerate(d_losses, start=1):
            record[f"L_D{k}"] = value
        record.update({'lr_G': lr_g, 'lr_D': lr_d})
        self.state.step = step
        self.state.epoch = batch.epoch
        self.state.last_record = record
        return record

    def manifest_record(self):
        data_config = self.config['data']
        return {
            'generator': self.generator_spec.to_dict(),
            'discriminator': self.discriminator_spec.to_dict(),
            'extractor': asdict(self.extractor_spec),
            'attention': self.train_config.attention,
            'seed': self.train_config.seed,
            'epoch': self.state.epoch,
            'total_steps': self.total_steps,
            'resolution': list(self.batch_spec.resize),
            'modality': data_config['modality'],
            'metrics': dict(self.state.last_record),
        }

    def state_dict(self):
        return {
            'step': self.state.step,
            'epoch': self.state.epoch,
            'last_record': dict(self.state.last_record),
            'optimizers': {
                'generator': self.g_optimizer.state_dict(),
                **{f"discriminator_{k}": opt.state_dict() for k, opt in enumerate(self.d_optimizers, start=1)},
            },
            'schedulers': {
                'generator': self.g_scheduler.state_dict(),
                **{f"discriminator_{k}": s.state_dict() for k, s in enumerate(self.d_schedulers, start=1)},
            },
            'rng': {
                'torch': torch.get_rng_state(),
                'numpy': np.random.get_state(),
                'python': random.getstate(),
            },
        }

    def modules(self):
        modules = {'generator': self.generator}
        for k, disc in enumerate(self.discriminators, start=1):
            modules[f"discriminator_{k}"] = disc
        return modules

    def save(self):
        path = checkpoint_utils.save_checkpoint(
            self.output_dir, self.state.step, self.modules(), self.manifest_record(),
            self.state_dict(), keep=self.train_config.keep_checkpoints,
        )
        self.last_checkpoint = path
        self.save_samples(path.name)
        return path

    def restore(self, checkpoint_dir):
        checkpoint_dir = checkpoint_utils.resolve_checkpoint(checkpoint_dir)
        manifest = checkpoint_utils.read_manifest(checkpoint_dir)
        if manifest.get('attention') != self.train_config.attention:
            raise ConfigError(
                'train.attention',
                f"checkpoint {checkpoint_dir} was trained with {manifest.get('attention')!r}",
            )
        for name, module in self.modules().items():
            checkpoint_utils.load_module(module, checkpoint_dir, name)

        state = checkpoint_utils.load_train_state(checkpoint_dir)
        self.g_optimizer.load_state_dict(state['optimizers']['generator'])
        self.g_scheduler.load_state_dict(state['schedulers']['generator'])
        for k, (opt, scheduler) in enumerate(zip(self.d_optimizers, self.d_schedulers), start=1):
            opt.load_state_dict(state['optimizers'][f"discriminator_{k}"])
            scheduler.load_state_dict(state['schedulers'][f"discriminator_{k}"])
        torch.set_rng_state(state['rng']['torch'])
        np.random.set_state(state['rng']['numpy'])
        random.setstate(state['rng']['python'])

        self.state = TrainState(state['step'], state['epoch'], state['last_record'])
        self.last_checkpoint = checkpoint_dir
        logger.info("resumed from %s at step %d", checkpoint_dir, self.state.step)
        return checkpoint_dir

    def sample_batch(self):
        entries = self.processor.epoch_order('train', 0)[:SAMPLE_COUNT]
        return self.processor.make_batch(sorted(entries, key=lambda entry: entry.id))

    @torch.no_grad()
    def save_samples(self, name):
        batch = self.sample_batch()
        rgb = batch.rgb.to(self.device)
        self.generator.eval()
        generated = self.generator(rgb, self.extract_features(rgb))
        self.generator.train()
        to_hwc = lambda tensor: tensor.permute(0, 2, 3, 1).cpu().numpy()
        fig = self.visualizer.create_triptych(to_hwc(batch.rgb), to_hwc(generated), to_hwc(batch.target), batch.ids)
        path = self.output_dir / 'samples' / f"{name}.png"
        save_plot(fig, path)
        return path

    def fit(self, resume=True, stop_after=None, progress=True):
        """Run until ``total_steps``; ``stop_after`` ends early (used to simulate interruption)."""
        log = JsonlWriter(self.output_dir / LOG_FILE)
        if resume:
            latest = checkpoint_utils.latest_checkpoint(self.output_dir)
            if latest is not None:
                self.restore(latest)
        else:
            checkpoint_utils.archive_checkpoints(self.output_dir)
        log.truncate_after(self.state.step)

        start_epoch, start_batch = divmod(self.state.step, self.steps_per_epoch)
        epochs = math.ceil(self.total_steps / self.steps_per_epoch) - start_epoch
        interval = self.train_config.checkpoint_interval
        records: List[Dict[str, float]] = []

        bar = tqdm(total=self.total_steps, initial=self.state.step, disable=not progress, desc='train')
        for batch in self.processor.iter_batches('train', epochs, start_epoch, start_batch):
            if self.state.step >= self.total_steps:
                break
            record = self.train_step(batch)
            log.append(record)
            records.append(record)
            bar.update(1)
            bar.set_postfix(L_total=f"{record['L_total']:.4f}", L_SSIM=f"{record['L_SSIM']:.4f}")
            step = self.state.step
            if (interval > 0 and step % interval == 0) or step == self.total_steps:
                self.save()
            if stop_after is not None and step >= stop_after:
                break
        bar.close()
        self.processor.close()

        self.results['records'] = records
        self.results['log_file'] = log.file_path
        self.results['final_checkpoint'] = self.last_checkpoint
        self.results['final_step'] = self.state.step
        logger.info("training stopped at step %d / %d", self.state.step, self.total_steps)
        return self.last_checkpoint


def fit(run_config, manifest=None, **kwargs):
    trainer = Trainer(run_config, manifest)
    checkpoint = trainer.fit(**kwargs)
    return checkpoint, trainer.results['log_file']
