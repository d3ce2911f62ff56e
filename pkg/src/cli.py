"""``pix2next`` command line: synth, train, translate, evaluate, fetch-weights.

Run as ``python -m src.cli <command> ...``. Dotted overrides such as
``--train.attention=B-only`` are accepted by ``train``.
"""
import argparse
import logging
import sys
import time
from pathlib import Path

import torch
from torchvision import models

from config import CONSTANTS
from src.core.data_processor import make_synthetic_dataset
from src.core.errors import ConfigError, Pix2NextError
from src.core.extractor import weights_root
from src.tasks.evaluator import Evaluator
from src.tasks.trainer import Trainer
from src.tasks.translator import Translator
from src.utils.config_utils import resolve_run_config, save_config
from src.utils.logging_utils import setup_logging

logger = logging.getLogger('pix2next')

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

TORCHVISION_WEIGHTS = {
    'resnet': lambda: models.ResNet50_Weights.DEFAULT,
    'vit': lambda: models.ViT_B_16_Weights.DEFAULT,
    'swinv2': lambda: models.Swin_V2_T_Weights.DEFAULT,
    'inception': lambda: models.Inception_V3_Weights.DEFAULT,
}


def build_parser():
    parser = argparse.ArgumentParser(prog='pix2next', description='RGB → NIR/LWIR image translation')
    parser.add_argument('--seed', type=int, default=None, help='global seed (overrides train.seed)')
    parser.add_argument('--log-level', default='INFO')
    subparsers = parser.add_subparsers(dest='command', required=True)
    # 子命令也接受 --seed，未给出时沿用全局值
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=argparse.SUPPRESS)

    synth = subparsers.add_parser('synth', parents=[common], help='write a synthetic paired dataset')
    synth.add_argument('--n', type=int, default=8)
    synth.add_argument('--out', required=True)
    synth.add_argument('--resolution', type=int, default=64)
    synth.add_argument('--modality', default='NIR', choices=list(CONSTANTS['TARGET_SUBDIRS']))

    train = subparsers.add_parser('train', parents=[common], help='train generator and discriminators')
    train.add_argument('--config', default=None)
    train.add_argument('--no-resume', action='store_true', help='ignore existing checkpoints')
    train.add_argument('--stop-after', type=int, default=None, help='stop after this global step')

    translate = subparsers.add_parser('translate', parents=[common], help='translate RGB images with a checkpoint')
    translate.add_argument('--checkpoint', required=True)
    translate.add_argument('--input', required=True)
    translate.add_argument('--output', required=True)
    translate.add_argument('--weights-dir', default='')

    evaluate = subparsers.add_parser('evaluate', parents=[common], help='score generated images against ground truth')
    evaluate.add_argument('--gen', required=True)
    evaluate.add_argument('--gt', required=True)
    evaluate.add_argument('--backends', default='lightweight-stub', choices=CONSTANTS['METRIC_BACKENDS'])
    evaluate.add_argument('--out', default=None, help='report directory (default: <gen>_report)')
    evaluate.add_argument('--weights-dir', default='')
    evaluate.add_argument('--plots', action='store_true')

    fetch = subparsers.add_parser('fetch-weights', parents=[common], help='download backbone weights into the registry')
    fetch.add_argument('--backbones', nargs='+', default=['resnet', 'vit', 'swinv2', 'inception'])
    fetch.add_argument('--weights-dir', default='')
    return parser


def split_overrides(extra):
    """``--a.b=v`` / ``--a.b v`` / ``a.b=v`` tokens → ``['a.b=v', ...]``."""
    overrides = []
    tokens = list(extra)
    while tokens:
        token = tokens.pop(0)
        key = token[2:] if token.startswith('--') else token
        if '.' not in key.split('=', 1)[0]:
            raise ConfigError(token, "unrecognized argument")
        if '=' not in key:
            if not tokens:
                raise ConfigError(key, "override is missing a value")
            key = f"{key}={tokens.pop(0)}"
        overrides.append(key)
    return overrides


def cmd_synth(args):
    if args.n < 1:
        print(f"error: --n must be >= 1, got {args.n}", file=sys.stderr)
        return EXIT_USAGE
    seed = 0 if args.seed is None else args.seed
    manifest = make_synthetic_dataset(
        args.out, args.n, seed=seed, resolution=(args.resolution, args.resolution), modality=args.modality,
    )
    print(f"wrote {len(manifest)} pairs to {args.out}")
    return EXIT_OK


def cmd_train(args, overrides):
    config = resolve_run_config(args.config, overrides, args.seed)
    output_dir = Path(config['train']['output_dir'])
    save_config(config, str(output_dir / 'config.toml'))
    setup_logging(args.log_level, output_dir / 'train.log')

    started = time.perf_counter()
    trainer = Trainer(config)
    checkpoint = trainer.fit(resume=not args.no_resume, stop_after=args.stop_after)
    elapsed = time.perf_counter() - started
    print(f"trained to step {trainer.results['final_step']} in {elapsed:.1f}s; checkpoint: {checkpoint}")
    print(f"log: {trainer.results['log_file']}")
    return EXIT_OK


def cmd_translate(args):
    translator = Translator(args.checkpoint, weights_dir=args.weights_dir)
    results = translator.translate(args.input, args.output)
    total = len(results['outputs']) + len(results['failures'])
    print(f"translated {len(results['outputs'])}/{total} images in {results['seconds']:.2f}s -> {args.output}")
    if results['failures']:
        for name, message in sorted(results['failures'].items()):
            print(f"  failed: {name}: {message}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_evaluate(args):
    gen_dir = Path(args.gen)
    output_dir = Path(args.out) if args.out else gen_dir.parent / f"{gen_dir.name}_report"
    evaluator = Evaluator(args.backends, args.weights_dir)
    evaluator.evaluate(gen_dir, args.gt, output_dir, plots=args.plots)
    print(evaluator.results['table'])
    print(f"reports: {evaluator.results['csv']}, {evaluator.results['json']}")
    return EXIT_OK


def cmd_fetch_weights(args):
    root = weights_root(args.weights_dir)
    root.mkdir(parents=True, exist_ok=True)
    for backbone in args.backbones:
        if backbone == 'internimage':
            print(f"internimage: export the backbone with torch.jit.script/trace and place it at "
                  f"{root / CONSTANTS['BACKBONE_WEIGHTS']['internimage']}")
            continue
        if backbone not in TORCHVISION_WEIGHTS:
            raise ConfigError('--backbones', f"unknown backbone {backbone!r}")
        target = root / CONSTANTS['BACKBONE_WEIGHTS'][backbone]
        state = TORCHVISION_WEIGHTS[backbone]().get_state_dict(progress=True)
        torch.save(state, target)
        print(f"{backbone}: {target}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    setup_logging(args.log_level)
    try:
        if args.command == 'train':
            return cmd_train(args, split_overrides(extra))
        if extra:
            raise ConfigError('argv', f"unrecognized arguments: {' '.join(extra)}")
        handlers = {
            'synth': cmd_synth,
            'translate': cmd_translate,
            'evaluate': cmd_evaluate,
            'fetch-weights': cmd_fetch_weights,
        }
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (Pix2NextError, OSError, RuntimeError) as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
