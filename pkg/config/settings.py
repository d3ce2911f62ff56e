SETTINGS = {
    'data': {
        'root': '',
        'layout': 'paired-subdirs',
        'modality': 'NIR',
        'resolution': [256, 256],
        'interpolation': 'bilinear',
        'standardize': False,
        'augment': False,
        'cache_size': 256,
        'test_fraction': 0.0,
        'manifest_file': 'pairs.tsv',
    },
    'extractor': {
        'backbone': 'identity-stub',
        'weights': '',
        'weights_dir': '',
        'feature_dim': 64,
        'frozen': True,
        'finetune': False,
        'seed': 0,
    },
    'generator': {
        'variant': 'attention',
        'base_channels': 128,
        'in_channels': 3,
        'out_channels': 1,
        'attention_hidden': 128,
        'attention_heads': 4,
        'norm_groups': 32,
        'activation': 'silu',
        'skip': 'additive',
        'downsample': 'stride-conv',
        'upsample': 'nearest-conv',
        'init_std': 0.02,
    },
    'discriminator': {
        'scales': 3,
        'n_layers': 4,
        'base_width': 64,
        'max_width': 512,
        'negative_slope': 0.2,
        'conditioning': 'unconditional',
        'pyramid_pool': 'avg2x2',
        'first_layer_norm': False,
    },
    'loss': {
        'lambda_fm': 10.0,
        'lambda_ssim': 10.0,
        'gan_mode': 'bce',
        'ssim_window': 11,
        'ssim_sigma': 1.5,
        'ssim_reference': 'target',
    },
    'train': {
        'epochs': 1000,
        'iterations': 0,
        'batch_size': 4,
        'lr_g': 1e-4,
        'lr_d': 1e-4,
        'betas': [0.5, 0.999],
        'warmup_fraction': 0.05,
        'min_lr_fraction': 0.01,
        'grad_clip': 0.0,
        'attention': 'EBD',
        'seed': 0,
        'checkpoint_interval': 500,
        'keep_checkpoints': 3,
        'output_dir': 'runs/pix2next',
        'device': 'cpu',
        'num_workers': 0,
    },
}
