CONSTANTS = {
    'IMAGE_EXTENSIONS': ['.png', '.jpg', '.jpeg'],
    'RGB_SUBDIR': 'rgb',
    'TARGET_SUBDIRS': {
        'NIR': 'nir',
        'LWIR': 'lwir',
    },
    'SPLIT_FILE': 'split.txt',
    'EXCLUDE_FILE': 'exclude.txt',
    'SPLITS': ['train', 'test'],
    'LAYOUTS': ['paired-subdirs', 'file-list'],
    'BACKBONES': ['identity-stub', 'resnet', 'vit', 'swinv2', 'internimage', 'none'],
    # 权重文件名, 相对于权重目录
    'BACKBONE_WEIGHTS': {
        'resnet': 'resnet50.pth',
        'vit': 'vit_b_16.pth',
        'swinv2': 'swin_v2_t.pth',
        'internimage': 'internimage.pt',
        'inception': 'inception_v3.pth',
    },
    'WEIGHTS_ENV': 'PIX2NEXT_WEIGHTS_DIR',
    'ATTENTION_PLACEMENTS': ['B-only', 'EBD'],
    # residual: 同一编码器-解码器, 不建交叉注意力, 不使用提取器特征
    'GENERATOR_VARIANTS': ['attention', 'residual'],
    'CONDITIONING': ['unconditional', 'rgb-concat'],
    'GAN_MODES': ['bce', 'lsgan'],
    'METRIC_DIRECTIONS': {
        'psnr': 'higher-better',
        'ssim': 'higher-better',
        'fid': 'lower-better',
        'rmse': 'lower-better',
        'lpips': 'lower-better',
        'dists': 'lower-better',
        'std': 'lower-better',
    },
    'PAIRWISE_METRICS': ['psnr', 'ssim', 'rmse', 'std', 'lpips', 'dists'],
    'METRIC_BACKENDS': ['lightweight-stub', 'inception-like', 'none'],
}
