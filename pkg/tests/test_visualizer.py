import math

import numpy as np
import pandas as pd
import pytest

from src.core.visualizer import Visualizer
from src.utils.visualization_utils import create_plot, save_plot


@pytest.fixture
def log_df():
    steps = np.arange(1, 11)
    return pd.DataFrame({
        'step': steps, 'L_GAN': 1.0 / steps, 'L_FM': 0.5 / steps, 'L_SSIM': 0.2 / steps,
        'L_total': 2.0 / steps, 'L_D': np.full(10, 1.3), 'lr_G': steps * 1e-5, 'lr_D': steps * 1e-5,
    })


def test_loss_and_lr_curves(log_df):
    visualizer = Visualizer()
    loss_fig = visualizer.create_loss_curves(log_df)
    assert {trace.name for trace in loss_fig.data} == {'L_GAN', 'L_FM', 'L_SSIM', 'L_total', 'L_D'}
    assert len(visualizer.create_lr_curve(log_df).data) == 2


def test_triptych_saved_as_png(tmp_path):
    rgb = np.random.default_rng(0).random((2, 16, 16, 3))
    gray = rgb[..., :1]
    fig = Visualizer().create_triptych(rgb, gray, gray, ['a', 'b'])
    assert len(fig.axes) == 6
    save_plot(fig, tmp_path / 'samples' / 'triptych.png')
    assert (tmp_path / 'samples' / 'triptych.png').stat().st_size > 0


def test_metric_boxplot_skips_empty_columns():
    report = pd.DataFrame({
        'psnr': [math.inf, 30.0], 'ssim': [1.0, 0.9], 'rmse': [0.0, 5.0], 'std': [0.0, 4.0],
        'lpips': [None, None], 'dists': [None, None],
    })
    fig = Visualizer().create_metric_boxplot(report)
    assert [ax.get_title() for ax in fig.axes] == ['PSNR ↑', 'SSIM ↑', 'RMSE ↓', 'STD ↓']


def test_aggregate_bar_drops_skipped_metrics():
    fig = Visualizer().create_aggregate_bar({'ssim': {'mean': 0.9, 'std': 0.01}, 'fid': {'mean': None, 'std': None}})
    assert list(fig.data[0].x) == ['ssim']


def test_create_plot_rejects_unknown_type(log_df):
    assert create_plot(log_df, 'box', y_col='L_total') is not None
    with pytest.raises(ValueError):
        create_plot(log_df, 'pie', 'step', 'L_total')
