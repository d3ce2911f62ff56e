import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
import seaborn as sns

from config import CONSTANTS

LOSS_COLUMNS = ['L_GAN', 'L_FM', 'L_SSIM', 'L_total', 'L_D']


class Visualizer:
    def __init__(self):
        plt.rcParams['font.sans-serif'] = ['SimHei', 'Microsoft YaHei', 'DejaVu Sans']
        plt.rcParams['axes.unicode_minus'] = False

    def create_loss_curves(self, log_df, columns=None):
        columns = [col for col in (columns or LOSS_COLUMNS) if col in log_df.columns]
        long_df = log_df.melt(id_vars='step', value_vars=columns, var_name='损失项', value_name='损失值')
        fig = px.line(long_df, x='step', y='损失值', color='损失项', title='训练损失曲线')
        return fig

    def create_lr_curve(self, log_df):
        fig = go.Figure()
        for col, label in (('lr_G', '生成器'), ('lr_D', '判别器')):
            if col in log_df.columns:
                fig.add_trace(go.Scatter(x=log_df['step'], y=log_df[col], mode='lines', name=label))
        fig.update_layout(title='学习率曲线', xaxis_title='step', yaxis_title='学习率')
        return fig

    def create_triptych(self, rgb, generated, target, ids=None, figsize_per_row=(9, 3)):
        """One row per sample: RGB | generated | target. Arrays are B×H×W×C in [0, 1]."""
        rows = len(rgb)
        fig, axes = plt.subplots(rows, 3, figsize=(figsize_per_row[0], figsize_per_row[1] * rows),
                                 squeeze=False)
        titles = ('RGB', '生成', '目标')
        for row in range(rows):
            panels = (rgb[row], generated[row][..., 0], target[row][..., 0])
            for col, panel in enumerate(panels):
                ax = axes[row, col]
                ax.imshow(np.clip(panel, 0.0, 1.0), cmap=None if col == 0 else 'gray', vmin=0.0, vmax=1.0)
                ax.set_axis_off()
                if row == 0:
                    ax.set_title(titles[col])
            if ids is not None:
                axes[row, 0].text(2, 8, ids[row], color='white', fontsize=8)
        fig.tight_layout()
        return fig

    def create_metric_boxplot(self, report_df, metrics=None, figsize=(10, 4)):
        metrics = [m for m in (metrics or CONSTANTS['PAIRWISE_METRICS'])
                   if m in report_df.columns and report_df[m].notna().any()]
        finite = report_df[metrics].replace([np.inf, -np.inf], np.nan)
        fig, axes = plt.subplots(1, len(metrics), figsize=figsize, squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            sns.boxplot(y=finite[metric].dropna(), ax=ax)
            arrow = '↑' if CONSTANTS['METRIC_DIRECTIONS'][metric] == 'higher-better' else '↓'
            ax.set_title(f"{metric.upper()} {arrow}")
            ax.set_ylabel('')
        fig.tight_layout()
        return fig

    def create_aggregate_bar(self, aggregates):
        rows = [{'指标': name, '均值': values['mean'], '标准差': values['std']}
                for name, values in aggregates.items() if values['mean'] is not None]
        df = pd.DataFrame(rows)
        return px.bar(df, x='指标', y='均值', error_y='标准差', title='指标均值 ± 标准差')
