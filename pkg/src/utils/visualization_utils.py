from pathlib import Path

import matplotlib.pyplot as plt
import plotly.express as px

PLOT_BUILDERS = {
    'line': px.line,
    'bar': px.bar,
    'scatter': px.scatter,
    'box': px.box,
}


def create_plot(df, plot_type='line', x_col=None, y_col=None, **kwargs):
    if plot_type == 'histogram':
        return px.histogram(df, x=x_col, **kwargs)
    if plot_type not in PLOT_BUILDERS:
        raise ValueError(f"Unsupported plot type: {plot_type}")
    return PLOT_BUILDERS[plot_type](df, x=x_col, y=y_col, **kwargs)


def save_plot(fig, file_path, format='png'):
    Path(file_path).parent.mkdir(parents=True, exist_ok=True)
    if hasattr(fig, 'write_html') and str(file_path).endswith('.html'):
        fig.write_html(file_path)
    elif hasattr(fig, 'write_image'):
        fig.write_image(file_path)
    else:
        fig.savefig(file_path, format=format, dpi=100, bbox_inches='tight')
        plt.close(fig)
