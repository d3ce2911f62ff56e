import logging
from pathlib import Path

from src.core.metrics import evaluate_dirs
from src.core.visualizer import Visualizer
from src.utils.visualization_utils import save_plot

logger = logging.getLogger(__name__)


class Evaluator:
    def __init__(self, backend='lightweight-stub', weights_dir=''):
        self.backend = backend
        self.weights_dir = weights_dir
        self.results = {}

    def evaluate(self, gen_dir, gt_dir, output_dir, plots=False, progress=True):
        report = evaluate_dirs(gen_dir, gt_dir, self.backend, self.weights_dir, progress=progress)
        csv_path, json_path = report.write(output_dir)
        self.results = {
            'report': report,
            'csv': csv_path,
            'json': json_path,
            'table': report.format_table(),
        }
        if plots:
            fig = Visualizer().create_metric_boxplot(report.rows)
            self.results['boxplot'] = Path(output_dir) / 'metrics_box.png'
            save_plot(fig, self.results['boxplot'])
        logger.info("evaluated %d pairs; reports in %s", len(report.rows), output_dir)
        return report
