"""
Comparison tables and per-class AP charts.
"""
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from apps.core.utils import write_json  # noqa: E402
from apps.evaluation.models import EvalReport  # noqa: E402

logger = logging.getLogger(__name__)

COLUMNS = ('mAP (%)', 'Precision (%)', 'Recall (%)', 'F1 (%)')


def render_comparison_table(rows: Sequence[Tuple[str, EvalReport]], title: str = '') -> str:
    """Plain-text table: one row per model, metrics in percent"""
    width = max([len('Model')] + [len(label) for label, _ in rows])
    lines = []
    if title:
        lines.append(title)
    header = f'{"Model":<{width}} | ' + ' | '.join(f'{c:>13}' for c in COLUMNS)
    lines += [header, '-' * len(header)]
    for label, report in rows:
        values = (report.mAP, report.precision, report.recall, report.f1)
        lines.append(f'{label:<{width}} | ' + ' | '.join(f'{100 * v:>13.1f}' for v in values))
    return '\n'.join(lines) + '\n'


def comparison_rows_json(rows: Sequence[Tuple[str, EvalReport]]) -> List[Dict]:
    return [
        {
            'model': label,
            'mAP': report.mAP,
            'precision': report.precision,
            'recall': report.recall,
            'f1': report.f1,
            'per_class_ap': report.per_class_ap,
        }
        for label, report in rows
    ]


def _slug(label: str) -> str:
    return ''.join(c if c.isalnum() else '_' for c in label.lower()).strip('_')


def write_ap_charts(reports: Dict[str, EvalReport], directory: Union[str, Path]) -> List[Path]:
    """Per-model AP bar chart: JSON data file plus PNG"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for label, report in reports.items():
        slug = _slug(label)
        categories = sorted(report.per_class_ap)
        values = [report.per_class_ap[c] for c in categories]
        written.append(write_json(directory / f'{slug}.json', {
            'model': label,
            'categories': categories,
            'ap': values,
            'mAP': report.mAP,
        }))

        figure, axis = plt.subplots(figsize=(6, 3.5))
        axis.bar(categories, [100 * v for v in values], color='tab:blue')
        axis.set_ylim(0, 100)
        axis.set_ylabel('AP (%)')
        axis.set_title(f'{label} (mAP {100 * report.mAP:.1f})')
        axis.tick_params(axis='x', rotation=30)
        figure.tight_layout()
        png = directory / f'{slug}.png'
        figure.savefig(png, dpi=100)
        plt.close(figure)
        written.append(png)
    logger.info(f'Wrote AP charts for {len(reports)} model(s) to {directory}')
    return written
