"""
Tests for detection metrics, the evaluation service and comparison reports
"""
import numpy as np
import pytest

from apps.core.exceptions import ConfigurationError, DatasetError
from apps.datasets.models import CategoryPlan, DetectionDataset, SplitMode
from apps.datasets.services import split_by_plan
from apps.datasets.toy import generate_toy_dataset
from apps.detectors.models import Annotation, Detections
from apps.evaluation.metrics import FP, IGNORED, TP, average_precision, evaluate_detections, f1, match_detections
from apps.evaluation.models import EvalConfig, EvalReport, Interpolation
from apps.evaluation.reports import comparison_rows_json, render_comparison_table, write_ap_charts
from apps.evaluation.services import EvaluationService, evaluate, read_report, relabel_detections, write_report

pytestmark = pytest.mark.unit


def brute_force_ap(flags, num_gt):
    """Each TP adds 1/num_gt recall at the best precision reachable from its rank onwards"""
    hits = 0
    precisions = []
    for rank, flag in enumerate(flags, start=1):
        hits += flag == TP
        precisions.append(hits / rank)
    return sum(max(precisions[i:]) for i, flag in enumerate(flags) if flag == TP) / num_gt


def _detections(boxes, scores, labels):
    return Detections(np.array(boxes, dtype=np.float32).reshape(-1, 4), np.array(scores, dtype=np.float32),
                      np.array(labels, dtype=np.int64))


def _report(mean_ap, per_class=None):
    return EvalReport(per_class_ap=per_class or {'a': mean_ap}, mAP=mean_ap, precision=0.5, recall=0.25,
                      f1=f1(0.5, 0.25), config_digest='c', dataset_digest='d')


class TestF1:
    """Test the F1 score"""

    def test_known_values(self):
        """F1 of published precision and recall pairs"""
        assert f1(0.849, 0.715) == pytest.approx(0.776, abs=5e-4)
        assert f1(0.679, 0.503) == pytest.approx(0.578, abs=5e-4)

    def test_zero(self):
        assert f1(0.0, 0.0) == 0.0


class TestAveragePrecision:
    """Test AP from ranked flags"""

    def test_all_point(self):
        """Area under the monotone precision envelope at every recall step"""
        assert average_precision([TP, FP, TP], 2) == pytest.approx(0.8333, abs=1e-4)

    def test_eleven_point(self):
        """Mean of the interpolated precision at recall 0, 0.1 up to 1"""
        assert average_precision([TP, FP, TP], 2, Interpolation.ELEVEN_POINT) == \
            pytest.approx((6 + 5 * 2 / 3) / 11)

    def test_perfect(self):
        assert average_precision([TP, TP], 2) == pytest.approx(1.0)

    def test_ignored_flags_are_skipped(self):
        assert average_precision([TP, IGNORED, FP, TP], 2) == pytest.approx(average_precision([TP, FP, TP], 2))

    def test_nothing_to_score(self):
        """No ground truth and no detections gives no AP; false positives alone give 0"""
        assert average_precision([], 0) is None
        assert average_precision([FP], 0) == 0.0
        assert average_precision([], 3) == 0.0

    @pytest.mark.parametrize('seed', range(5))
    def test_matches_brute_force(self, seed):
        """Envelope AP equals a direct sum over every recall step"""
        rng = np.random.default_rng(seed)
        flags = rng.choice([TP, FP], size=25).tolist()
        num_gt = sum(f == TP for f in flags) + int(rng.integers(0, 4))
        assert average_precision(flags, num_gt) == pytest.approx(brute_force_ap(flags, num_gt))


class TestMatching:
    """Test greedy detection matching"""

    def test_each_ground_truth_matched_once(self):
        """A duplicate detection of a matched box is a false positive"""
        flags = match_detections(
            np.array([[0, 0, 10, 10], [0, 0, 10, 10]]), np.array([0, 0]),
            np.array([[0, 0, 10, 10]]), np.array([0]), 0.5,
        )
        assert flags.tolist() == [TP, FP]

    def test_class_must_agree(self):
        flags = match_detections(np.array([[0, 0, 10, 10]]), np.array([1]),
                                 np.array([[0, 0, 10, 10]]), np.array([0]), 0.5)
        assert flags.tolist() == [FP]

    def test_iou_threshold(self):
        """An IoU of exactly 0.5 matches; anything below does not"""
        flags = match_detections(np.array([[0, 0, 10, 5]]), np.array([0]),
                                 np.array([[0, 0, 10, 10]]), np.array([0]), 0.5)
        assert flags.tolist() == [TP]
        flags = match_detections(np.array([[0, 0, 10, 4]]), np.array([0]),
                                 np.array([[0, 0, 10, 10]]), np.array([0]), 0.5)
        assert flags.tolist() == [FP]

    def test_difficult_ground_truth_is_ignored(self):
        flags = match_detections(np.array([[0, 0, 10, 10]]), np.array([0]),
                                 np.array([[0, 0, 10, 10]]), np.array([0]), 0.5, np.array([True]))
        assert flags.tolist() == [IGNORED]


class TestEvaluateDetections:
    """Test report assembly"""

    def test_report(self):
        """Classes without ground truth are excluded from the mean"""
        annotations = [Annotation('1', [[0, 0, 10, 10]], [0]), Annotation('2', [[5, 5, 20, 20]], [1])]
        detections = [_detections([[0, 0, 10, 10]], [0.9], [0]), _detections([], [], [])]
        report = evaluate_detections(detections, annotations, ['a', 'b', 'c'], EvalConfig(), 'digest')
        assert report.per_class_ap == {'a': pytest.approx(1.0), 'b': 0.0}
        assert report.excluded_categories == ['c']
        assert report.mAP == pytest.approx(0.5)
        assert report.precision == pytest.approx(1.0)
        assert report.recall == pytest.approx(0.5)
        assert report.f1 == pytest.approx(2 / 3)
        assert report.num_ground_truth == {'a': 1, 'b': 1, 'c': 0}
        assert report.dataset_digest == 'digest'

    def test_low_scores_count_for_ap_only(self):
        """Detections below the score threshold enter AP but not precision and recall"""
        annotations = [Annotation('1', [[0, 0, 10, 10]], [0])]
        detections = [_detections([[0, 0, 10, 10]], [0.1], [0])]
        report = evaluate_detections(detections, annotations, ['a'], EvalConfig(score_threshold=0.3))
        assert report.per_class_ap['a'] == pytest.approx(1.0)
        assert report.recall == 0.0

    def test_relabel_drops_unknown_classes(self):
        """Detections of classes the evaluator does not know are dropped"""
        detections = _detections([[0, 0, 1, 1], [0, 0, 2, 2]], [0.9, 0.8], [0, 1])
        relabelled = relabel_detections(detections, ('x', 'y'), ['y'])
        assert relabelled.labels.tolist() == [0]
        assert relabelled.scores.tolist() == [pytest.approx(0.8)]


class TestEvalConfig:
    """Test evaluation config validation"""

    def test_defaults(self):
        config = EvaluationService.config({})
        assert config == EvalConfig()
        assert config.iou_threshold == 0.5 and config.score_threshold == 0.3

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            EvalConfig(iou_threshold=0.0)
        with pytest.raises(ConfigurationError):
            EvaluationService.config({'ap_interpolation': 'cubic'})


class TestEvaluateModel:
    """Test evaluation of a model on a dataset"""

    def test_report_covers_dataset_categories(self, detector, toy_spec):
        plan = CategoryPlan(('disc', 'square'), ('disc', 'square'))
        dataset = split_by_plan(generate_toy_dataset(toy_spec, 'eval'), plan, SplitMode.MANUFACTURER,
                                drop_overlap_iou=None)
        report = evaluate(detector, dataset, EvalConfig(batch_size=2))
        assert set(report.per_class_ap) | set(report.excluded_categories) == {'disc', 'square'}
        assert 0.0 <= report.mAP <= 1.0
        assert report.dataset_digest == dataset.digest

    def test_empty_dataset(self, detector):
        with pytest.raises(DatasetError):
            evaluate(detector, DetectionDataset([], ('disc', 'square')))

    def test_report_file_round_trip(self, tmp_path):
        report = _report(0.4)
        path = write_report(report, tmp_path / 'report.json')
        assert read_report(path).to_dict() == report.to_dict()


class TestReports:
    """Test comparison tables and charts"""

    def test_table(self):
        text = render_comparison_table([('Original tutor', _report(0.5)), ('Updated tutor', _report(0.25))],
                                       'Customer categories')
        lines = text.splitlines()
        assert lines[0] == 'Customer categories'
        assert 'mAP (%)' in lines[1]
        assert 'Original tutor' in lines[3] and '50.0' in lines[3]
        assert '25.0' in lines[4]

    def test_rows_json(self):
        rows = comparison_rows_json([('Edge', _report(0.5))])
        assert rows[0]['model'] == 'Edge'
        assert rows[0]['mAP'] == 0.5

    def test_charts(self, tmp_path):
        written = write_ap_charts({'Updated edge': _report(0.5, {'a': 0.5, 'b': 0.5})}, tmp_path)
        names = sorted(path.name for path in written)
        assert names == ['updated_edge.json', 'updated_edge.png']
        assert all(path.exists() for path in written)


def _iou(a, b):
    width = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    height = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = width * height
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def brute_force_report(detections, annotations, num_classes, iou_threshold=0.5):
    """Per-class AP by ranking each class over all images and matching greedily"""
    per_class = {}
    for label in range(num_classes):
        num_gt = sum(int((a.labels == label).sum()) for a in annotations)
        ranked = sorted(
            (-float(score), image, index)
            for image, dets in enumerate(detections)
            for index, (score, det_label) in enumerate(zip(dets.scores, dets.labels)) if det_label == label
        )
        matched = [set() for _ in annotations]
        flags = []
        for _, image, index in ranked:
            box = [float(v) for v in detections[image].boxes[index]]
            best, best_iou = None, iou_threshold
            for g, (gt_box, gt_label) in enumerate(zip(annotations[image].boxes, annotations[image].labels)):
                if gt_label != label or g in matched[image]:
                    continue
                overlap = _iou(box, [float(v) for v in gt_box])
                if overlap >= best_iou:
                    best, best_iou = g, overlap
            if best is None:
                flags.append(FP)
            else:
                matched[image].add(best)
                flags.append(TP)
        if num_gt == 0:
            if flags:
                per_class[label] = 0.0
            continue
        per_class[label] = brute_force_ap(flags, num_gt)
    return per_class


def _random_fixture(seed):
    rng = np.random.default_rng(seed)
    annotations, detections = [], []
    for image in range(int(rng.integers(1, 6))):
        gt = []
        for _ in range(int(rng.integers(0, 5))):
            x1, y1 = rng.uniform(0, 80, size=2)
            gt.append([x1, y1, x1 + rng.uniform(8, 40), y1 + rng.uniform(8, 40)])
        gt_labels = rng.integers(0, 3, size=len(gt))
        boxes, labels = [], []
        for box, label in zip(gt, gt_labels):
            for _ in range(int(rng.integers(0, 3))):
                boxes.append(np.asarray(box) + rng.normal(0, 3, size=4))
                labels.append(label if rng.random() < 0.8 else int(rng.integers(0, 3)))
        for _ in range(int(rng.integers(0, 3))):
            x1, y1 = rng.uniform(0, 80, size=2)
            boxes.append([x1, y1, x1 + rng.uniform(8, 40), y1 + rng.uniform(8, 40)])
            labels.append(int(rng.integers(0, 3)))
        boxes = [[b[0], b[1], max(b[2], b[0] + 1), max(b[3], b[1] + 1)] for b in boxes]
        annotations.append(Annotation(str(image), gt, gt_labels))
        detections.append(_detections(boxes, rng.uniform(0, 1, size=len(boxes)), labels))
    return detections, annotations


class TestMetricOracle:
    """evaluate_detections against a direct re-implementation"""

    @pytest.mark.parametrize('seed', range(50))
    def test_matches_brute_force(self, seed):
        """Envelope AP equals a direct sum over every recall step"""
        detections, annotations = _random_fixture(seed)
        report = evaluate_detections(detections, annotations, ['a', 'b', 'c'], EvalConfig())
        expected = brute_force_report(detections, annotations, 3)
        assert set(report.per_class_ap) == {'abc'[label] for label in expected}
        for label, ap in expected.items():
            assert report.per_class_ap['abc'[label]] == pytest.approx(ap, abs=1e-9)
        if expected:
            assert report.mAP == pytest.approx(sum(expected.values()) / len(expected), abs=1e-9)
