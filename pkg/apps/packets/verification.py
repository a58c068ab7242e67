"""
Manufacturer-side verification gate for an updated tutor.
"""
import logging
from typing import Optional

from apps.core.exceptions import DatasetError, IntegrityError
from apps.core.utils import to_jsonable
from apps.datasets.models import DetectionDataset
from apps.detectors.models import Detector
from apps.detectors.services import DetectorService
from apps.evaluation.models import EvalConfig
from apps.evaluation.services import evaluate
from apps.packets.models import Verdict, VerificationReport, VerificationThresholds

logger = logging.getLogger(__name__)


def verify_update(original_tutor: Detector, updated_tutor: Detector, dataset: DetectionDataset,
                  thresholds: Optional[VerificationThresholds] = None,
                  eval_config: Optional[EvalConfig] = None) -> VerificationReport:
    """Flag every category of `dataset` known to the original tutor whose AP drops
    by more than its threshold; the gate fails on any flag that is not waived.
    """
    thresholds = thresholds or VerificationThresholds()
    if len(dataset) == 0:
        raise DatasetError('Verification dataset is empty')
    digests = [DetectorService.parameter_digest(m) for m in (original_tutor, updated_tutor)]

    before = evaluate(original_tutor, dataset, eval_config)
    after = evaluate(updated_tutor, dataset, eval_config)

    categories = [c for c in dataset.category_names
                  if c in original_tutor.class_names and c in before.per_class_ap]
    ap_before = {c: before.ap(c) for c in categories}
    ap_after = {c: after.ap(c) for c in categories}
    drops = {c: ap_before[c] - ap_after[c] for c in categories}
    regressed = [c for c in categories if drops[c] > thresholds.max_drop(c)]
    waived = [c for c in regressed if c in thresholds.waived_categories]
    verdict = Verdict.FAIL if set(regressed) - set(waived) else Verdict.PASS

    if [DetectorService.parameter_digest(m) for m in (original_tutor, updated_tutor)] != digests:
        raise IntegrityError('Verification changed model parameters')

    report = VerificationReport(
        ap_before=ap_before,
        ap_after=ap_after,
        drops=drops,
        regressed=regressed,
        waived_regressions=waived,
        verdict=str(verdict),
        thresholds=to_jsonable(thresholds),
        map_before=before.mean_ap(categories),
        map_after=after.mean_ap(categories),
        dataset_digest=dataset.digest,
    )
    if report.passed:
        logger.info(f'Verification passed ({len(categories)} categories; waived regressions: {waived})')
    else:
        failing = [c for c in regressed if c not in waived]
        logger.error(
            'Verification failed: ' + ', '.join(f'{c} dropped {drops[c]:.3f}' for c in failing)
        )
    return report
