"""
Full runs of the built-in toy experiments
"""
import shutil
from dataclasses import replace

import pytest

from apps.core.exceptions import VerificationGateError
from apps.evaluation.services import read_report
from apps.packets.models import Verdict
from apps.packets.services import read_verification
from apps.pipeline.models import ARTIFACTS, StageName, StageStatus
from apps.pipeline.services import PipelineService, read_manifest, run_plan
from apps.pipeline.stages import eval_report_path

pytestmark = [pytest.mark.slow, pytest.mark.e2e]


def _customer_report(run_dir, key):
    return read_report(eval_report_path(run_dir, key))


@pytest.fixture(scope='module')
def learning_run(tmp_path_factory):
    """Completed toy-exp1 run: one private category is learned"""
    plan = PipelineService.preset('toy-exp1')
    run_dir = tmp_path_factory.mktemp('toy-exp1')
    run_plan(plan, run_dir)
    return plan, run_dir


@pytest.fixture(scope='module')
def forgetting_run(tmp_path_factory):
    """Completed toy-exp2 run: one category is learned and one removed"""
    plan = PipelineService.preset('toy-exp2')
    run_dir = tmp_path_factory.mktemp('toy-exp2')
    run_plan(plan, run_dir)
    return plan, run_dir


class TestLearningExperiment:
    """Test that the private category reaches the tutor and the edge model"""

    def test_only_tutor_2_knows_the_private_category(self, learning_run):
        """Tutor 1 never sees the private category; tutor 2 learns it from labels"""
        plan, run_dir = learning_run
        (private,) = plan.categories.private_categories
        assert _customer_report(run_dir, 'tutor_1').ap(private) < 0.05
        assert _customer_report(run_dir, 'tutor_2').ap(private) > 0.2

    def test_updated_tutor_detects_the_private_category(self, learning_run):
        plan, run_dir = learning_run
        (private,) = plan.categories.private_categories
        assert _customer_report(run_dir, 'updated_tutor').ap(private) > 0.2

    def test_updated_edge_learns_and_retains(self, learning_run):
        """Distill C adds the private category without losing more than 10 points elsewhere"""
        plan, run_dir = learning_run
        (private,) = plan.categories.private_categories
        retained = plan.categories.retained_categories
        updated_edge = _customer_report(run_dir, 'updated_edge')
        original_edge = _customer_report(run_dir, 'edge')
        assert updated_edge.ap(private) > 0.3
        assert updated_edge.mean_ap(retained) >= original_edge.mean_ap(retained) - 0.10

    def test_gate_passes_the_real_delta(self, learning_run):
        _, run_dir = learning_run
        assert read_verification(run_dir / ARTIFACTS['verification']).verdict == Verdict.PASS


class TestForgettingExperiment:
    """Test that the removed category fades while the new one is learned"""

    def test_removed_category_fades(self, forgetting_run):
        """The gate report compares original and updated tutor on every presumed category"""
        plan, run_dir = forgetting_run
        (removed,) = plan.categories.removed_categories
        report = read_verification(run_dir / ARTIFACTS['verification'])
        assert report.ap_after[removed] <= 0.5 * report.ap_before[removed]
        assert report.passed

    def test_new_category_is_learned(self, forgetting_run):
        plan, run_dir = forgetting_run
        (private,) = plan.categories.private_categories
        assert _customer_report(run_dir, 'updated_tutor').ap(private) > 0.2


class TestNoiseInjection:
    """Test the gate against a random delta of the real delta's norm"""

    def test_noise_delta_fails_the_gate(self, learning_run, tmp_path):
        """Resuming a finished run with noise reruns the packet stages and stops before Distill C"""
        plan, finished = learning_run
        run_dir = tmp_path / 'noisy'
        shutil.copytree(finished, run_dir)

        with pytest.raises(VerificationGateError) as exc_info:
            run_plan(replace(plan, inject_noise_delta=True), run_dir)
        assert exc_info.value.returncode == 4

        manifest = read_manifest(run_dir)
        assert manifest.stages[StageName.EXTRACT_DELTA].evals['noise_injected'] is True
        assert manifest.stages[StageName.VERIFY].status == StageStatus.FAILED
        assert manifest.stages[StageName.DISTILL_C].status == StageStatus.ABORTED
        assert manifest.stages[StageName.EVALUATE_ALL].status == StageStatus.ABORTED
        assert not (run_dir / ARTIFACTS['updated_edge']).exists()

        report = read_verification(run_dir / ARTIFACTS['verification'])
        assert report.verdict == Verdict.FAIL
        assert set(report.regressed) - set(report.waived_regressions)
