"""
Tests for training configs and the distillation procedures
"""
import pytest

from apps.core.exceptions import ConfigurationError, DiRediWarning
from apps.datasets.models import ToySpec
from apps.datasets.toy import generate_toy_dataset
from apps.detectors.models import Tier, tier_config
from apps.detectors.services import DetectorService
from apps.distillation.models import (
    CUSTOMER_RD, EMULATION_RD, LrSchedule, RDConfig, TrainConfig, train_preset,
)
from apps.distillation.services import (
    DistillationService, distill, load_record, prepare_customer_tutors, redistill_finetune, reverse_distill,
    save_record, train_direct,
)
from apps.fgd.models import FGDConfig

pytestmark = pytest.mark.unit

digest = DetectorService.parameter_digest


@pytest.fixture
def known_dataset():
    """Training split holding only the detector's own classes"""
    spec = ToySpec(train_images=8, eval_images=0, canvas_size=64, class_names=('disc', 'square'),
                   objects_per_image=(1, 2), object_size=(16, 32))
    return generate_toy_dataset(spec, 'train')


@pytest.fixture
def private_dataset():
    """Training split holding only a class the edge model has never seen"""
    spec = ToySpec(train_images=4, eval_images=0, canvas_size=64, class_names=('triangle',),
                   objects_per_image=(1, 1), object_size=(16, 32))
    return generate_toy_dataset(spec, 'train')


@pytest.fixture
def edge(detector_config):
    return DetectorService.build_detector(detector_config, seed=1)


class TestTrainConfig:
    """Test training config validation"""

    def test_invalid_values(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(max_epochs=-1)
        with pytest.raises(ConfigurationError):
            TrainConfig(optimizer='rmsprop')

    def test_zero_epochs_allowed(self):
        assert TrainConfig(max_epochs=0).max_epochs == 0

    def test_step_milestones(self):
        assert TrainConfig(max_epochs=9, lr_schedule=LrSchedule.STEP).milestones == [6, 8]
        assert TrainConfig(max_epochs=9).milestones == []

    def test_preset_with_override(self):
        config = DistillationService.train_config({'max_epochs': 2}, preset='toy_kd')
        assert config.max_epochs == 2
        assert config.learning_rate == pytest.approx(1e-2)
        assert config.lr_schedule == LrSchedule.STEP

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            train_preset('warp')

    def test_serializer_rejects_bad_learning_rate(self):
        with pytest.raises(ConfigurationError):
            DistillationService.train_config({'learning_rate': -1})


class TestRDConfig:
    """Test reverse distillation weights"""

    def test_presets(self):
        assert (EMULATION_RD.alpha_rd, EMULATION_RD.beta_rd) == (1.0, 0.0)
        assert (CUSTOMER_RD.alpha_rd, CUSTOMER_RD.beta_rd) == (1.0, 1.0)

    def test_both_zero_rejected(self):
        with pytest.raises(ConfigurationError):
            RDConfig(alpha_rd=0.0, beta_rd=0.0)
        with pytest.raises(ConfigurationError):
            DistillationService.rd_config({'alpha_rd': 0, 'beta_rd': 0})

    def test_serializer_defaults(self):
        assert DistillationService.rd_config({}) == CUSTOMER_RD


class TestTrainDirect:
    """Test plain detection training"""

    def test_zero_epochs_leave_model_unchanged(self, detector, known_dataset):
        before = digest(detector)
        _, record = train_direct(detector, known_dataset, TrainConfig(max_epochs=0, batch_size=4))
        assert record.epochs == []
        assert record.final_parameter_digest == before
        assert digest(detector) == before

    def test_one_epoch_records_losses(self, detector, known_dataset, tiny_train):
        before = digest(detector)
        _, record = train_direct(detector, known_dataset, tiny_train)
        assert len(record.epochs) == 1
        assert record.epochs[0].steps == 2
        assert record.epochs[0].detect > 0
        assert record.epochs[0].focal == 0.0
        assert record.final_parameter_digest != before
        assert record.dataset_digest == known_dataset.digest

    def test_evaluator_called_before_and_after(self, detector, known_dataset, tiny_train):
        _, record = train_direct(detector, known_dataset, tiny_train, evaluate=lambda model: 0.25)
        assert record.evals == [{'epoch': 0, 'mAP': 0.25}, {'epoch': 1, 'mAP': 0.25}]
        assert record.initial_map == record.final_map == 0.25

    def test_unknown_labels_rejected(self, detector, private_dataset, tiny_train):
        with pytest.raises(ConfigurationError):
            train_direct(detector, private_dataset, tiny_train)

    def test_record_round_trip(self, tmp_path, detector, known_dataset, tiny_train):
        _, record = train_direct(detector, known_dataset, tiny_train)
        loaded = load_record(save_record(record, tmp_path / 'record.json'))
        assert loaded.final_parameter_digest == record.final_parameter_digest
        assert loaded.epochs[0].detect == pytest.approx(record.epochs[0].detect)


class TestDistill:
    """Test forward knowledge distillation"""

    def test_teacher_is_not_modified(self, detector, edge, known_dataset, tiny_train):
        teacher_digest = digest(detector)
        _, record = distill(detector, edge, known_dataset, FGDConfig(), tiny_train)
        assert digest(detector) == teacher_digest
        assert record.teacher_parameter_digest == teacher_digest
        assert record.epochs[0].focal > 0

    def test_same_seed_same_result(self, detector_config, detector, known_dataset, tiny_train):
        def run():
            student = DetectorService.build_detector(detector_config, seed=1)
            return distill(detector, student, known_dataset, FGDConfig(), tiny_train)[1]

        assert run().final_parameter_digest == run().final_parameter_digest


class TestReverseDistill:
    """Test reverse distillation from the edge model into a tutor"""

    def test_emulation_leaves_head_untouched(self, detector, edge, known_dataset, tiny_train):
        head_before = digest(detector, ['head'])
        neck_before = digest(detector, ['neck'])
        tutor, record = reverse_distill(edge, detector, known_dataset, FGDConfig(), EMULATION_RD, tiny_train)
        assert digest(tutor, ['head']) == head_before
        assert digest(tutor, ['neck']) != neck_before
        assert record.epochs[0].detect == 0.0
        assert record.config['rd'] == {'alpha_rd': 1.0, 'beta_rd': 0.0}

    def test_customer_rd_trains_head(self, detector, edge, known_dataset, tiny_train):
        head_before = digest(detector, ['head'])
        tutor, record = reverse_distill(edge, detector, known_dataset, FGDConfig(), CUSTOMER_RD, tiny_train)
        assert digest(tutor, ['head']) != head_before
        assert record.epochs[0].detect > 0

    def test_warns_when_labels_cannot_reach_the_tutor(self, detector, edge, private_dataset):
        tutor = DetectorService.reshape_head(detector, ('disc', 'square', 'triangle'), seed=0)
        with pytest.warns(DiRediWarning):
            reverse_distill(edge, tutor, private_dataset, FGDConfig(), EMULATION_RD,
                            TrainConfig(max_epochs=0, batch_size=4))

    def test_student_must_not_be_smaller(self, detector, known_dataset, tiny_train):
        large = DetectorService.build_detector(tier_config(Tier.LARGE, ('disc', 'square'), input_size=64), seed=0)
        with pytest.raises(ConfigurationError):
            reverse_distill(large, detector, known_dataset, FGDConfig(), CUSTOMER_RD, tiny_train)


class TestRedistill:
    """Test the re-distillation fine-tune and tutor preparation"""

    def test_customer_tutors_are_aligned(self, detector):
        tutor_1, tutor_2 = prepare_customer_tutors(detector, ('disc', 'square', 'triangle'), seed=2)
        assert tutor_1 is not tutor_2
        assert tutor_1.class_names == ('disc', 'square', 'triangle')
        assert digest(tutor_1) == digest(tutor_2)

    def test_finetune_takes_tutor_classes(self, detector, edge, toy_dataset, tiny_train):
        tutor = DetectorService.reshape_head(detector, ('disc', 'square', 'triangle'), seed=0)
        edge_before = digest(edge)
        updated, record = redistill_finetune(tutor, edge, toy_dataset, tiny_train, seed=0)
        assert updated.class_names == tutor.class_names
        assert updated is not edge
        assert digest(edge) == edge_before
        assert record.config['fgd']['temperature'] == pytest.approx(1.5)
