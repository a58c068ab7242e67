"""
Tests for focal and global feature distillation
"""
import numpy as np
import pytest
import torch

from apps.core.exceptions import ConfigurationError, ShapeError
from apps.detectors.models import Annotation, FeaturePyramid
from apps.fgd.losses import (
    FGDLoss, build_batch_masks, build_masks, channel_attention, feature_distill_loss, focal_distill_loss,
    global_distill_loss, spatial_attention,
)
from apps.fgd.models import FGDConfig, GcBlock

pytestmark = pytest.mark.unit


@pytest.fixture
def annotation():
    return Annotation('a', [[0, 0, 16, 16], [40, 40, 64, 64]], [0, 1])


@pytest.fixture
def features():
    generator = torch.Generator().manual_seed(0)
    teacher = torch.randn((2, 4, 8, 8), generator=generator)
    student = torch.randn((2, 4, 8, 8), generator=generator)
    return teacher, student


class TestMasks:
    """Test foreground/background masks"""

    def test_mask_invariants(self, annotation):
        """Foreground and background partition the map; the background scale sums to one"""
        masks = build_masks(annotation, (8, 8), 8)
        assert torch.equal(masks.binary + masks.inverse_binary, torch.ones((8, 8)))
        assert float((masks.inverse_scale * masks.inverse_binary).sum()) == pytest.approx(1.0)
        assert float((masks.scale * masks.binary).sum()) == pytest.approx(2.0)

    def test_footprints(self, annotation):
        """Every cell of a box is weighted by one over the box area in cells"""
        masks = build_masks(annotation, (8, 8), 8)
        assert masks.binary[:2, :2].all()
        assert masks.scale[0, 0] == pytest.approx(1 / 4)
        assert masks.scale[7, 7] == pytest.approx(1 / 9)
        assert masks.binary.sum() == 13

    def test_tiny_box_claims_its_centre_cell(self):
        """A box smaller than one cell still marks the cell holding its centre"""
        masks = build_masks(Annotation('a', [[1, 1, 3, 3]], [0]), (8, 8), 8)
        assert masks.binary.sum() == 1
        assert masks.binary[0, 0] == 1

    def test_no_boxes(self):
        masks = build_masks(Annotation('a'), (4, 4), 16)
        assert not masks.binary.any()
        assert float(masks.inverse_scale.sum()) == pytest.approx(1.0)

    def test_batch_masks(self, annotation):
        masks = build_batch_masks([annotation, Annotation('b')], (8, 8), 8)
        assert tuple(masks.binary.shape) == (2, 8, 8)


class TestAttention:
    """Test attention maps"""

    def test_attention_sums(self, features):
        """Spatial attention sums to H*W and channel attention to C"""
        teacher, _ = features
        spatial = spatial_attention(teacher, 0.5)
        channel = channel_attention(teacher, 0.5)
        assert tuple(spatial.shape) == (2, 8, 8)
        assert tuple(channel.shape) == (2, 4)
        torch.testing.assert_close(spatial.sum(dim=(-2, -1)), torch.full((2,), 64.0))
        torch.testing.assert_close(channel.sum(dim=-1), torch.full((2,), 4.0))


class TestFocalLoss:
    """Test the focal distillation term"""

    def test_identical_features_give_zero(self, features, annotation):
        teacher, _ = features
        masks = build_batch_masks([annotation, annotation], (8, 8), 8)
        loss = focal_distill_loss(teacher, teacher.clone(), masks, FGDConfig())
        assert float(loss) == pytest.approx(0.0, abs=1e-12)

    def test_positive_when_features_differ(self, features, annotation):
        teacher, student = features
        masks = build_batch_masks([annotation, annotation], (8, 8), 8)
        assert float(focal_distill_loss(teacher, student, masks, FGDConfig())) > 0

    def test_gradient_reaches_student_only(self, features, annotation):
        """The teacher features are detached from the loss"""
        teacher, student = features
        teacher = teacher.clone().requires_grad_(True)
        student = student.clone().requires_grad_(True)
        masks = build_batch_masks([annotation, annotation], (8, 8), 8)
        focal_distill_loss(teacher, student, masks, FGDConfig()).backward()
        assert teacher.grad is None
        assert student.grad is not None and student.grad.abs().sum() > 0

    def test_gradcheck(self, annotation):
        generator = torch.Generator().manual_seed(1)
        teacher = torch.randn((1, 3, 4, 4), generator=generator, dtype=torch.float64)
        student = torch.randn((1, 3, 4, 4), generator=generator, dtype=torch.float64, requires_grad=True)
        masks = build_batch_masks([Annotation('a', [[0, 0, 32, 32]], [0])], (4, 4), 16)
        config = FGDConfig(sigma_fg=1.0, beta_bg=0.5, gamma_attn=0.5)
        assert torch.autograd.gradcheck(lambda s: focal_distill_loss(teacher, s, masks, config), (student,))

    def test_shape_mismatch(self, annotation):
        masks = build_batch_masks([annotation], (8, 8), 8)
        with pytest.raises(ShapeError):
            focal_distill_loss(torch.zeros((1, 4, 8, 8)), torch.zeros((1, 3, 8, 8)), masks, FGDConfig())


class TestGlobalLoss:
    """Test the global distillation term"""

    def test_fresh_block_is_identity(self, features):
        """With its last layer zeroed the context block passes features through"""
        teacher, student = features
        block = GcBlock(4)
        torch.testing.assert_close(block(teacher), teacher)
        loss = global_distill_loss(teacher, student, block, 1.0)
        torch.testing.assert_close(loss, ((teacher - student) ** 2).sum() / 2)

    def test_zero_weight(self, features):
        teacher, student = features
        assert float(global_distill_loss(teacher, student, GcBlock(4), 0.0)) == 0.0

    def test_block_checks_channels(self):
        with pytest.raises(ShapeError):
            GcBlock(4)(torch.zeros((1, 3, 2, 2)))


class TestFeatureDistillLoss:
    """Test the pyramid-level loss and FGDLoss module"""

    def test_levels_must_align(self, features, annotation):
        teacher, student = features
        config = FGDConfig()
        with pytest.raises(ShapeError):
            feature_distill_loss(FeaturePyramid([8], [teacher]), FeaturePyramid([8, 16], [student, student]),
                                 [annotation, annotation], config, [GcBlock(4)])

    def test_adaptor_bridges_channels(self, annotation):
        """A 1x1 adaptor maps student channels onto the teacher width"""
        teacher = FeaturePyramid([8], [torch.randn((1, 6, 8, 8))])
        student = FeaturePyramid([8], [torch.randn((1, 4, 8, 8), requires_grad=True)])
        module = FGDLoss(FGDConfig(), teacher_channels=6, student_channels=4, num_levels=1)
        assert module.adaptor is not None
        value = module(teacher, student, [annotation])
        value.total.backward()
        assert student.features[0].grad is not None

    def test_same_width_needs_no_adaptor(self):
        assert FGDLoss(FGDConfig(), 4, 4, 3).adaptor is None


class TestFGDConfig:
    """Test FGD hyper-parameter validation"""

    def test_negative_weight(self):
        with pytest.raises(ConfigurationError):
            FGDConfig(sigma_fg=-1.0)

    def test_temperature_positive(self):
        with pytest.raises(ConfigurationError):
            FGDConfig(temperature=0.0)


def _random_annotation(rng, height, width, stride, max_boxes=3):
    boxes = []
    for _ in range(int(rng.integers(0, max_boxes + 1))):
        x1, y1 = rng.uniform(0, width * stride - 4), rng.uniform(0, height * stride - 4)
        boxes.append([x1, y1, rng.uniform(x1 + 2, width * stride), rng.uniform(y1 + 2, height * stride)])
    return Annotation('r', boxes, [0] * len(boxes))


def _disjoint_annotation(rng):
    """Up to one box per 32 pixel quadrant of a 64 pixel image; never covers a whole quadrant"""
    boxes = []
    for row in (0, 1):
        for col in (0, 1):
            if rng.random() < 0.3:
                continue
            x1 = 32 * col + rng.uniform(0, 8)
            y1 = 32 * row + rng.uniform(0, 8)
            boxes.append([x1, y1, x1 + rng.uniform(4, 24), y1 + rng.uniform(4, 24)])
    return Annotation('q', boxes, [0] * len(boxes))


def central_difference(fn, x, eps=1e-6):
    grad = torch.zeros_like(x)
    flat, out = x.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        flat[i] = original + eps
        upper = float(fn(x))
        flat[i] = original - eps
        lower = float(fn(x))
        flat[i] = original
        out[i] = (upper - lower) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    scale = max(float(analytic.norm()), float(numeric.norm()), 1e-12)
    return float((analytic - numeric).norm()) / scale


class TestLossIdentity:
    """Every loss vanishes when the student reproduces the teacher"""

    @pytest.mark.parametrize('seed', range(20))
    def test_identical_features(self, seed):
        rng = np.random.default_rng(seed)
        n, c = int(rng.integers(1, 4)), int(rng.integers(1, 7))
        h, w = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        generator = torch.Generator().manual_seed(seed)
        feature = torch.randn((n, c, h, w), generator=generator)
        annotations = [_random_annotation(rng, h, w, 8) for _ in range(n)]
        config = FGDConfig(sigma_fg=1.0, beta_bg=1.0, gamma_attn=1.0, lambda_global=1.0)
        masks = build_batch_masks(annotations, (h, w), 8)
        block = GcBlock(c)
        assert abs(float(focal_distill_loss(feature, feature.clone(), masks, config))) < 1e-6
        assert abs(float(global_distill_loss(feature, feature.clone(), block, 1.0))) < 1e-6
        value = feature_distill_loss(FeaturePyramid([8], [feature]), FeaturePyramid([8], [feature.clone()]),
                                     annotations, config, [block])
        assert abs(float(value.total)) < 1e-6


class TestRandomizedMasks:
    """Mask and attention invariants on random inputs"""

    @pytest.mark.parametrize('seed', range(100))
    def test_invariants(self, seed):
        """Masks built from disjoint random boxes keep their partition and normalisation"""
        rng = np.random.default_rng(seed)
        annotation = _disjoint_annotation(rng)
        masks = build_masks(annotation, (8, 8), 8)
        assert torch.equal(masks.binary + masks.inverse_binary, torch.ones((8, 8)))
        assert float((masks.inverse_scale * masks.inverse_binary).sum()) == pytest.approx(1.0, abs=1e-6)
        assert float((masks.scale * masks.binary).sum()) == pytest.approx(len(annotation), abs=1e-6)

        generator = torch.Generator().manual_seed(seed)
        feature = torch.randn((1, 5, 8, 8), generator=generator)
        assert float(spatial_attention(feature, 0.5).sum()) == pytest.approx(64.0, rel=1e-4)
        assert float(channel_attention(feature, 0.5).sum()) == pytest.approx(5.0, rel=1e-4)


class TestFiniteDifferences:
    """Analytic gradients against central differences in float64"""

    @pytest.mark.parametrize('seed', range(50))
    def test_focal_gradient(self, seed):
        """Focal and attention terms on random 2x4x4 features with random boxes"""
        rng = np.random.default_rng(seed)
        generator = torch.Generator().manual_seed(seed)
        teacher = torch.randn((1, 2, 4, 4), generator=generator, dtype=torch.float64)
        student = torch.randn((1, 2, 4, 4), generator=generator, dtype=torch.float64)
        masks = build_batch_masks([_random_annotation(rng, 4, 4, 8, max_boxes=2)], (4, 4), 8)
        config = FGDConfig(sigma_fg=1.0, beta_bg=0.5, gamma_attn=0.5)

        def loss(s):
            return focal_distill_loss(teacher, s, masks, config)

        variable = student.clone().requires_grad_(True)
        loss(variable).backward()
        with torch.no_grad():
            numeric = central_difference(loss, student.clone())
        assert relative_error(variable.grad, numeric) < 1e-3

    @pytest.mark.parametrize('seed', range(50))
    def test_global_gradient(self, seed):
        """Global term through a context block with random weights"""
        generator = torch.Generator().manual_seed(seed)
        teacher = torch.randn((1, 2, 4, 4), generator=generator, dtype=torch.float64)
        student = torch.randn((1, 2, 4, 4), generator=generator, dtype=torch.float64)
        block = GcBlock(2).double()
        with torch.no_grad():
            for parameter in block.parameters():
                parameter.copy_(0.5 * torch.randn(parameter.shape, generator=generator, dtype=torch.float64))

        def loss(s):
            return global_distill_loss(teacher, s, block, 1.0)

        variable = student.clone().requires_grad_(True)
        loss(variable).backward()
        with torch.no_grad():
            numeric = central_difference(loss, student.clone())
        assert relative_error(variable.grad, numeric) < 1e-3
