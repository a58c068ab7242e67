"""
Tests for toy data, category plans, splits and dataset persistence
"""
import numpy as np
import pytest
import torch

from apps.core.exceptions import ConfigurationError, DatasetError, ShapeError
from apps.datasets.loaders import build_loader, class_mapping, collate, to_tensor
from apps.datasets.models import (
    TOY_CLASSES, TOY_ROLES, CategoryPlan, DatasetItem, DetectionDataset, SplitMode, ToySpec,
)
from apps.datasets.services import DatasetService, dataset_fingerprint, load_dataset, save_dataset, split_by_plan
from apps.datasets.toy import generate_toy_dataset, render_object
from apps.detectors.models import Annotation

pytestmark = pytest.mark.unit


def _item(image_id, boxes, labels):
    return DatasetItem(Annotation(image_id, boxes, labels), pixels=np.zeros((64, 64, 3), dtype=np.uint8))


class TestToyDataset:
    """Test the synthetic shapes generator"""

    def test_same_spec_same_data(self, toy_spec, toy_dataset):
        again = generate_toy_dataset(toy_spec, 'train')
        assert dataset_fingerprint(again) == dataset_fingerprint(toy_dataset)

    def test_splits_differ(self, toy_spec, toy_dataset):
        eval_split = generate_toy_dataset(toy_spec, 'eval')
        assert len(eval_split) == 4
        assert dataset_fingerprint(eval_split) != dataset_fingerprint(toy_dataset)

    def test_boxes_inside_canvas(self, toy_dataset):
        assert len(toy_dataset) == 8
        for item in toy_dataset:
            pixels = item.load_image()
            assert pixels.shape == (64, 64, 3) and pixels.dtype == np.uint8
            boxes = item.annotation.boxes
            assert 1 <= len(boxes) <= 2
            assert (boxes >= 0).all() and (boxes <= 64).all()
            assert (boxes[:, 2] > boxes[:, 0]).all() and (boxes[:, 3] > boxes[:, 1]).all()

    def test_unknown_split(self, toy_spec):
        with pytest.raises(DatasetError):
            generate_toy_dataset(toy_spec, 'test')

    def test_spec_validation(self):
        with pytest.raises(ConfigurationError):
            ToySpec(canvas_size=70)
        with pytest.raises(ConfigurationError):
            ToySpec(class_names=('disc', 'blob'))
        with pytest.raises(DatasetError):
            ToySpec(canvas_size=32, object_size=(16, 40))

    @pytest.mark.parametrize('name', TOY_CLASSES)
    def test_every_shape_renders(self, name):
        """Each shape lands in its square, give or take the stroke width"""
        mask, box = render_object(name, 64, 10.0, 12.0, 24.0)
        x0, y0, x1, y1 = box
        assert x1 > x0 and y1 > y0
        assert 6 <= x0 and 8 <= y0 and x1 <= 40 and y1 <= 42
        assert np.asarray(mask).any()

    def test_shapes_are_distinct(self):
        masks = {name: np.asarray(render_object(name, 64, 8.0, 8.0, 40.0)[0]) > 0 for name in TOY_CLASSES}
        for first in TOY_CLASSES:
            for second in TOY_CLASSES:
                if first < second:
                    assert (masks[first] != masks[second]).any(), (first, second)

    def test_spec_serializer(self):
        spec = DatasetService.toy_spec({'train_images': 5, 'objects_per_image': [0, 2]})
        assert spec.train_images == 5
        assert spec.objects_per_image == (0, 2)
        with pytest.raises(ConfigurationError):
            DatasetService.toy_spec({'objects_per_image': [3, 1]})


class TestCategoryPlan:
    """Test category plans"""

    def test_toy_experiment_2(self):
        plan = CategoryPlan.toy_experiment_2()
        assert plan.retained_categories == ('disc', 'square', 'ring', 'cross')
        assert plan.customer_categories == ('disc', 'square', 'ring', 'cross', 'bar')
        assert plan.updated_class_names == ('disc', 'square', 'triangle', 'ring', 'cross', 'bar')

    def test_toy_experiment_1(self):
        plan = CategoryPlan.toy_experiment_1()
        assert plan.private_categories == ('star',)
        assert 'star' not in plan.teacher_categories
        assert plan.categories_for(SplitMode.VERIFICATION) == plan.presumed_categories

    def test_every_voc_role_has_a_shape(self):
        """The toy teacher knows as many categories as the VOC teacher"""
        plan = CategoryPlan.toy_experiment_1()
        assert len(plan.teacher_categories) == len(CategoryPlan.voc_experiment_1().teacher_categories) == 10
        assert len(set(plan.teacher_categories)) == 10
        assert {'arrow', 'hourglass'} <= set(plan.teacher_categories)
        assert len(plan.presumed_categories) == 5
        assert set(TOY_ROLES.values()) <= set(TOY_CLASSES)

    def test_private_overlap_rejected(self):
        with pytest.raises(ConfigurationError):
            CategoryPlan(('a', 'b'), ('a',), private_categories=('a',))

    def test_removed_must_be_presumed(self):
        with pytest.raises(ConfigurationError):
            CategoryPlan(('a', 'b'), ('a',), removed_categories=('b',))


class TestSplitByPlan:
    """Test category splits"""

    @pytest.fixture
    def dataset(self):
        return DetectionDataset([
            _item('only_a', [[0, 0, 10, 10]], [0]),
            _item('a_and_c', [[0, 0, 10, 10], [30, 30, 50, 50]], [0, 2]),
            _item('only_c', [[0, 0, 10, 10]], [2]),
            _item('a_hidden_b', [[0, 0, 20, 20], [2, 2, 20, 20]], [0, 1]),
        ], ('a', 'b', 'c'))

    @pytest.fixture
    def plan(self):
        return CategoryPlan(('a', 'b'), ('a', 'b'), private_categories=('c',), removed_categories=('b',))

    def test_presumed_drops_removed_and_private(self, dataset, plan):
        split = split_by_plan(dataset, plan, SplitMode.PRESUMED)
        assert split.category_names == ('a',)
        assert [item.image_id for item in split] == ['only_a', 'a_and_c']
        assert split.items[1].annotation.labels.tolist() == [0]

    def test_customer_actual_relabels(self, dataset, plan):
        split = split_by_plan(dataset, plan, SplitMode.CUSTOMER_ACTUAL)
        assert split.category_names == ('a', 'c')
        labels = {item.image_id: item.annotation.labels.tolist() for item in split}
        assert labels['a_and_c'] == [0, 1]
        assert labels['only_c'] == [1]

    def test_overlap_drop_can_be_disabled(self, dataset, plan):
        split = split_by_plan(dataset, plan, SplitMode.PRESUMED, drop_overlap_iou=None)
        assert 'a_hidden_b' in [item.image_id for item in split]

    def test_unknown_mode(self, dataset, plan):
        with pytest.raises(ConfigurationError):
            split_by_plan(dataset, plan, 'everything')


class TestFingerprint:
    """Test dataset fingerprints"""

    def test_order_independent(self):
        first = _item('x', [[0, 0, 5, 5]], [0])
        second = _item('y', [[1, 1, 6, 6]], [1])
        assert dataset_fingerprint(DetectionDataset([first, second], ('a', 'b'))) == \
            dataset_fingerprint(DetectionDataset([second, first], ('a', 'b')))

    def test_content_sensitive(self):
        base = DetectionDataset([_item('x', [[0, 0, 5, 5]], [0])], ('a', 'b'))
        moved = DetectionDataset([_item('x', [[0, 0, 5, 6]], [0])], ('a', 'b'))
        assert dataset_fingerprint(base) != dataset_fingerprint(moved)

    def test_label_outside_categories(self):
        with pytest.raises(DatasetError):
            DetectionDataset([_item('x', [[0, 0, 5, 5]], [3])], ('a',))


class TestPersistence:
    """Test save/load of datasets"""

    def test_round_trip(self, tmp_path, toy_dataset):
        save_dataset(toy_dataset, tmp_path / 'train')
        loaded = load_dataset(tmp_path / 'train')
        assert loaded.category_names == toy_dataset.category_names
        assert loaded.digest == toy_dataset.digest
        assert (tmp_path / 'train' / 'images' / 'train_00000.png').exists()

    def test_tampered_annotations(self, tmp_path, toy_dataset):
        directory = save_dataset(toy_dataset, tmp_path / 'train')
        path = directory / 'annotations.json'
        path.write_text(path.read_text().replace('"train_00000"', '"renamed"', 1))
        with pytest.raises(DatasetError):
            load_dataset(directory)


class TestLoaders:
    """Test torch dataset plumbing"""

    def test_to_tensor(self):
        tensor = to_tensor(np.zeros((8, 6, 3), dtype=np.uint8))
        assert tuple(tensor.shape) == (3, 8, 6)
        assert tensor.dtype == torch.float32

    def test_class_mapping(self, toy_dataset):
        assert class_mapping(toy_dataset, ('triangle', 'disc', 'square')) == {0: 1, 1: 2, 2: 0}
        with pytest.raises(ConfigurationError):
            class_mapping(toy_dataset, ('disc',))

    def test_loader_batches(self, toy_dataset):
        loader = build_loader(toy_dataset, toy_dataset.category_names, batch_size=4, seed=0)
        images, annotations = next(iter(loader))
        assert tuple(images.shape) == (4, 3, 64, 64)
        assert len(annotations) == 4

    def test_loader_order_follows_seed(self, toy_dataset):
        def order(seed):
            loader = build_loader(toy_dataset, toy_dataset.category_names, batch_size=8, seed=seed)
            return [a.image_id for _, batch in loader for a in batch]

        assert order(3) == order(3)

    def test_collate_rejects_mixed_sizes(self):
        batch = [(torch.zeros((3, 8, 8)), Annotation('a')), (torch.zeros((3, 16, 16)), Annotation('b'))]
        with pytest.raises(ShapeError):
            collate(batch)
