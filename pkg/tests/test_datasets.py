import numpy as np
import pytest

from pyqmutools.datasets import (
    generate_dataset,
    load_dataset_csv,
    save_dataset_csv,
    scale_features,
    split_tags,
)
from pyqmutools.errors import ValidationError
from pyqmutools.unlearn import forget_indices


@pytest.mark.parametrize("name", ["two_moons", "blobs", "xor"])
def test_generators_scale_onto_the_rotation_range(name):
    data = generate_dataset(name, 40, noise=0.1, seed=0)
    assert data.features.shape == (40, 2)
    assert data.features.min() == pytest.approx(-np.pi)
    assert data.features.max() == pytest.approx(np.pi)
    assert set(np.unique(data.labels)) == {-1, 1}
    assert np.count_nonzero(data.split == "test") == 8


def test_generation_is_seeded():
    a = generate_dataset("two_moons", 20, seed=4)
    b = generate_dataset("two_moons", 20, seed=4)
    np.testing.assert_array_equal(a.features, b.features)
    assert a.split.tolist() == b.split.tolist()


def test_unknown_generator_and_tiny_sets_are_rejected():
    with pytest.raises(ValidationError) as excinfo:
        generate_dataset("spirals", 20)
    assert excinfo.value.field == "generator"
    with pytest.raises(ValidationError) as excinfo:
        generate_dataset("blobs", 2)
    assert excinfo.value.field == "n"


def test_constant_column_scales_to_zero():
    scaled = scale_features([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    np.testing.assert_allclose(scaled[:, 0], [-np.pi, 0.0, np.pi])
    np.testing.assert_array_equal(scaled[:, 1], 0.0)


def test_split_tags_are_stratified():
    labels = np.array([1] * 10 + [-1] * 10)
    tags = split_tags(labels, seed=0)
    assert np.count_nonzero((tags == "test") & (labels == 1)) == 2
    assert np.count_nonzero((tags == "test") & (labels == -1)) == 2


def test_csv_keeps_features_split_and_forget_mask(tmp_path):
    data = generate_dataset("xor", 12, seed=1)
    data = forget_indices(data, data.indices("train")[:2])
    path = save_dataset_csv(data, tmp_path / "data.csv")
    assert path.read_text().splitlines()[0] == "f0,f1,label,split,forget"
    loaded = load_dataset_csv(path)
    np.testing.assert_array_equal(loaded.features, data.features)
    assert loaded.split.tolist() == data.split.tolist()
    assert loaded.indices("forget").tolist() == (
        data.indices("forget").tolist()
    )


def test_csv_without_split_column_gets_seeded_tags(tmp_path):
    path = tmp_path / "plain.csv"
    rows = [f"{i * 0.1},{1 if i % 2 else -1}" for i in range(10)]
    path.write_text("f0,label\n" + "\n".join(rows) + "\n")
    first = load_dataset_csv(path, seed=3)
    second = load_dataset_csv(path, seed=3)
    assert first.split.tolist() == second.split.tolist()
    assert np.count_nonzero(first.split == "test") == 2
    assert not first.forget_mask.any()


def test_csv_errors_name_the_dataset(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f0,target\n0.1,1\n")
    with pytest.raises(ValidationError, match="label"):
        load_dataset_csv(path)
    path.write_text("f0,label\nabc,1\n")
    with pytest.raises(ValidationError) as excinfo:
        load_dataset_csv(path)
    assert excinfo.value.field == "dataset"
    path.write_text("f0,label\n0.1,3\n0.2,1\n")
    with pytest.raises(ValidationError) as excinfo:
        load_dataset_csv(path)
    assert excinfo.value.field == "labels"
