import numpy as np
import pytest
from PIL import Image

from reasoners.data.dataset_io import (
    MANIFEST_NAME,
    load_image,
    read_dataset,
    read_provenance,
    write_dataset,
)
from reasoners.data.synthetic import generate_synthetic
from reasoners.exceptions import ConfigError, ShapeError
from reasoners.models.config_models import STREAK_FACTOR


@pytest.fixture
def samples(run_config):
    return generate_synthetic(run_config.dataset, run_config.rules.factors, seed=0)


class TestDatasetRoundTrip:
    def test_read_back_what_was_written(self, tmp_path, samples, run_config):
        factors = run_config.rules.factors
        digest = write_dataset(samples, factors, tmp_path, {"seed": 0})
        stored = read_dataset(tmp_path, factors, channels=1, size=8)

        assert stored.digest == digest
        assert stored.provenance == {"seed": 0}
        assert [sample.sample_id for sample in stored.samples] == [sample.sample_id for sample in samples]
        for written, read in zip(samples, stored.samples):
            assert read.split == written.split
            assert read.assignment == written.assignment
            # 8-bit quantization
            np.testing.assert_allclose(read.image, written.image, atol=0.5 / 255 + 1e-6)
            assert read.measurements[STREAK_FACTOR] == pytest.approx(
                written.measurements[STREAK_FACTOR], rel=1e-8, abs=1e-12
            )

    def test_empty_provenance_keeps_every_sample(self, tmp_path, samples, run_config):
        write_dataset(samples, run_config.rules.factors, tmp_path, {})
        assert (tmp_path / MANIFEST_NAME).read_text().startswith("# provenance: {}\n")
        stored = read_dataset(tmp_path, run_config.rules.factors, channels=1, size=8)
        assert stored.provenance == {}
        assert [sample.sample_id for sample in stored.samples] == [sample.sample_id for sample in samples]

    def test_manifest_without_a_provenance_line(self, tmp_path, samples, run_config):
        write_dataset(samples, run_config.rules.factors, tmp_path, {"seed": 0})
        manifest = tmp_path / MANIFEST_NAME
        manifest.write_text(manifest.read_text().split("\n", 1)[1])
        stored = read_dataset(tmp_path, run_config.rules.factors, channels=1, size=8)
        assert stored.provenance == {}
        assert len(stored.samples) == len(samples)

    def test_splits_are_listed(self, tmp_path, samples, run_config):
        write_dataset(samples, run_config.rules.factors, tmp_path, {})
        stored = read_dataset(tmp_path, run_config.rules.factors, channels=1, size=8)
        assert stored.splits == ["calibration", "test-scene", "test-streak_intensity", "train"]
        assert len(stored.split("train")) == 48

    def test_same_samples_same_digest(self, tmp_path, samples, run_config):
        first = write_dataset(samples, run_config.rules.factors, tmp_path / "first", {"seed": 0})
        second = write_dataset(samples, run_config.rules.factors, tmp_path / "second", {"seed": 0})
        assert first == second
        assert (tmp_path / "first" / MANIFEST_NAME).read_bytes() == (
            tmp_path / "second" / MANIFEST_NAME
        ).read_bytes()

    def test_provenance_header(self, tmp_path, samples, run_config):
        write_dataset(samples[:2], run_config.rules.factors, tmp_path, {"generator": {"seed": 7}})
        assert read_provenance(tmp_path / MANIFEST_NAME) == {"generator": {"seed": 7}}

    def test_missing_manifest_raises(self, tmp_path, run_config):
        with pytest.raises(ConfigError):
            read_dataset(tmp_path, run_config.rules.factors, channels=1, size=8)

    def test_manifest_without_a_factor_column_raises(self, tmp_path, samples, run_config):
        write_dataset(samples[:2], run_config.rules.factors[:1], tmp_path, {})
        with pytest.raises(ConfigError):
            read_dataset(tmp_path, run_config.rules.factors, channels=1, size=8)


class TestLoadImage:
    def test_grayscale_in_unit_range(self, tmp_path):
        path = tmp_path / "gray.png"
        Image.fromarray(np.full((8, 8), 255, dtype=np.uint8), mode="L").save(path)
        image = load_image(path, channels=1, size=8)
        assert image.shape == (8, 8, 1)
        assert image.max() == 1.0

    def test_color_to_grayscale(self, tmp_path):
        path = tmp_path / "color.png"
        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8), mode="RGB").save(path)
        assert load_image(path, channels=1).shape == (8, 8, 1)
        assert load_image(path, channels=3).shape == (8, 8, 3)

    def test_wrong_size_raises(self, tmp_path):
        path = tmp_path / "large.png"
        Image.fromarray(np.zeros((16, 16), dtype=np.uint8), mode="L").save(path)
        with pytest.raises(ShapeError):
            load_image(path, channels=1, size=8)

    def test_unreadable_file_raises(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_text("not an image")
        with pytest.raises(ShapeError):
            load_image(path, channels=1, size=8)
