from pathlib import Path

import numpy as np
import pytest
import yaml
from PIL import Image

from reasoners.cli.handlers import REPORT_NAME, SUMMARY_NAME
from reasoners.data.dataset_io import MANIFEST_NAME
from reasoners.main import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, get_project_metadata, main
from reasoners.metrics import METRICS_NAME
from reasoners.models.config_models import SCENE_FACTOR, STREAK_FACTOR
from reasoners.storage import FilesystemStorage
from reasoners.train_task import HISTORY_NAME, STATUS_NAME

from .testlibs import get_run_config, write_run_config


def _run(config: Path, out_dir: Path, *command: str) -> int:
    return main([*command, "--config", str(config), "--out-dir", str(out_dir)])


@pytest.fixture
def config_path(tmp_path: Path) -> Path:
    return write_run_config(tmp_path / "run.yaml")


@pytest.fixture
def out_dir(tmp_path: Path) -> Path:
    return tmp_path / "out"


class TestArguments:
    def test_config_is_required(self):
        with pytest.raises(SystemExit) as error:
            main(["train"])
        assert error.value.code == EXIT_USAGE

    def test_unknown_command(self, config_path):
        with pytest.raises(SystemExit) as error:
            main(["sing", "--config", str(config_path)])
        assert error.value.code == EXIT_USAGE

    def test_reason_needs_images(self, config_path):
        with pytest.raises(SystemExit) as error:
            main(["reason", "--config", str(config_path)])
        assert error.value.code == EXIT_USAGE

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as error:
            main(["--version"])
        assert error.value.code == 0
        name, version = get_project_metadata()
        assert capsys.readouterr().out.strip() == f"{name} {version}"

    def test_project_metadata(self):
        assert get_project_metadata()[0] == "ood-reasoners"


class TestConfigErrors:
    def test_missing_config(self, tmp_path, out_dir):
        assert _run(tmp_path / "missing.yaml", out_dir, "gen-data") == EXIT_USAGE

    def test_invalid_config_writes_nothing(self, tmp_path, out_dir, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("model:\n  latent_size: 1\n")
        assert _run(path, out_dir, "gen-data") == EXIT_USAGE
        assert "latent_size" in capsys.readouterr().err
        assert not out_dir.exists()

    def test_manifest_source_cannot_be_generated(self, tmp_path, out_dir):
        config = get_run_config()
        config = config.model_copy(update={"dataset": config.dataset.model_copy(update={"source": "manifest"})})
        path = write_run_config(tmp_path / "manifest.yaml", config)
        assert _run(path, out_dir, "gen-data") == EXIT_USAGE

    def test_train_without_dataset(self, config_path, out_dir):
        assert _run(config_path, out_dir, "train") == EXIT_USAGE

    def test_evaluate_without_checkpoint(self, config_path, out_dir):
        assert _run(config_path, out_dir, "gen-data") == EXIT_OK
        assert _run(config_path, out_dir, "evaluate") == EXIT_FAILURE


class TestPipeline:
    def test_gen_data_is_reproducible(self, config_path, tmp_path, capsys):
        assert _run(config_path, tmp_path / "first", "gen-data") == EXIT_OK
        assert _run(config_path, tmp_path / "second", "gen-data") == EXIT_OK
        first = (tmp_path / "first" / "dataset" / MANIFEST_NAME).read_bytes()
        assert first == (tmp_path / "second" / "dataset" / MANIFEST_NAME).read_bytes()
        assert "manifest sha256" in capsys.readouterr().out

    def test_seed_changes_the_data(self, config_path, tmp_path):
        assert _run(config_path, tmp_path / "first", "gen-data") == EXIT_OK
        assert main(["gen-data", "--config", str(config_path), "--out-dir", str(tmp_path / "second"), "--seed", "5"]) == EXIT_OK
        first = (tmp_path / "first" / "dataset" / MANIFEST_NAME).read_bytes()
        assert first != (tmp_path / "second" / "dataset" / MANIFEST_NAME).read_bytes()

    def test_every_command_end_to_end(self, config_path, out_dir, tmp_path, capsys):
        for command in ("gen-data", "train", "calibrate", "evaluate"):
            assert _run(config_path, out_dir, command) == EXIT_OK, command

        for name in (
            STATUS_NAME,
            HISTORY_NAME,
            METRICS_NAME,
            REPORT_NAME,
            SUMMARY_NAME,
            "checkpoints/best/model.pt",
            "checkpoints/best/model.yaml",
            f"reasoners/reasoner-{STREAK_FACTOR}.yaml",
            f"reasoners/reasoner-{SCENE_FACTOR}.yaml",
            f"roc-{STREAK_FACTOR}.csv",
            "mutual_information.csv",
            "latents.csv",
            f"scatter-{SCENE_FACTOR}.svg",
        ):
            assert (out_dir / name).is_file(), name

        report = yaml.safe_load((out_dir / REPORT_NAME).read_text())
        assert set(report["evaluations"]) == {STREAK_FACTOR, SCENE_FACTOR}
        assert all(0.0 <= entry["auroc"] <= 1.0 for entry in report["evaluations"].values())
        assert report["config_digest"] == get_run_config().digest()
        assert b"reasoners_reasoner_auroc" in (out_dir / METRICS_NAME).read_bytes()
        assert f'config_digest="{report["config_digest"]}"'.encode() in (out_dir / METRICS_NAME).read_bytes()

        storage = FilesystemStorage(out_dir)
        for name in (HISTORY_NAME, f"roc-{STREAK_FACTOR}.csv", "mutual_information.csv", "latents.csv"):
            assert (out_dir / name).read_text().startswith("# provenance: "), name
            provenance = storage.table_provenance(name)
            assert provenance["config_digest"] == report["config_digest"], name
            assert provenance["manifest_digest"] == report["manifest_digest"], name
        assert storage.table_provenance("latents.csv")["checkpoint"] == report["checkpoint"]
        assert list(storage.load_table(HISTORY_NAME).columns)[0] == "epoch"

        images = tmp_path / "images"
        images.mkdir()
        for index in range(2):
            pixels = np.random.default_rng(index).integers(0, 256, (8, 8), dtype=np.uint8)
            Image.fromarray(pixels, mode="L").save(images / f"image-{index}.png")
        (images / "broken.png").write_text("not an image")
        (images / "notes.txt").write_text("skipped")
        capsys.readouterr()

        assert _run(config_path, out_dir, "reason", str(images)) == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        assert lines[0].startswith(f"{images / 'broken.png'}\terror:")
        for line in lines[1:]:
            assert f"{STREAK_FACTOR}: density=" in line
            assert f"{SCENE_FACTOR}: density=" in line
            assert "ood=" in line
            assert line.count("posterior=[") == 2

        reasoner_file = out_dir / "reasoners" / f"reasoner-{SCENE_FACTOR}.yaml"
        assert (
            main(
                [
                    "reason",
                    str(images / "image-0.png"),
                    "--reasoner",
                    str(reasoner_file),
                    "--config",
                    str(config_path),
                    "--out-dir",
                    str(out_dir),
                ]
            )
            == EXIT_OK
        )
        (line,) = capsys.readouterr().out.strip().splitlines()
        assert SCENE_FACTOR in line and STREAK_FACTOR not in line

    def test_reruns_give_identical_artifacts(self, config_path, tmp_path):
        runs = [tmp_path / "first", tmp_path / "second"]
        for out in runs:
            for command in ("gen-data", "train", "calibrate"):
                assert _run(config_path, out, command) == EXIT_OK, command
        for name in (
            f"dataset/{MANIFEST_NAME}",
            HISTORY_NAME,
            f"reasoners/reasoner-{STREAK_FACTOR}.yaml",
            f"reasoners/reasoner-{SCENE_FACTOR}.yaml",
        ):
            assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name
