import json
import tempfile
from io import StringIO
from pathlib import Path

import pytest
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from apps.core.exceptions import ConfigurationError
from apps.pipeline.runconfig import load_run_config, parse_run_config
from apps.pipeline.rundir import RunDirectory

TINY_CONFIG = {
    "seed": 3,
    "dataset": {"num_scenes": 20, "image_size": 32, "num_categories": 2, "size_range": [0.05, 0.25]},
    "networks": {"stages": [[4, 1, 2], [8, 1, 2], [8, 1, 1]], "hidden": 8},
    "pretrain": {"epochs": 1, "f1_gate": 0.0},
    "mining": {
        "scales": [16, 32],
        "batch_sizes": [4, 4],
        "modulator_epochs": 1,
        "generator_epochs": 1,
        "max_steps": 2,
    },
    "eval": {"ablation_scales": [32], "render_images": 1},
    "minimax": {"steps": 20, "batch_size": 32, "hidden": 8, "eval_samples": 1000, "log_every": 10},
}


def write_config(directory, document=None):
    path = Path(directory) / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG if document is None else document))
    return str(path)


def run(command, **options):
    return call_command(command, stdout=StringIO(), stderr=StringIO(), **options)


class RunConfigTests(SimpleTestCase):
    def test_empty_document_materializes_every_default(self):
        run_config = parse_run_config({})
        self.assertEqual(
            set(run_config.document),
            {"schema_version", "seed", "output_dir", "dataset", "networks", "pretrain", "mining", "eval", "minimax"},
        )
        self.assertEqual(run_config.document["mining"]["scales"], [32, 48, 64])
        self.assertEqual(run_config.mining.scales, (32, 48, 64))
        self.assertEqual(run_config.dataset.seed, run_config.seed)
        self.assertEqual(run_config.head.num_categories, 4)
        self.assertEqual(run_config.document["eval"]["ablation_scales"], [32, 48, 64])
        self.assertEqual(run_config.eval.ablation_scales, run_config.mining.scales)

    def test_shipped_default_is_fully_written_out(self):
        shipped = load_run_config(settings.MINER_DEFAULT_CONFIG)
        self.assertEqual(shipped.document, parse_run_config({}).document)

    def test_persisted_copy_parses_to_the_same_config(self):
        run_config = parse_run_config(TINY_CONFIG)
        self.assertEqual(parse_run_config(run_config.to_dict()), run_config)

    def test_unknown_keys_are_rejected(self):
        for document in ({"colour": 1}, {"dataset": {"colour": 1}}):
            with self.assertRaises(ConfigurationError) as caught:
                parse_run_config(document)
            self.assertTrue(any("colour" in key for key in caught.exception.details["errors"]))

    def test_invalid_values(self):
        invalid = [
            {"schema_version": 2},
            {"mining": {"scales": [48, 32]}},
            {"mining": {"scales": [32, 64], "batch_sizes": [8]}},
            {"dataset": {"size_range": [0.3, 0.1]}},
            {"networks": {"stages": [[8, 1, 2]]}},
            {"minimax": {"objective": "reversed"}},
            {"eval": {"ablation_scales": [30]}},
            {"dataset": {"size_range": [0.5, 0.6], "max_objects": 1}},
        ]
        for document in invalid:
            with self.assertRaises(ConfigurationError):
                parse_run_config(document)

    def test_field_errors_name_their_section(self):
        cases = [
            ({"eval": {"ablation_scales": [40]}}, "eval.ablation_scales"),
            ({"dataset": {"size_range": [0.5, 0.6], "max_coverage": 0.45}}, "dataset.size_range"),
        ]
        for document, key in cases:
            with self.assertRaises(ConfigurationError) as caught:
                parse_run_config(document)
            self.assertIn(key, caught.exception.details["errors"])

    def test_ablation_scales_follow_the_mining_schedule(self):
        run_config = parse_run_config({"mining": {"scales": [16, 32], "batch_sizes": [4, 4]}})
        self.assertEqual(run_config.document["eval"]["ablation_scales"], [16, 32])
        self.assertEqual([config.scales for config in run_config.ablation_configs()], [(16,), (32,)])

    def test_ablation_configs_hold_one_scale(self):
        configs = parse_run_config(TINY_CONFIG).ablation_configs()
        self.assertEqual([config.scales for config in configs], [(32,)])
        self.assertTrue(configs[0].ablation)


class SettingsTests(SimpleTestCase):
    def test_no_model_apps_or_database(self):
        self.assertNotIn("django.contrib.auth", settings.INSTALLED_APPS)
        self.assertNotIn("django.contrib.contenttypes", settings.INSTALLED_APPS)
        self.assertFalse(getattr(settings, "DATABASES", {}).get("default", {}).get("NAME"))


class CommandErrorTests(SimpleTestCase):
    def test_eval_without_pools_exits_with_data_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(CommandError) as caught:
                run("eval", run_dir=tmp)
            self.assertEqual(caught.exception.returncode, 3)
            record = json.loads((Path(tmp) / "error.json").read_text())
            self.assertTrue(record["error"])
            self.assertEqual(record["exit_code"], 3)
            self.assertEqual(record["error_type"], "MissingArtifactError")
            self.assertIn("missing artifact", record["message"])

    def test_invalid_config_exits_with_config_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = write_config(tmp, {"mining": {"scales": [64]}})
            with self.assertRaises(CommandError) as caught:
                run("gen_data", config=config, out=tmp)
            self.assertEqual(caught.exception.returncode, 2)
            record = json.loads((Path(tmp) / "error.json").read_text())
            self.assertIn("mining.scales", record["details"]["errors"])

    def test_missing_config_file_is_a_data_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(CommandError) as caught:
                run("gen_data", config=str(Path(tmp) / "absent.json"), out=tmp)
            self.assertEqual(caught.exception.returncode, 3)

    def test_pretrain_gate_failure_exits_with_training_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            document = {**TINY_CONFIG, "pretrain": {"epochs": 1, "f1_gate": 1.0}}
            config = write_config(tmp, document)
            out = str(Path(tmp) / "run")
            run("gen_data", config=config, out=out)
            try:
                run("pretrain", out=out)
            except CommandError as exc:
                self.assertEqual(exc.returncode, 4)
                record = json.loads((Path(out) / "error.json").read_text())
                self.assertIn("macro_f1", record["details"])
            else:
                # a perfect classifier after one epoch passes the gate
                self.assertTrue(RunDirectory(out).is_done("pretrain"))


class StageChainTests(SimpleTestCase):
    def test_stages_resume_from_previous_artifacts(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = write_config(tmp)
            out = Path(tmp) / "run"
            run("gen_data", config=config, out=str(out))
            run_dir = RunDirectory(out)
            self.assertTrue(run_dir.is_done("gen_data"))
            self.assertTrue((out / "config.json").exists())

            # later stages reuse <out>/config.json
            run("pretrain", out=str(out))
            run("mine", out=str(out))
            self.assertTrue((out / "pools" / "manifest.json").exists())
            self.assertTrue((out / "ckpt" / "steps" / "step_1" / "snapshot.json").exists())

            run("eval", run_dir=str(out))
            report = json.loads((out / "report.json").read_text())
            for key in ("regions", "step_curve", "newly_mined", "adaptivity", "summary", "checks"):
                self.assertIn(key, report)
            self.assertTrue((out / "tables" / "regions.csv").exists())
            self.assertTrue((out / "report.pdf").exists())
            self.assertTrue((out / "report.xlsx").exists())

            image_id = report["regions"][0]["image_id"]
            run("render", run_dir=str(out), image_ids=[image_id])
            self.assertTrue((out / "figures" / "panels" / f"{image_id}.png").exists())

            events = [json.loads(line) for line in (out / "run_log.jsonl").read_text().splitlines()]
            self.assertIn("pretrain_epoch", {event["event"] for event in events})
            self.assertIn("modulator_epoch", {event["event"] for event in events})

    def test_render_unknown_image(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = write_config(tmp)
            out = str(Path(tmp) / "run")
            run("gen_data", config=config, out=out)
            run("pretrain", out=out)
            run("mine", out=out)
            with self.assertRaises(CommandError) as caught:
                run("render", run_dir=out, image_ids=["scene-99999"])
            self.assertEqual(caught.exception.returncode, 3)


class FullPipelineTests(SimpleTestCase):
    def test_full_run_is_deterministic(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = write_config(tmp)
            first, second = Path(tmp) / "first", Path(tmp) / "second"
            run("full", config=config, out=str(first))
            run("full", config=config, out=str(second))

            report = json.loads((first / "report.json").read_text())
            self.assertEqual(report, json.loads((second / "report.json").read_text()))
            self.assertEqual([row["scale"] for row in report["ablations"]], [32])
            self.assertIn("post_divergence", report["gan"])
            self.assertIn("distribution_mapped", report["checks"])
            for stage in ("gen_data", "pretrain", "mine", "ablations", "ganverify", "eval", "render", "full"):
                self.assertTrue(RunDirectory(first).is_done(stage))
            self.assertTrue((first / "figures" / "step_curve.png").exists())
            self.assertTrue((first / "tables" / "gan_histogram.csv").exists())

    def test_output_dir_from_environment_setting(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = write_config(tmp, {**TINY_CONFIG, "minimax": {**TINY_CONFIG["minimax"], "steps": 0}})
            with self.settings(MINER_OUTPUT_DIR=tmp):
                run("ganverify", config=config)
            self.assertTrue((Path(tmp) / "ganverify" / "gan.json").exists())

    def test_environment_output_dir_overrides_config_output_dir(self):
        with tempfile.TemporaryDirectory() as tmp:
            document = {**TINY_CONFIG, "output_dir": str(Path(tmp) / "from-config")}
            run_config = parse_run_config(document)
            with self.settings(MINER_OUTPUT_DIR=str(Path(tmp) / "from-env")):
                self.assertEqual(RunDirectory.resolve(None, run_config, "mine").root, Path(tmp) / "from-env" / "mine")
                self.assertEqual(RunDirectory.resolve(tmp, run_config, "mine").root, Path(tmp))
            with self.settings(MINER_OUTPUT_DIR=None):
                self.assertEqual(RunDirectory.resolve(None, run_config, "mine").root, Path(tmp) / "from-config")


@pytest.mark.slow
class DefaultConfigAcceptanceTests(SimpleTestCase):
    def test_default_run_meets_property_checks(self):
        with tempfile.TemporaryDirectory() as tmp:
            run("full", out=tmp)
            checks = json.loads((Path(tmp) / "report.json").read_text())["checks"]
            for name, passed in checks.items():
                self.assertIsNot(passed, False, name)
