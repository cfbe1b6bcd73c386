"""
End-to-end tests that drive every CLI subcommand on a tiny synthetic run.
"""

import unittest
from unittest.mock import patch
import io
import json
import os
import shutil
import sys
import tempfile

import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

try:
    from src.main import EXIT_OK, EXIT_VALIDATION, main
    from src.saemnesia.store import load_assignment, load_checkpoint, load_dataset, load_plan, load_report
    from src.saemnesia.utils.log import reset_logger
except ImportError:
    from unittest.case import SkipTest

    raise SkipTest("Could not import main module")

TINY_CONFIG = {
    "synth": {"d": 16, "num_objects": 4, "num_styles": 2, "timesteps": 2, "samples_per_pair": 8},
    "model": {"n": 32, "k": 4, "k_aux": 8},
    "train": {
        "unsupervised": {"epochs": 3, "batch_size": 16, "dead_window": 100},
        "supervised": {"epochs": 3, "batch_size": 16, "dead_window": 100},
    },
    "steering": {"candidates": [-1.0, -5.0]},
    "evaluation": {"sequential_order": ["Bears", "Birds"]},
    "logging": {"console_enabled": False, "file_enabled": False},
}


class CliRun(unittest.TestCase):
    """Base class: a temporary run directory with the tiny configuration."""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.config_file = self.path("run.json")
        with open(self.config_file, "w") as f:
            json.dump(TINY_CONFIG, f)

    def tearDown(self):
        reset_logger()
        shutil.rmtree(self.temp_dir)

    def path(self, name):
        return os.path.join(self.temp_dir, name)

    def cli(self, *argv, expect=EXIT_OK):
        with patch("sys.stdout", new_callable=io.StringIO) as out, patch("sys.stderr", new_callable=io.StringIO) as err:
            code = main(list(argv) + ["--config", self.config_file])
        reset_logger()
        self.assertEqual(code, expect, f"{argv[0]} exited {code}: {err.getvalue()}")
        return json.loads(out.getvalue()) if code == EXIT_OK else None


class TestFullRun(CliRun):
    """Test cases running every subcommand in order."""

    def test_every_subcommand(self):
        data, model = self.path("d.saea"), self.path("m.saem")

        summary = self.cli("gen-data", "--seed", "7", "--out", data)
        self.assertEqual(summary["samples"], 4 * 2 * 8)
        self.assertEqual(len(load_dataset(data)), 64)

        summary = self.cli("train", "--phase", "pipeline", "--data", data, "--out", model, "--seed", "7")
        for name in ("m.saem", "m.pretrained.saem", "m.assignment.json", "m.log.jsonl"):
            self.assertTrue(os.path.isfile(self.path(name)), name)
        ckpt = load_checkpoint(model)
        self.assertEqual((ckpt.params.n, ckpt.params.d, ckpt.params.k), (32, 16, 4))
        self.assertEqual(ckpt.meta["provenance"], ["unsupervised", "supervised"])
        self.assertEqual(ckpt.meta["config"]["model"]["n"], 32)
        with open(self.path("m.log.jsonl")) as f:
            records = [json.loads(line) for line in f if line.strip()]
        self.assertEqual(len(records), 6)
        assignment = load_assignment(self.path("m.assignment.json"))
        self.assertEqual(len(assignment), 6)
        self.assertTrue(assignment.is_injective())

        summary = self.cli("score", "--model", model, "--data", data, "--out", self.path("scores.json"))
        self.assertEqual(summary["concepts"], 6)
        for name in ("scores.json", "scores.scores.tsv", "scores.centralization.tsv"):
            self.assertTrue(os.path.isfile(self.path(name)), name)

        summary = self.cli("assign", "--model", model, "--data", data, "--out", self.path("assign.json"))
        self.assertEqual(summary["assigned"], 6)

        summary = self.cli(
            "steer", "--model", model, "--data", data, "--assignment", self.path("m.assignment.json"),
            "--multiplier", "-5", "--out", self.path("plan.json"),
        )
        self.assertEqual(summary["concepts"], 4)
        self.assertEqual(load_plan(self.path("plan.json")).multipliers(), {c: -5.0 for c in ("Architectures", "Bears", "Birds", "Butterfly")})

        summary = self.cli(
            "steer", "--model", model, "--data", data, "--assignment", self.path("m.assignment.json"),
            "--preset", "finetuned", "--concepts", "Bears,Birds", "--out", self.path("preset.json"),
        )
        self.assertEqual(load_plan(self.path("preset.json")).multipliers(), {"Bears": -5.0, "Birds": -5.0})

        summary = self.cli("sweep", "--model", model, "--data", data, "--plan", self.path("plan.json"), "--out", self.path("sweep.json"))
        self.assertEqual(summary["evaluations"], 8)
        report = load_report(self.path("sweep.json"))
        self.assertEqual(report["evaluations_per_concept"], 2)
        self.assertTrue(set(report["best"].values()) <= {-1.0, -5.0})
        self.assertTrue(os.path.isfile(self.path("sweep.plan.json")))

        summary = self.cli(
            "sweep", "--uniform", "--model", model, "--data", data, "--plan", self.path("plan.json"),
            "--out", self.path("uniform.json"),
        )
        self.assertEqual(summary["evaluations"], 8)
        with open(self.path("uniform.tsv")) as f:
            self.assertEqual(f.readline().strip().split("\t"), ["multiplier", "ua", "ira", "cra", "average"])

        summary = self.cli("eval", "--model", model, "--data", data, "--plan", self.path("sweep.plan.json"), "--out", self.path("eval.json"))
        self.assertEqual(summary["count"], 4)
        for r in load_report(self.path("eval.json"))["reports"]:
            for key in ("ua", "ira", "cra"):
                self.assertGreaterEqual(r[key], 0.0)
                self.assertLessEqual(r[key], 1.0)

        summary = self.cli("seq-eval", "--model", model, "--data", data, "--plan", self.path("plan.json"), "--out", self.path("seq.json"))
        self.assertEqual(len(load_report(self.path("seq.json"))["tasks"]), 2)

        summary = self.cli("inspect", model)
        self.assertEqual(summary["kind"], "SAEM")
        self.assertEqual(summary["header"]["n"], 32)
        self.assertNotIn("config", summary["header"])
        summary = self.cli("inspect", self.path("plan.json"))
        self.assertEqual(summary["kind"], "steering_plan")

    def test_phase_by_phase(self):
        data = self.path("d.saea")
        self.cli("gen-data", "--out", data)
        self.cli("train", "--phase", "unsup", "--data", data, "--out", self.path("pre.saem"))
        self.cli("train", "--phase", "sup", "--data", data, "--init", self.path("pre.saem"), "--out", self.path("sup.saem"))
        self.assertTrue(os.path.isfile(self.path("sup.assignment.json")))
        self.assertEqual(load_checkpoint(self.path("sup.saem")).meta["phase"], "supervised")
        # the supervised phase cannot start from nothing
        self.cli("train", "--phase", "sup", "--data", data, "--out", self.path("x.saem"), expect=EXIT_VALIDATION)

    def test_inspect_rejects_unknown_files(self):
        with open(self.path("notes.txt"), "w") as f:
            f.write("hello")
        self.cli("inspect", self.path("notes.txt"), expect=EXIT_VALIDATION)
        with open(self.path("bad.saem"), "wb") as f:
            f.write(b"SAEM\x01")
        self.cli("inspect", self.path("bad.saem"), expect=EXIT_VALIDATION)


class TestDeterminism(CliRun):
    """Test cases for seed-level reproducibility."""

    def test_identical_artifacts(self):
        blobs = []
        for run in ("a", "b"):
            os.makedirs(self.path(run))
            data, model = self.path(f"{run}/d.saea"), self.path(f"{run}/m.saem")
            self.cli("gen-data", "--seed", "7", "--out", data)
            self.cli("train", "--data", data, "--out", model, "--seed", "7")
            with open(data, "rb") as f, open(model, "rb") as g:
                blobs.append((f.read(), g.read()))
        self.assertEqual(blobs[0], blobs[1])

    def test_seed_changes_data(self):
        self.cli("gen-data", "--seed", "1", "--out", self.path("one.saea"))
        self.cli("gen-data", "--seed", "2", "--out", self.path("two.saea"))
        self.assertFalse(np.array_equal(load_dataset(self.path("one.saea")).X, load_dataset(self.path("two.saea")).X))


if __name__ == "__main__":
    unittest.main()
