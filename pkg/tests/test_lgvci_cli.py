#!/usr/bin/env python3

import concurrent.futures
import json
import os
import shutil
import sys
import tempfile
import unittest
from unittest.mock import patch

# Add the parent directory to the path so we can import modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import lgvci_cli
from lgvci_verify import PropertyResult

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "..", "scenarios")


def printed(mock_print):
    return "\n".join(" ".join(str(a) for a in call.args) for call in mock_print.call_args_list)


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.out_dir = os.path.join(self.temp_dir, "out")
        patcher = patch("lgvci_cli.setup_logging")
        patcher.start()
        self.addCleanup(patcher.stop)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def write_scenario(self, base, name, **changes):
        with open(os.path.join(SCENARIO_DIR, base), encoding="utf-8") as f:
            doc = json.load(f)
        doc["name"] = name
        for key, value in changes.items():
            section, _, field = key.partition("__")
            if field:
                doc[section][field] = value
            else:
                doc[section] = value
        path = os.path.join(self.temp_dir, f"{name}.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f)
        return path

    def main(self, *argv):
        with patch("builtins.print") as mock_print, self.assertRaises(SystemExit) as cm:
            lgvci_cli.main(list(argv))
        return cm.exception.code, printed(mock_print)


class TestRunCommand(CliTestCase):
    """lgvci_cli.py run"""

    def test_single_scenario_writes_outputs(self):
        path = self.write_scenario("sphere_drop.json", "drop", sim={"h": 0.01, "M": 80})
        code, output = self.main("run", "--scenario", path, "--out", self.out_dir)
        self.assertEqual(code, 0)
        self.assertIn("drop: completed, 1 impacts", output)
        target = os.path.join(self.out_dir, "drop")
        self.assertEqual(
            sorted(os.listdir(target)), ["energy.svg", "events.csv", "summary.json", "trajectory.csv"]
        )
        with open(os.path.join(target, "summary.json"), encoding="utf-8") as f:
            self.assertEqual(json.load(f)["events"], 1)

    def test_repeated_runs_write_identical_files(self):
        path = self.write_scenario("case1.json", "case1", sim={"h": 0.01, "M": 400})
        contents = []
        for attempt in ("first", "second"):
            result = lgvci_cli.run_scenario_file(path, os.path.join(self.temp_dir, attempt))
            self.assertGreater(result["summary"]["events"], 0)
            files = {}
            for name in ("trajectory.csv", "events.csv", "energy.svg"):
                with open(os.path.join(result["out"], name), "rb") as f:
                    files[name] = f.read()
            contents.append(files)
        self.assertEqual(contents[0], contents[1])

    def test_zeno_guard_exit_code(self):
        path = self.write_scenario("tumbling_rod.json", "rod", sim__zeno_j_max=1)
        code, output = self.main("run", "--scenario", path, "--out", self.out_dir)
        self.assertEqual(code, lgvci_cli.EXIT_ZENO)
        self.assertIn("zeno_guard", output)

    def test_inadmissible_initial_state(self):
        path = self.write_scenario("sphere_drop.json", "sunk", initial__x=[0.0, 0.0, 0.5])
        code, output = self.main("run", "--scenario", path, "--out", self.out_dir)
        self.assertEqual(code, lgvci_cli.EXIT_ERROR)
        self.assertIn("LGVCI Error:", output)
        self.assertFalse(os.path.exists(os.path.join(self.out_dir, "sunk")))

    def test_missing_file(self):
        code, _ = self.main("run", "--scenario", os.path.join(self.temp_dir, "absent.json"), "--out", self.out_dir)
        self.assertEqual(code, lgvci_cli.EXIT_ERROR)

    @patch("lgvci_cli.concurrent.futures.ProcessPoolExecutor", concurrent.futures.ThreadPoolExecutor)
    def test_batch_reports_worst_exit(self):
        good = self.write_scenario("sphere_drop.json", "good", sim={"h": 0.01, "M": 20})
        zeno = self.write_scenario("tumbling_rod.json", "rod", sim__zeno_j_max=1)
        code, output = self.main("run", "--scenario", good, "--scenario", zeno, "--out", self.out_dir)
        self.assertEqual(code, lgvci_cli.EXIT_ZENO)
        self.assertIn("good: completed", output)
        self.assertTrue(os.path.isdir(os.path.join(self.out_dir, "good")))
        self.assertTrue(os.path.isdir(os.path.join(self.out_dir, "rod")))

    @patch("lgvci_cli.concurrent.futures.ProcessPoolExecutor", concurrent.futures.ThreadPoolExecutor)
    def test_batch_failure_wins(self):
        good = self.write_scenario("sphere_drop.json", "good", sim={"h": 0.01, "M": 20})
        bad = self.write_scenario("sphere_drop.json", "bad", schema_version=9)
        code, output = self.main("run", "--scenario", good, "--scenario", bad, "--out", self.out_dir)
        self.assertEqual(code, lgvci_cli.EXIT_ERROR)
        self.assertIn("schema_version", output)

    def test_worst_exit_priority(self):
        self.assertEqual(lgvci_cli._worst_exit([0, 3, 4]), 4)
        self.assertEqual(lgvci_cli._worst_exit([3, 1, 4]), 1)
        self.assertEqual(lgvci_cli._worst_exit([0, 0]), 0)


class TestOtherCommands(CliTestCase):
    def test_verify_passes(self):
        rows = {"geometry": [PropertyResult("skew", True, 0.0, 0.0)]}
        with patch("lgvci_cli.run_suites", return_value=rows) as mock_run:
            code, output = self.main("verify", "--suite", "geometry", "--seed", "3")
        self.assertEqual(code, 0)
        mock_run.assert_called_once_with(["geometry"], 3)
        self.assertIn("[PASS] skew", output)

    def test_verify_failure_exit_code(self):
        rows = {"solver": [PropertyResult("residual", False, 1e-3, 1e-13)]}
        with patch("lgvci_cli.run_suites", return_value=rows):
            code, output = self.main("verify", "--suite", "solver")
        self.assertEqual(code, lgvci_cli.EXIT_VERIFY)
        self.assertIn("1 property failed", output)

    def test_unknown_suite_is_usage_error(self):
        with patch("sys.stderr"), self.assertRaises(SystemExit) as cm:
            lgvci_cli.main(["verify", "--suite", "nope"])
        self.assertEqual(cm.exception.code, 2)

    def test_inertia(self):
        code, output = self.main("inertia", "--scenario", os.path.join(SCENARIO_DIR, "case1.json"))
        self.assertEqual(code, 0)
        self.assertIn("inertia from ellipsoid", output)
        self.assertIn("5.0000000000", output)
        self.assertIn("0.8000000000", output)

    def test_plot_from_run_output(self):
        path = self.write_scenario("sphere_drop.json", "drop", sim={"h": 0.01, "M": 80})
        self.main("run", "--scenario", path, "--out", self.out_dir)
        traj = os.path.join(self.out_dir, "drop", "trajectory.csv")
        svg = os.path.join(self.temp_dir, "replot.svg")
        code, _ = self.main("plot", "--traj", traj, "--out", svg)
        self.assertEqual(code, 0)
        with open(svg, encoding="utf-8") as f:
            self.assertIn("<svg", f.read())

        code, _ = self.main("plot", "--traj", traj, "--out", svg, "--scenario", path)
        self.assertEqual(code, 0)

    def test_plot_without_summary(self):
        code, output = self.main(
            "plot", "--traj", os.path.join(self.temp_dir, "missing.csv"), "--out", os.path.join(self.temp_dir, "x.svg")
        )
        self.assertEqual(code, lgvci_cli.EXIT_ERROR)
        self.assertIn("LGVCI Error:", output)

    def test_convergence_needs_three_steps(self):
        code, output = self.main("convergence", "--scenario", os.path.join(SCENARIO_DIR, "case1.json"), "--h", "0.01")
        self.assertEqual(code, lgvci_cli.EXIT_USAGE)
        self.assertIn("at least three", output)

    def test_convergence(self):
        code, output = self.main(
            "convergence",
            "--scenario",
            os.path.join(SCENARIO_DIR, "case1.json"),
            "--h",
            "0.1,0.05,0.025",
            "--substeps",
            "1000",
        )
        self.assertEqual(code, 0)
        self.assertIn("Fitted order", output)

    def test_unexpected_error_is_reported(self):
        with patch("lgvci_cli.run_suites", side_effect=RuntimeError("boom")):
            code, output = self.main("verify")
        self.assertEqual(code, lgvci_cli.EXIT_ERROR)
        self.assertIn("LGVCI Error: boom", output)


if __name__ == "__main__":
    unittest.main()
