#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""End-to-end checks of the mtlqe command line (exit codes, files, schema)."""

import csv
import hashlib
import json
import os
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

import jsonschema

BINARY = Path(sys.argv.pop(1)).resolve()
SCHEMA = json.loads(Path(sys.argv.pop(1)).read_text())

TINY = {
    "seed": 5,
    "epochs": 2,
    "dataset": {"synthetic": {"n_instances": 60, "vocab_size": 30}},
    "model": {"d_model": 8, "n_layers": 1, "max_len": 40},
}


def run(*args, env=None, cwd=None):
    full_env = dict(os.environ)
    full_env.pop("MTLQE_OUT_DIR", None)
    full_env.update(env or {})
    return subprocess.run([str(BINARY), *map(str, args)], capture_output=True, text=True,
                          env=full_env, cwd=cwd)


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class CliTest(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.config = self.tmp / "tiny.json"
        self.config.write_text(json.dumps(TINY))

    def tearDown(self):
        self._tmp.cleanup()

    def write_jsonl(self, name, records):
        path = self.tmp / name
        path.write_text("".join(json.dumps(r) + "\n" for r in records))
        return path

    # generate

    def test_generate_writes_requested_count(self):
        out = self.tmp / "c.jsonl"
        r = run("generate", "--set", "n_instances=100", "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(len(out.read_text().splitlines()), 100)
        self.assertIn("instances: 100", r.stdout)

    def test_generate_is_reproducible(self):
        a, b = self.tmp / "a.jsonl", self.tmp / "b.jsonl"
        for path in (a, b):
            self.assertEqual(run("generate", "--seed", 9, "--set", "n_instances=50", "--out", path).returncode, 0)
        self.assertEqual(sha(a), sha(b))

    def test_generate_zero_rates_summary(self):
        out = self.tmp / "z.jsonl"
        r = run("generate", "--set", "n_instances=40", "--set", "minor_rate=0",
                "--set", "major_rate=0", "--set", "critical_rate=0", "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        hist = r.stdout.split("qe_score histogram:")[1].split()
        self.assertEqual(hist[:2], ["0", "40"])
        self.assertTrue(all(json.loads(l)["qe_score"] == 0 for l in out.read_text().splitlines()))

    def test_generate_honours_env_out_dir(self):
        r = run("generate", "--set", "n_instances=20", env={"MTLQE_OUT_DIR": str(self.tmp / "envout")})
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertTrue((self.tmp / "envout" / "synthetic.jsonl").exists())

    # prepare

    def test_prepare_derives_fields(self):
        raw = self.write_jsonl("raw.jsonl", [
            {"src_tokens": ["a", "b"], "tgt_tokens": ["x", "y"], "errors": [], "emotion": "joy"},
            {"src_tokens": ["a"], "tgt_tokens": ["x", "y", "z"], "emotion": "fear",
             "errors": [{"severity": "critical", "side": "target", "start": 1, "end": 2}]},
        ])
        out = self.tmp / "prepared.jsonl"
        r = run("prepare", raw, "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        recs = [json.loads(l) for l in out.read_text().splitlines()]
        self.assertEqual(recs[0]["qe_score"], 0)
        self.assertEqual(recs[0]["src_labels"] + recs[0]["tgt_labels"], ["OK"] * 4)
        self.assertEqual(recs[1]["qe_score"], 10)
        self.assertEqual(recs[1]["tgt_labels"], ["OK", "BAD", "OK"])

    def test_prepare_malformed_severity_is_validation_error(self):
        raw = self.write_jsonl("bad.jsonl", [
            {"src_tokens": ["a"], "tgt_tokens": ["x"], "errors": [], "emotion": "joy"},
            {"src_tokens": ["a"], "tgt_tokens": ["x"], "emotion": "joy",
             "errors": [{"severity": "catastrophic", "side": "target", "start": 0, "end": 1}]},
        ])
        r = run("prepare", raw, "--out", self.tmp / "o.jsonl")
        self.assertEqual(r.returncode, 2)
        self.assertIn("line 2", r.stderr)

    def test_prepare_missing_file_is_runtime_error(self):
        r = run("prepare", self.tmp / "nope.jsonl", "--out", self.tmp / "o.jsonl")
        self.assertEqual(r.returncode, 1, r.stderr)

    # train / evaluate

    def test_train_single_task_report(self):
        out = self.tmp / "single"
        r = run("train", "--config", self.config, "--tasks", "sentence", "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        report = json.loads((out / "report.json").read_text())
        jsonschema.validate(report, SCHEMA)
        self.assertEqual(list(report["test_metrics"]), ["sentence"])
        self.assertIn("sentence spearman", r.stdout)

    def test_train_report_is_byte_identical(self):
        a, b = self.tmp / "a", self.tmp / "b"
        for out in (a, b):
            r = run("train", "--config", self.config, "--aggregator", "nash", "--tasks",
                    "sentence,word,emotion", "--out", out)
            self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(sha(a / "report.json"), sha(b / "report.json"))
        jsonschema.validate(json.loads((a / "report.json").read_text()), SCHEMA)

    def test_train_flags_and_overrides_apply(self):
        out = self.tmp / "o"
        r = run("train", "--config", self.config, "--epochs", 1, "--seed", 11,
                "--set", "optimizer.base_lr=0.002", "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        cfg = json.loads((out / "report.json").read_text())["config"]
        self.assertEqual((cfg["epochs"], cfg["seed"], cfg["optimizer"]["base_lr"]), (1, 11, 0.002))

    def test_train_rejects_bad_config_before_training(self):
        for args in (["--set", "batch_size=0"], ["--aggregator", "pcgrad"],
                     ["--tasks", "sentence,colour"], ["--set", "model.widht=3"]):
            r = run("train", "--config", self.config, "--out", self.tmp / "x", *args)
            self.assertEqual(r.returncode, 2, (args, r.stderr))
            self.assertFalse((self.tmp / "x" / "report.json").exists())

    def test_train_on_dataset_file_then_evaluate(self):
        data = self.tmp / "d.jsonl"
        self.assertEqual(run("generate", "--set", "n_instances=60", "--set", "vocab_size=30",
                             "--out", data).returncode, 0)
        out = self.tmp / "fromfile"
        r = run("train", "--config", self.config, "--set", f"dataset.path={data}", "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        report = json.loads((out / "report.json").read_text())
        self.assertEqual(report["dataset"]["source"], "file")
        r = run("evaluate", "--checkpoint", out / "checkpoint.json", "--data", data)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertIn("spearman", json.loads(r.stdout)["sentence"])

    # compare

    def test_compare_two_aggregators(self):
        out = self.tmp / "cmp"
        r = run("compare", "--config", self.config, "--aggregators", "linear,nash", "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        rows = list(csv.DictReader((out / "comparison.csv").open()))
        self.assertEqual([row["aggregator"] for row in rows], ["linear", "nash"])
        for row in rows:
            self.assertNotEqual(row["alpha_word"], "")
            self.assertEqual(row["alpha_emotion"], "")

    def test_compare_duplicate_rows_identical(self):
        out = self.tmp / "dup"
        r = run("compare", "--config", self.config, "--aggregators", "aligned,aligned", "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        lines = (out / "comparison.csv").read_text().splitlines()
        self.assertEqual(lines[1], lines[2])

    def test_compare_needs_two(self):
        r = run("compare", "--config", self.config, "--aggregators", "nash", "--out", self.tmp / "c")
        self.assertEqual(r.returncode, 2)

    def test_compare_failed_run_flags_nonzero(self):
        cfg = dict(TINY, dataset={"synthetic": {"n_instances": 60, "vocab_size": 30,
                                                "max_length": 30}})
        cfg["model"] = dict(TINY["model"], max_len=20)
        path = self.tmp / "toolong.json"
        path.write_text(json.dumps(cfg))
        r = run("compare", "--config", path, "--aggregators", "linear,nash", "--out", self.tmp / "f")
        self.assertNotEqual(r.returncode, 0)
        self.assertIn("failed", (self.tmp / "f" / "comparison.csv").read_text())

    def test_unknown_subcommand(self):
        self.assertEqual(run("frobnicate").returncode, 2)


if __name__ == "__main__":
    unittest.main(verbosity=2)
