"""End-to-end checks of the msub command line: exit codes, outputs, serve."""

import json
import os
import subprocess
import sys
import tempfile
import unittest
import urllib.request

MSUB = os.environ.get("MSUB_BIN", "msub")

TINY = [
    "projection.sample_counts=[256]",
    "projection.iters_per_stage=30",
    "geodesic.init_nodes=4",
    "geodesic.max_nodes=8",
    "geodesic.subdivide_every=10",
    "geodesic.final_iters=10",
    "fem.target_faces=60",
    "switchpoints.grid=3",
    "switchpoints.steps=12",
    "train.iters=30",
    "train.hidden=[16,16]",
    "deform.steps=10",
    "energy_report.paths=3",
    "energy_report.samples=8",
]


def sets(items):
    out = []
    for s in items:
        out += ["--set", s]
    return out


def msub(*args, check=None):
    res = subprocess.run([MSUB, *args], capture_output=True, text=True, timeout=300)
    if check is not None and res.returncode != check:
        raise AssertionError(f"msub {' '.join(args)} -> {res.returncode}\n{res.stdout}\n{res.stderr}")
    return res


class CliTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory(prefix="msub_cli_")
        cls.root = cls.tmp.name
        res = msub("synth", "--out", f"{cls.root}/synth", "--landmarks", "5", "--latent-dim", "4",
                   "--points", "64", "--seed", "2", check=0)
        cls.config = res.stdout.strip()
        cls.bundle = f"{cls.root}/bundle"
        msub("run", "--config", cls.config, "--out", cls.bundle, *sets(TINY), check=0)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_help_and_usage_errors(self):
        res = msub("--help", check=0)
        for cmd in ("project", "embed", "geodesics", "switchpoints", "train-map", "run", "deform",
                    "energy-report", "serve", "synth", "info"):
            self.assertIn(cmd, res.stdout)
        msub(check=2)
        msub("frobnicate", check=2)
        msub("synth", check=2)
        msub("synth", "--out", f"{self.root}/x", "--family", "nope", check=2)

    def test_synth_layout_and_params(self):
        res = msub("synth", "--out", f"{self.root}/sheet", "--family", "tanh_network", "--layout", "sheet",
                   "--param", "input_gain=2.5", "--landmarks", "4", "--points", "32", check=0)
        with open(res.stdout.strip()) as f:
            doc = json.load(f)
        self.assertEqual(doc["generator"]["params"], {"input_gain": 2.5})
        self.assertEqual(len(doc["landmarks"]), 4)
        msub("synth", "--out", f"{self.root}/x", "--layout", "ring", check=2)

    def test_info_lists_stages(self):
        info = json.loads(msub("info", "--bundle", self.bundle, check=0).stdout)
        self.assertEqual(info["stages"], ["project", "embed", "geodesics", "switchpoints", "train-map"])
        self.assertEqual(info["landmarks"], 5)
        self.assertIn("train-map", info["reports"])

    def test_missing_stage_and_bad_bundle(self):
        res = msub("embed", "--out", f"{self.root}/nothing", check=2)
        self.assertIn("missing-stage", res.stderr)
        self.assertIn("msub project", res.stderr)
        res = msub("info", "--bundle", f"{self.root}/nothing", check=2)
        self.assertIn("not-a-bundle", res.stderr)

    def test_bad_config_value(self):
        res = msub("run", "--config", self.config, "--out", f"{self.root}/bad", "--set", "fem.target_faces=0", check=2)
        self.assertIn("invalid-input", res.stderr)

    def test_diverged_training_exits_3(self):
        work = f"{self.root}/diverge"
        msub("run", "--config", self.config, "--out", work, *sets(TINY), check=0)
        res = msub("train-map", "--bundle", work, "--set", "train.optimizer.kind=sgd", "--set", "train.optimizer.lr=1e300",
                   check=3)
        self.assertIn("training-diverged", res.stderr)

    def test_rerun_stage_from_bundle_echo(self):
        work = f"{self.root}/rerun"
        msub("run", "--config", self.config, "--out", work, *sets(TINY), check=0)
        msub("switchpoints", "--bundle", work, check=0)
        info = json.loads(msub("info", "--bundle", work, check=0).stdout)
        self.assertEqual(info["stages"], ["project", "embed", "geodesics", "switchpoints"])

    def test_deform_outputs(self):
        frames = f"{self.root}/frames"
        manifest = self.manifest()
        p0 = manifest["landmarks"][0]["position"]
        p1 = manifest["landmarks"][1]["position"]
        mid = [(a + b) / 2 for a, b in zip(p0, p1)]
        path = f"{p0[0]},{p0[1]};{mid[0]},{mid[1]}"
        msub("deform", "--bundle", self.bundle, "--path", path, "--frames", frames, check=0)
        self.assertEqual(len([f for f in os.listdir(frames) if f.endswith(".obj")]), 11)
        msub("deform", "--bundle", self.bundle, "--path", path, "--frames", frames + "_s", "--format", "stream",
             check=0)
        with open(frames + "_s/frames.bin", "rb") as f:
            self.assertEqual(f.read(4), b"MSFR")
        res = msub("deform", "--bundle", self.bundle, "--path", f"{p0[0]},{p0[1]}", "--frames", frames, check=2)
        self.assertIn("zero-length trajectory", res.stderr)
        msub("deform", "--bundle", self.bundle, "--path", "1;2", "--frames", frames, check=2)
        msub("deform", "--bundle", self.bundle, "--path", path, "--landmark", "nobody", "--frames", frames, check=2)

    def test_energy_report(self):
        csv = f"{self.root}/report.csv"
        res = msub("energy-report", "--bundle", self.bundle, "--csv", csv, check=0)
        summary = json.loads(res.stdout)
        self.assertEqual(summary["paths"], 3)
        with open(csv) as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], "path,x0,y0,x1,y1,ours,z_linear,z_opt,ours_primal")
        self.assertEqual(len(lines), 4)
        res = msub("energy-report", "--bundle", self.bundle, "--set", "energy_report.samples=5", check=2)
        self.assertIn("geodesic.max_nodes", res.stderr)

    def test_standalone_project(self):
        out = f"{self.root}/z.bin"
        gen = json.dumps({"family": "bump_ellipsoid", "latent_dim": 4, "point_count": 64, "seed": 5})
        msub("project", "--mesh", f"{self.root}/synth/meshes/L0.obj", "--generator", gen, "--out", out,
             "--set", "sample_counts=[128]", "--set", "iters_per_stage=10", check=0)
        self.assertEqual(os.path.getsize(out), 8 + 4 * 8)
        msub("project", "--mesh", f"{self.root}/synth/meshes/L0.obj", "--out", out, check=2)

    def test_serve(self):
        proc = subprocess.Popen([MSUB, "serve", "--bundle", self.bundle, "--port", "0"], stdout=subprocess.PIPE,
                                stderr=subprocess.DEVNULL, text=True)
        with proc:
            try:
                line = proc.stdout.readline().strip()
                self.assertTrue(line.startswith("listening on http://127.0.0.1:"), line)
                url = line.split(" ")[-1]
                with urllib.request.urlopen(url + "/api/space", timeout=30) as r:
                    self.assertEqual(len(json.loads(r.read())["landmarks"]), 5)
            finally:
                proc.terminate()
        half = f"{self.root}/half"
        msub("project", "--config", self.config, "--out", half, *sets(TINY), check=0)
        res = msub("serve", "--bundle", half, "--port", "0", check=2)
        self.assertIn("not-ready", res.stderr)

    def manifest(self):
        with open(f"{self.bundle}/manifest.json") as f:
            return json.load(f)


if __name__ == "__main__":
    if len(sys.argv) > 1 and not sys.argv[1].startswith("-"):
        MSUB = sys.argv.pop(1)
    unittest.main(verbosity=2)
