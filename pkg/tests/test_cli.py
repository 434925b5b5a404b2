import json

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import make_synthetic_digits
from poisonlens.cli import ExperimentConfig, main, resolve_config, run
from poisonlens.exceptions import InvalidConfig
from test_io import write_idx_images, write_idx_labels


@pytest.fixture
def synthetic_idx(tmp_path):
    """MNIST-format files from the synthetic digit generator (16px, 4 classes)."""
    paths = {}
    for split, noise_seed, n in (("train", 1, 150), ("t10k", 2, 60)):
        data = make_synthetic_digits(n_per_class=n, n_classes=4, size=16,
                                     template_seed=0, noise_seed=noise_seed)
        images = np.round(data.X.reshape(-1, 16, 16) * 255).astype(np.uint8)
        img_path = tmp_path / f"{split}-images-idx3-ubyte"
        lbl_path = tmp_path / f"{split}-labels-idx1-ubyte"
        write_idx_images(img_path, images)
        write_idx_labels(lbl_path, data.y.astype(np.uint8))
        paths[f"{split}_images"] = str(img_path)
        paths[f"{split}_labels"] = str(lbl_path)
    return paths


def mnist_overrides(paths, out, thetas="[0.0,0.05,0.3]"):
    return [
        "--set", f"train_images={paths['train_images']}",
        "--set", f"train_labels={paths['train_labels']}",
        "--set", f"test_images={paths['t10k_images']}",
        "--set", f"test_labels={paths['t10k_labels']}",
        "--set", "size_img=16",
        "--set", "side=3",
        "--set", f"theta_grid={thetas}",
        "--output-dir", str(out),
    ]


class TestResolveConfig:
    def test_defaults_file_flags_precedence(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({
            "experiment": "cluster_sweep",
            "parameters": {"n_clean": 11, "p": 3},
            "output_dir": str(tmp_path / "from_file"),
        }))
        cfg = resolve_config("cluster_sweep", str(cfg_file),
                             ("p=5", 'theta_grid=[0.0,0.1]'), None)
        assert cfg.parameters["n_clean"] == 11  # from file
        assert cfg.parameters["p"] == 5  # flag wins
        assert cfg.parameters["theta_grid"] == [0.0, 0.1]
        assert cfg.output_dir == tmp_path / "from_file"

    def test_wrong_experiment_in_file(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"experiment": "fisher_flow"}))
        with pytest.raises(InvalidConfig):
            resolve_config("cluster_sweep", str(cfg_file), (), None)

    def test_unknown_experiment(self):
        with pytest.raises(InvalidConfig):
            ExperimentConfig(experiment="nope")

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("POISONLENS_OUTPUT_DIR", str(tmp_path / "envdir"))
        cfg = ExperimentConfig(experiment="cluster_sweep")
        assert cfg.output_dir == tmp_path / "envdir"


class TestRun:
    def test_cluster_sweep_grid_cardinality(self, tmp_path):
        cfg = ExperimentConfig(
            "cluster_sweep",
            {"theta_grid": [0.0, 0.01, 0.02, 0.03], "kappa_grid": [0.0, 1.0],
             "n_clean": 20, "p": 3},
            tmp_path,
        )
        table = run(cfg)
        assert len(table.rows) == 8
        csv_text = (tmp_path / "cluster_sweep.csv").read_text()
        assert csv_text.count("\n") == 9  # header + 8 rows

    def test_byte_identical_rerun(self, tmp_path):
        params = {"theta_grid": [0.0, 0.1], "kappa_grid": [0.0],
                  "n_clean": 15, "p": 2, "seed": 3}
        run(ExperimentConfig("cluster_sweep", dict(params), tmp_path / "a"))
        run(ExperimentConfig("cluster_sweep", dict(params), tmp_path / "b"))
        csv_a = (tmp_path / "a" / "cluster_sweep.csv").read_bytes()
        csv_b = (tmp_path / "b" / "cluster_sweep.csv").read_bytes()
        assert csv_a == csv_b

    def test_sidecar_hash_matches_rows(self, tmp_path):
        cfg = ExperimentConfig(
            "cluster_sweep",
            {"theta_grid": [0.05], "kappa_grid": [0.0], "n_clean": 12, "p": 2},
            tmp_path,
        )
        run(cfg)
        sidecar = json.loads((tmp_path / "cluster_sweep.meta.json").read_text())
        csv_lines = (tmp_path / "cluster_sweep.csv").read_text().splitlines()
        header = csv_lines[0].split(",")
        hash_col = header.index("config_hash")
        for line in csv_lines[1:]:
            assert line.split(",")[hash_col] == sidecar["config_hash"]
        assert sidecar["experiment"] == "cluster_sweep"
        assert sidecar["n_rows"] == 1

    def test_unknown_parameter_rejected(self, tmp_path):
        with pytest.raises(InvalidConfig):
            run(ExperimentConfig("cluster_sweep", {"bogus": 1}, tmp_path))

    def test_writes_only_inside_output_dir(self, tmp_path, monkeypatch):
        out = tmp_path / "only_here"
        monkeypatch.chdir(tmp_path)
        run(ExperimentConfig(
            "filter_probe", {"kappa_grid": [0.0, 1.0], "n": 64}, out,
        ))
        created = {p.relative_to(tmp_path).parts[0]
                   for p in tmp_path.rglob("*") if p.is_file()}
        assert created == {"only_here"}


class TestCliCommands:
    def test_verify_all_passes(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, [
            "verify-all", "--seed", "5", "--set", "n_configs=5",
            "--output-dir", str(tmp_path),
        ])
        assert result.exit_code == 0, result.output
        assert result.output.strip().endswith("PASS")
        assert "gain_law: PASS" in result.output

    def test_mnist_stepwise_end_to_end(self, tmp_path, synthetic_idx):
        out = tmp_path / "results"
        runner = CliRunner()
        result = runner.invoke(
            main, ["mnist-stepwise"] + mnist_overrides(synthetic_idx, out)
        )
        assert result.exit_code == 0, result.output
        lines = (out / "mnist_stepwise.csv").read_text().splitlines()
        header = lines[0].split(",")
        rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
        assert len(rows) == 3
        by_theta = {float(r["theta"]): r for r in rows}
        # Clean model is accurate and the trigger does nothing at theta 0.
        assert float(by_theta[0.0]["clean_acc"]) >= 0.95
        assert float(by_theta[0.0]["asr"]) <= 0.25
        # Poisoning drives the attack success up while accuracy barely moves.
        assert float(by_theta[0.3]["asr"]) >= 0.9
        assert float(by_theta[0.3]["clean_acc"]) >= 0.9
        # Target-class coefficients align with the trigger pattern.
        assert float(by_theta[0.3]["overlap_sq_0"]) >= \
            10 * float(by_theta[0.3]["overlap_sq_1"])

    def test_mnist_stepwise_weight_panels(self, tmp_path, synthetic_idx):
        out = tmp_path / "results"
        runner = CliRunner()
        result = runner.invoke(
            main,
            ["mnist-stepwise"] + mnist_overrides(synthetic_idx, out,
                                                 thetas="[0.2]"),
        )
        assert result.exit_code == 0, result.output
        tag = repr(0.2)
        step_minus_full = np.loadtxt(
            out / f"weights_theta{tag}_step_minus_full.csv", delimiter=","
        )
        full_minus_base = np.loadtxt(
            out / f"weights_theta{tag}_full_minus_base.csv", delimiter=","
        )
        assert step_minus_full.shape == (16, 16)
        # The stepwise update reproduces the full refit almost exactly, so
        # this panel is numerical noise next to the full-base difference.
        assert np.abs(step_minus_full).max() <= \
            1e-6 * np.abs(full_minus_base).max()

    def test_fisher_flow_command(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, [
            "fisher-flow", "--set", "T=0.2", "--set", "record_every=10",
            "--output-dir", str(tmp_path),
        ])
        assert result.exit_code == 0, result.output
        lines = (tmp_path / "fisher_flow.csv").read_text().splitlines()
        assert lines[0] == "config_hash,t,probe,energy,bound"
        assert len(lines) > 10

    def test_filter_probe_writes_response_curves(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, [
            "filter-probe", "--set", "n=64",
            "--set", "kappa_grid=[0.0,1.0]",
            "--output-dir", str(tmp_path),
        ])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "filter_probe.csv").exists()
        curves = (tmp_path / "response_curves.csv").read_text().splitlines()
        assert curves[0] == "kappa,abs_omega,response"
        assert len(curves) > 30

    def test_bad_override_exits_nonzero(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, [
            "cluster-sweep", "--set", "not_a_param=3",
            "--output-dir", str(tmp_path),
        ])
        assert result.exit_code == 2
        assert "error" in result.output

    def test_config_file_roundtrip(self, tmp_path, synthetic_idx):
        cfg = {
            "experiment": "mnist_stepwise",
            "parameters": {
                "train_images": synthetic_idx["train_images"],
                "train_labels": synthetic_idx["train_labels"],
                "test_images": synthetic_idx["t10k_images"],
                "test_labels": synthetic_idx["t10k_labels"],
                "size_img": 16,
                "side": 3,
                "theta_grid": [0.1],
                "export_weights": False,
            },
            "output_dir": str(tmp_path / "out"),
        }
        cfg_path = tmp_path / "experiment.json"
        cfg_path.write_text(json.dumps(cfg))
        runner = CliRunner()
        result = runner.invoke(main, ["mnist-stepwise", "--config",
                                      str(cfg_path)])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "out" / "mnist_stepwise.csv").exists()
