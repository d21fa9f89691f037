import json
import os

import numpy as np
import pytest

from transduct.cli import main
from transduct.config import PRESETS, load_config, parse_config
from transduct.data import load_run, load_table
from transduct.errors import ConfigError


def write_config(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    return str(path)


def base_run_config(**overrides):
    payload = {
        "domain": {"source": "synthetic",
                   "kernel": {"family": "gaussian", "lengthscale": 0.3},
                   "layout": {"kind": "uniform", "dim": 2, "s_count": 25,
                              "a_count": 5, "a_box": [[0.6, 1.0], [0.6, 1.0]]}},
        "policies": ["itl", "random"],
        "rounds": 3,
        "seeds": [0, 1],
        "hyper": {"b": 2, "m": 3, "rho": 1.0, "k": 20},
    }
    payload.update(overrides)
    return payload


def grid_theory_config(**overrides):
    payload = {
        "domain": {"source": "synthetic",
                   "kernel": {"family": "gaussian", "lengthscale": 0.6},
                   "layout": {"kind": "grid", "s_count": 3, "step": 2.0,
                              "a_extra": 2, "include_s_in_a": True}},
        "rounds": 5,
        "seeds": [0],
        "hyper": {"b": 2, "rho": 0.5},
        "epsilon": 0.4,
    }
    payload.update(overrides)
    return payload


class TestPresets:
    def test_table_values(self):
        assert PRESETS["mnist-like"] == {"b": 1, "m": 3, "M": 30, "rho": 0.01,
                                         "k": 1000}
        assert PRESETS["cifar-like"] == {"b": 10, "m": 10, "M": 100, "rho": 1.0,
                                         "k": 1000}

    def test_preset_feeds_hyper(self, tmp_path):
        cfg = base_run_config()
        del cfg["hyper"]
        path = write_config(tmp_path / "c.json", cfg)
        config = load_config(path, preset="mnist-like")
        assert config.hyper["rho"] == 0.01 and config.hyper["b"] == 1


class TestConfigValidation:
    def test_rejects_unknown_rule(self):
        with pytest.raises(ConfigError, match="policies"):
            parse_config(base_run_config(policies=["itll"]))

    def test_rejects_missing_domain(self):
        cfg = base_run_config()
        del cfg["domain"]
        with pytest.raises(ConfigError, match="domain"):
            parse_config(cfg)

    def test_rejects_bad_rho(self):
        with pytest.raises(ConfigError, match="rho"):
            parse_config(base_run_config(hyper={"rho": 0.0}))

    def test_rejects_empty_seeds(self):
        with pytest.raises(ConfigError, match="seeds"):
            parse_config(base_run_config(seeds=[]))


class TestRunCommand:
    def test_writes_records_and_metrics(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", base_run_config())
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        header, rows = load_table(str(out / "metrics.tsv"))
        assert header[0] == "policy"
        policies = {row[0] for row in rows}
        assert policies == {"00-itl", "01-random"}
        record = load_run(str(out / "records" / "00-itl_s0.jsonl"))
        assert [e.round for e in record.rounds] == [0, 1, 2, 3]

    def test_zero_rounds_header_only(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", base_run_config(rounds=0))
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        _, rows = load_table(str(out / "metrics.tsv"))
        assert all(row[1] == 0 for row in rows)

    def test_byte_identical_across_runs(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", base_run_config())
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["run", "--config", cfg, "--out", str(out)]) == 0
            outs.append(out)
        for rel in ["metrics.tsv", "metrics_raw.tsv",
                    "records/00-itl_s0.jsonl", "records/01-random_s1.jsonl"]:
            assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()

    def test_jobs_flag_keeps_output_identical(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", base_run_config())
        serial, parallel = tmp_path / "s", tmp_path / "p"
        assert main(["run", "--config", cfg, "--out", str(serial)]) == 0
        assert main(["run", "--config", cfg, "--out", str(parallel),
                     "--jobs", "4"]) == 0
        assert (serial / "metrics.tsv").read_bytes() == \
            (parallel / "metrics.tsv").read_bytes()

    def test_seed_override(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", base_run_config())
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out),
                     "--seeds", "7"]) == 0
        assert sorted(os.listdir(out / "records")) == \
            ["00-itl_s7.jsonl", "01-random_s7.jsonl"]

    def test_stderr_recomputable_from_raw_rows(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", base_run_config(seeds=[0, 1, 2]))
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        raw_header, raw_rows = load_table(str(out / "metrics_raw.tsv"))
        agg_header, agg_rows = load_table(str(out / "metrics.tsv"))
        mv = raw_header.index("mean_variance")
        for agg in agg_rows:
            policy, round_no = agg[0], agg[1]
            values = [r[mv] for r in raw_rows if r[0] == policy and r[2] == round_no]
            expected = np.std(values, ddof=1) / np.sqrt(len(values))
            got = agg[agg_header.index("mean_variance_stderr")]
            np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_config_error_exit_code(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", base_run_config(policies=["nope"]))
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_missing_config_exit_code(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "missing.json"),
                     "--out", str(tmp_path / "o")]) == 2


class TestTheoryCommand:
    def test_all_checks_pass_on_grid(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "t.json", grid_theory_config())
        out = tmp_path / "out"
        assert main(["theory", "--config", cfg, "--out", str(out)]) == 0
        header, rows = load_table(str(out / "theory_diagnostics.tsv"))
        statuses = {row[0]: row[1] for row in rows}
        assert statuses["step-gain-bound"] == "pass"
        assert statuses["within-sample-bound"] == "pass"
        assert statuses["explicit-variance-bound"] == "pass"
        assert statuses["submodularity-ratio"] == "pass"
        assert (out / "theory_rows.json").exists()

    def test_requires_sample_inside_targets(self, tmp_path):
        cfg = grid_theory_config()
        cfg["domain"]["layout"]["include_s_in_a"] = False
        path = write_config(tmp_path / "t.json", cfg)
        assert main(["theory", "--config", path, "--out", str(tmp_path / "o")]) == 2


class TestMarkovCommand:
    def test_boundary_for_extrapolation_point(self, tmp_path):
        cfg = write_config(tmp_path / "t.json", grid_theory_config())
        out = tmp_path / "out"
        assert main(["markov", "--config", cfg, "--out", str(out),
                     "--x", "3", "--epsilon", "0.4"]) == 0
        payload = json.loads((out / "markov.json").read_text())
        assert payload["verified"] is True
        assert len(payload["members"]) <= payload["size_bound"]

    def test_budget_exit_code(self, tmp_path):
        cfg = write_config(tmp_path / "t.json", grid_theory_config())
        assert main(["markov", "--config", cfg, "--out", str(tmp_path / "o"),
                     "--x", "3", "--epsilon", "1e-9"]) == 4


class TestAblateCommand:
    def test_rho_axis_table(self, tmp_path):
        cfg = base_run_config(policies=["itl"], seeds=[0],
                              grid={"rho": [0.0001, 0.01, 1, 100]})
        path = write_config(tmp_path / "c.json", cfg)
        out = tmp_path / "out"
        assert main(["ablate", "--config", path, "--out", str(out)]) == 0
        header, rows = load_table(str(out / "ablation.tsv"))
        assert header[0] == "rho"
        assert [row[0] for row in rows] == [0.0001, 0.01, 1, 100]

    def test_batch_mode_contrast(self, tmp_path):
        cfg = base_run_config(policies=["itl"], seeds=[0, 1],
                              grid={"batch_mode": ["bace", "topb"]})
        path = write_config(tmp_path / "c.json", cfg)
        out = tmp_path / "out"
        assert main(["ablate", "--config", path, "--out", str(out)]) == 0
        _, rows = load_table(str(out / "ablation.tsv"))
        assert [row[0] for row in rows] == ["bace", "topb"]

    def test_single_cell_grid(self, tmp_path):
        cfg = base_run_config(policies=["itl"], seeds=[0], grid={"m": [2]})
        path = write_config(tmp_path / "c.json", cfg)
        out = tmp_path / "out"
        assert main(["ablate", "--config", path, "--out", str(out)]) == 0
        _, rows = load_table(str(out / "ablation.tsv"))
        assert len(rows) == 1

    def test_oversized_grid_refused(self, tmp_path):
        cfg = base_run_config(policies=["itl"],
                              seeds=list(range(60)),
                              grid={"rho": [0.1, 1.0], "k": list(range(1, 12))})
        path = write_config(tmp_path / "c.json", cfg)
        assert main(["ablate", "--config", path, "--out", str(tmp_path / "o")]) == 4


class TestDomainBuilders:
    def test_uniform_layout_disjoint_ids(self, tmp_path):
        config = parse_config(base_run_config())
        from transduct.config import build_domain

        domain = build_domain(config, seed=0)
        assert set(domain.sample_ids).isdisjoint(domain.target_ids)
        assert set(domain.relevant) <= set(domain.sample_ids)
        assert domain.truth is not None

    def test_embedding_domain(self, tmp_path):
        emb = tmp_path / "emb.txt"
        emb.write_text("p=2 n=4\n0,1.0,0.0\n1,0.9,0.1\n2,0.0,1.0\n3,0.1,0.9\n")
        payload = {
            "domain": {"source": "embeddings", "path": str(emb),
                       "s": [0, 1], "a": [2, 3]},
            "policies": ["ctl"],
            "rounds": 1,
            "seeds": [0],
            "hyper": {"b": 1, "rho": 0.5},
        }
        config = parse_config(payload)
        from transduct.config import build_domain

        domain = build_domain(config, seed=0)
        assert domain.sample_ids == (0, 1)
        assert domain.prior.gram.size == 4

    def test_env_log_level(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TRANSDUCT_LOG", "debug")
        cfg = write_config(tmp_path / "c.json", base_run_config(rounds=1, seeds=[0]))
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
