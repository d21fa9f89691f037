import numpy as np
import pytest

from transduct import (
    DataError,
    InputError,
    KernelSpec,
    NoiseModel,
    ParseError,
    Point,
    RoundEntry,
    RunRecord,
    labeled_oracle,
    load_embeddings,
    load_run,
    load_softmax,
    persist_run,
    sample_gp_truth,
    save_embeddings,
)
from transduct.data import (
    load_embeddings_binary,
    load_table,
    save_embeddings_binary,
    save_table,
)


class TestEmbeddingFiles:
    def test_two_row_file(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("p=2 n=2\n0,1.0,2.0\n1,-0.5,1e-3\n")
        points = load_embeddings(str(path))
        assert [p.index for p in points] == [0, 1]
        np.testing.assert_allclose(points[1].embedding, [-0.5, 1e-3])

    def test_duplicate_id_names_offender(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("p=1 n=2\n7,1.0\n7,2.0\n")
        with pytest.raises(ParseError, match="duplicate id 7"):
            load_embeddings(str(path))

    def test_ragged_row_reports_line(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("p=2 n=2\n0,1.0,2.0\n1,3.0\n")
        with pytest.raises(ParseError, match=":3"):
            load_embeddings(str(path))

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("p=1 n=1\n0,nan\n")
        with pytest.raises(ParseError, match="non-finite"):
            load_embeddings(str(path))

    def test_round_trip_is_bit_exact(self, tmp_path, rng):
        points = [Point(i, embedding=rng.standard_normal(5)
                        * 10.0 ** float(rng.integers(-8, 8)))
                  for i in range(20)]
        path = tmp_path / "emb.txt"
        save_embeddings(points, str(path))
        loaded = load_embeddings(str(path))
        for a, b in zip(points, loaded):
            assert a.index == b.index
            assert np.array_equal(a.embedding, b.embedding)

    def test_binary_round_trip(self, tmp_path, rng):
        points = [Point(i, embedding=rng.standard_normal(300)) for i in range(7)]
        path = tmp_path / "emb.bin"
        save_embeddings_binary(points, str(path))
        loaded = load_embeddings_binary(str(path))
        for a, b in zip(points, loaded):
            assert a.index == b.index
            assert np.array_equal(a.embedding, b.embedding)

    def test_binary_rejects_foreign_files(self, tmp_path):
        path = tmp_path / "not.bin"
        path.write_bytes(b"something else entirely")
        with pytest.raises(ParseError):
            load_embeddings_binary(str(path))


class TestSoftmaxFiles:
    def test_load_checks_normalization(self, tmp_path):
        path = tmp_path / "sm.txt"
        path.write_text("p=3 n=1\n0,0.5,0.3,0.1\n")
        with pytest.raises(ParseError, match="sums to"):
            load_softmax(str(path))

    def test_good_table(self, tmp_path):
        path = tmp_path / "sm.txt"
        path.write_text("p=2 n=2\n4,0.25,0.75\n9,0.5,0.5\n")
        table = load_softmax(str(path))
        np.testing.assert_allclose(table.rows([9]), [[0.5, 0.5]])


class TestSyntheticTruth:
    def test_single_point_moments(self):
        spec = KernelSpec("linear")
        grid = [Point(0, coords=[1.0])]
        draws = np.array([sample_gp_truth(spec, grid, seed).values[0]
                          for seed in range(100_000)])
        assert abs(draws.var() - 1.0) < 0.02

    def test_degenerate_kernel_gives_zero(self):
        spec = KernelSpec("linear")
        truth = sample_gp_truth(spec, [Point(0, coords=[0.0])], 3)
        assert truth.values[0] == 0.0

    def test_seeded_reproducibility(self, rng):
        spec = KernelSpec("gaussian", 0.5)
        grid = [Point(i, coords=rng.uniform(0, 1, 2)) for i in range(6)]
        a = sample_gp_truth(spec, grid, 42)
        b = sample_gp_truth(spec, grid, 42)
        assert np.array_equal(a.values, b.values)

    def test_covariance_moment_check(self, rng):
        spec = KernelSpec("gaussian", 0.7)
        grid = [Point(i, coords=rng.uniform(0, 1, 1)) for i in range(5)]
        from transduct import gram

        k = gram(spec, grid).values
        n = 10_000
        draws = np.stack([sample_gp_truth(spec, grid, seed).values
                          for seed in range(n)])
        empirical = draws.T @ draws / n
        stderr = np.sqrt((np.outer(np.diag(k), np.diag(k)) + k ** 2) / n)
        assert np.all(np.abs(empirical - k) <= 5 * stderr)


class TestLabeledOracle:
    def test_tiny_noise_recovers_truth(self, rng):
        spec = KernelSpec("gaussian", 0.5)
        grid = [Point(i, coords=rng.uniform(0, 1, 1)) for i in range(3)]
        truth = sample_gp_truth(spec, grid, 1)
        oracle = labeled_oracle(truth, NoiseModel.homoscedastic(1e-12), seed=2)
        np.testing.assert_allclose(oracle(0), truth.values[0], atol=1e-5)

    def test_noise_variance_matches_model(self):
        truth = sample_gp_truth(KernelSpec("linear"), [Point(0, coords=[2.0])], 0)
        oracle = labeled_oracle(truth, NoiseModel.homoscedastic(0.49), seed=5)
        draws = np.array([oracle(0) for _ in range(10_000)])
        assert abs(draws.var() - 0.49) < 0.03

    def test_noise_is_serially_uncorrelated(self):
        truth = sample_gp_truth(KernelSpec("linear"), [Point(0, coords=[1.5])], 0)
        oracle = labeled_oracle(truth, NoiseModel.homoscedastic(1.0), seed=7)
        n = 10_000
        draws = np.array([oracle(0) for _ in range(n)]) - truth.values[0]
        lag1 = np.corrcoef(draws[:-1], draws[1:])[0, 1]
        assert abs(lag1) < 3 / np.sqrt(n)

    def test_seeded_determinism(self):
        truth = sample_gp_truth(KernelSpec("linear"), [Point(0, coords=[1.0])], 0)
        a = labeled_oracle(truth, NoiseModel.homoscedastic(0.3), seed=11)
        b = labeled_oracle(truth, NoiseModel.homoscedastic(0.3), seed=11)
        assert [a(0) for _ in range(5)] == [b(0) for _ in range(5)]

    def test_unknown_index(self):
        truth = sample_gp_truth(KernelSpec("linear"), [Point(0, coords=[1.0])], 0)
        oracle = labeled_oracle(truth, NoiseModel.homoscedastic(0.3), seed=1)
        with pytest.raises(DataError):
            oracle(99)


def make_record(rounds, rng):
    record = RunRecord(config={"rule": "itl", "seed": 4})
    for n in range(rounds + 1):
        record.append(RoundEntry(
            round=n, chosen=tuple(int(i) for i in rng.integers(0, 50, size=3)),
            objectives=tuple(float(v) for v in rng.standard_normal(3)),
            mean_variance=float(rng.uniform(0, 1)),
            max_variance=float(rng.uniform(1, 2)),
            relevant_picks=int(rng.integers(0, 4)),
            distinct_relevant=int(rng.integers(0, 40)),
            rmse=None if n % 5 == 0 else float(rng.uniform(0, 1))))
    return record


class TestRunRecords:
    def test_empty_run_round_trips(self, tmp_path):
        record = RunRecord(config={"note": "empty"})
        path = tmp_path / "run.jsonl"
        persist_run(record, str(path))
        loaded = load_run(str(path))
        assert loaded.config == {"note": "empty"}
        assert loaded.rounds == []

    def test_hundred_rounds_bit_exact(self, tmp_path, rng):
        record = make_record(100, rng)
        path = tmp_path / "run.jsonl"
        persist_run(record, str(path))
        loaded = load_run(str(path))
        assert loaded.rounds == record.rounds
        assert loaded.config == record.config
        persist_run(loaded, str(tmp_path / "again.jsonl"))
        assert (tmp_path / "run.jsonl").read_bytes() == \
            (tmp_path / "again.jsonl").read_bytes()

    def test_corrupted_file_raises_cleanly(self, tmp_path, rng):
        path = tmp_path / "run.jsonl"
        persist_run(make_record(5, rng), str(path))
        blob = path.read_text().splitlines()
        blob[3] = blob[3][:10] + "garbage"
        path.write_text("\n".join(blob))
        with pytest.raises(ParseError, match=":4"):
            load_run(str(path))

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "run.jsonl"
        path.write_text('{"config":{},"version":"v9"}\n')
        with pytest.raises(DataError, match="v9"):
            load_run(str(path))

    def test_rounds_strictly_increasing(self, rng):
        record = make_record(2, rng)
        with pytest.raises(InputError):
            record.append(record.rounds[-1])


class TestTables:
    def test_round_trip(self, tmp_path, rng):
        header = ["name", "value", "count", "maybe"]
        rows = [["a", float(rng.standard_normal()), 3, None],
                ["b", 1e-17, -2, "text"]]
        path = tmp_path / "t.tsv"
        save_table(str(path), header, rows)
        got_header, got_rows = load_table(str(path))
        assert got_header == header
        assert got_rows == rows
