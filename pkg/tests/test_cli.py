import csv

import pytest

from bistddp.cli import main
from conftest import foursquare_lines


def run(*args):
    return main([str(a) for a in args])


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def prepared_dir(raw_foursquare, tmp_path):
    out = tmp_path / "prep"
    assert run("prepare", "--data", raw_foursquare, "--format", "foursquare",
               "--out", out) == 0
    return out


class TestPrepare:
    def test_creates_artifacts_with_hand_counted_stats(self, prepared_dir):
        assert (prepared_dir / "corpus.tsv").exists()
        assert (prepared_dir / "config.txt").exists()
        rows = read_csv(prepared_dir / "stats.csv")
        raw = next(r for r in rows if r["stage"] == "raw")
        # fixture: 20 users x 12 check-ins over 12 POIs, everything survives
        assert (raw["users"], raw["pois"], raw["checkins"]) == ("20", "12", "240")
        filtered = next(r for r in rows if r["stage"] == "filtered")
        assert filtered["checkins"] == "240"
        assert float(raw["sparsity"]) == pytest.approx(1 - 240 / (20 * 12))

    def test_small_fixture_stats_equal_hand_count(self, tmp_path):
        # 2 users x 10 check-ins over 4 POIs: 20 lines, survives only with
        # relaxed thresholds
        lines = foursquare_lines(n_users=2, n_pois=4, checkins_per_user=10)
        raw = tmp_path / "tiny.tsv"
        raw.write_text("\n".join(lines) + "\n", encoding="utf-8")
        out = tmp_path / "out"
        assert run("prepare", "--data", raw, "--format", "foursquare", "--out", out,
                   "--min-user", 1, "--min-poi-users", 1) == 0
        rows = read_csv(out / "stats.csv")
        raw_row = next(r for r in rows if r["stage"] == "raw")
        assert (raw_row["users"], raw_row["pois"], raw_row["checkins"]) == ("2", "4", "20")

    def test_empty_input_is_bad_input(self, tmp_path):
        empty = tmp_path / "empty.tsv"
        empty.write_text("", encoding="utf-8")
        assert run("prepare", "--data", empty, "--format", "foursquare",
                   "--out", tmp_path / "o") == 2

    def test_everything_filtered_is_bad_input(self, tmp_path):
        lines = foursquare_lines(n_users=2, n_pois=4, checkins_per_user=10)
        raw = tmp_path / "tiny.tsv"
        raw.write_text("\n".join(lines) + "\n", encoding="utf-8")
        assert run("prepare", "--data", raw, "--format", "foursquare",
                   "--out", tmp_path / "o") == 2  # default 10/10 kills it


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed=3\nbogus_key=1\n", encoding="utf-8")
        assert run("selfcheck", "--config", cfg) == 2

    def test_bad_value_rejected(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("epochs=often\n", encoding="utf-8")
        assert run("selfcheck", "--config", cfg) == 2

    def test_cli_overrides_file(self, raw_foursquare, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed=7\nmin_user=1\nmin_poi_users=1\n", encoding="utf-8")
        out = tmp_path / "o"
        assert run("prepare", "--config", cfg, "--data", raw_foursquare,
                   "--format", "foursquare", "--out", out, "--seed", 9) == 0
        text = (out / "config.txt").read_text(encoding="utf-8")
        assert "seed=9" in text and "min_user=1" in text

    def test_bad_variant_flag_exits_2(self, tmp_path):
        with pytest.raises(SystemExit) as e:
            run("train", "--data", "x", "--variant", "nope")
        assert e.value.code == 2


class TestTrainEvaluate:
    def train(self, prepared_dir, out, seed=0, extra=()):
        return run("train", "--data", prepared_dir / "corpus.tsv", "--out", out,
                   "--d", 4, "--h", 6, "--epochs", 2, "--batch", 64,
                   "--seed", seed, *extra)

    def test_train_writes_checkpoint_and_log(self, prepared_dir, tmp_path):
        out = tmp_path / "run"
        assert self.train(prepared_dir, out) == 0
        assert (out / "checkpoint.bin").exists()
        log = read_csv(out / "train_log.csv")
        assert len(log) == 2
        assert set(log[0]) == {"epoch", "train_loss", "val_recall@1", "val_recall@5",
                               "val_recall@10", "val_map", "seconds"}

    def test_determinism_bitwise(self, prepared_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert self.train(prepared_dir, a, seed=5) == 0
        assert self.train(prepared_dir, b, seed=5) == 0
        assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()
        log_a = [r for r in read_csv(a / "train_log.csv")]
        log_b = [r for r in read_csv(b / "train_log.csv")]
        for ra, rb in zip(log_a, log_b):
            ra.pop("seconds"), rb.pop("seconds")  # wall time may differ
            assert ra == rb

    def test_resume_refuses_mismatched_shapes(self, prepared_dir, tmp_path):
        out = tmp_path / "run"
        assert self.train(prepared_dir, out) == 0
        # rebuild the corpus with w=2: different sample width, same data
        out2 = tmp_path / "w2"
        raw = prepared_dir / "corpus.tsv"
        assert run("prepare", "--data", raw.parent.parent / "raw.tsv", "--format",
                   "foursquare", "--out", out2, "--w", 2) == 0
        code = run("train", "--data", out2 / "corpus.tsv", "--out", tmp_path / "r2",
                   "--d", 4, "--h", 6, "--epochs", 1,
                   "--resume-from", out / "checkpoint.bin")
        assert code == 2

    def test_evaluate_writes_report(self, prepared_dir, tmp_path):
        out = tmp_path / "run"
        assert self.train(prepared_dir, out) == 0
        ev = tmp_path / "ev"
        assert run("evaluate", "--data", prepared_dir / "corpus.tsv",
                   "--checkpoint", out / "checkpoint.bin", "--out", ev,
                   "--split", "test") == 0
        rows = read_csv(ev / "report_test.csv")
        metrics = {r["metric"]: float(r["value"]) for r in rows}
        assert "recall@5" in metrics and "map" in metrics
        assert 0.0 <= metrics["map"] <= 1.0

    def test_evaluate_deterministic(self, prepared_dir, tmp_path):
        out = tmp_path / "run"
        assert self.train(prepared_dir, out) == 0
        e1, e2 = tmp_path / "e1", tmp_path / "e2"
        for ev in (e1, e2):
            assert run("evaluate", "--data", prepared_dir / "corpus.tsv",
                       "--checkpoint", out / "checkpoint.bin", "--out", ev) == 0
        assert (e1 / "report_test.csv").read_bytes() == (e2 / "report_test.csv").read_bytes()


class TestBaselinesCommand:
    def test_reports_all_four(self, prepared_dir, tmp_path):
        out = tmp_path / "bl"
        assert run("baselines", "--data", prepared_dir / "corpus.tsv",
                   "--out", out, "--split", "test") == 0
        rows = read_csv(out / "baselines.csv")
        assert [r["model"] for r in rows] == ["forward", "backward", "top1", "top2"]
        for r in rows:
            assert 0.0 <= float(r["map"]) <= 1.0


class TestAblateAndSweep:
    def test_ablate_emits_five_variants(self, prepared_dir, tmp_path):
        out = tmp_path / "ab"
        assert run("ablate", "--data", prepared_dir / "corpus.tsv", "--out", out,
                   "--d", 3, "--h", 4, "--epochs", 1, "--batch", 64) == 0
        rows = read_csv(out / "ablation.csv")
        assert [r["model"] for r in rows] == ["bi-stddp", "f-stddp", "b-stddp", "bi-b", "bi-a"]

    def test_sweep_records_points_and_survives_failures(self, prepared_dir, tmp_path):
        out = tmp_path / "sw"
        assert run("sweep", "--data", prepared_dir / "corpus.tsv", "--out", out,
                   "--grid", "w=1,50", "--d", 3, "--h", 4, "--epochs", 1,
                   "--batch", 64) == 0
        rows = read_csv(out / "sweep.csv")
        assert len(rows) == 2
        assert rows[0]["status"] == "ok"
        assert rows[1]["status"].startswith("error")

    def test_sweep_single_point_matches_train_evaluate(self, prepared_dir, tmp_path):
        out = tmp_path / "sw1"
        assert run("sweep", "--data", prepared_dir / "corpus.tsv", "--out", out,
                   "--grid", "d=4", "--h", 6, "--epochs", 2, "--batch", 64,
                   "--seed", 0) == 0
        sweep_rows = read_csv(out / "sweep.csv")
        assert sweep_rows[0]["status"] == "ok"

        tr = tmp_path / "tr"
        assert run("train", "--data", prepared_dir / "corpus.tsv", "--out", tr,
                   "--d", 4, "--h", 6, "--epochs", 2, "--batch", 64, "--seed", 0) == 0
        ev = tmp_path / "ev"
        assert run("evaluate", "--data", prepared_dir / "corpus.tsv",
                   "--checkpoint", tr / "checkpoint.bin", "--out", ev) == 0
        report = {r["metric"]: r["value"] for r in read_csv(ev / "report_test.csv")}
        assert f"{float(sweep_rows[0]['map']):.6f}" == report["map"]

    def test_sweep_three_embedding_sizes(self, prepared_dir, tmp_path):
        out = tmp_path / "sw3"
        assert run("sweep", "--data", prepared_dir / "corpus.tsv", "--out", out,
                   "--grid", "d=2,4,8", "--h", 4, "--epochs", 1, "--batch", 64) == 0
        rows = read_csv(out / "sweep.csv")
        assert [(r["param"], r["value"], r["status"]) for r in rows] == [
            ("d", "2", "ok"), ("d", "4", "ok"), ("d", "8", "ok")]

    def test_bad_grid_is_bad_input(self, prepared_dir, tmp_path):
        assert run("sweep", "--data", prepared_dir / "corpus.tsv",
                   "--out", tmp_path / "x", "--grid", "lr=0.1") == 2


def test_selfcheck_passes():
    assert run("selfcheck") == 0
