import csv
import json
import shutil

import numpy as np
import pytest

from pvseval.cli import main
from pvseval.harness import SubjectRecord, write_manifest
from pvseval.nifti import read_volume, write_volume
from pvseval.phantom import PhantomSpec, Perturbation, generate, perturb


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def phantom_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("phantom")
    spec = PhantomSpec(dims=(40, 40, 40), n_tubes=4, length_range=(8.0, 14.0), seed=2)
    image, truth, _ = generate(spec)
    write_volume(image, root / "image.nii.gz", datatype=64)
    write_volume(truth, root / "truth.nii.gz", datatype=2)
    half = perturb(truth, Perturbation(kind="delete_fraction", fraction=0.5), seed=1)
    write_volume(half, root / "half.nii.gz", datatype=2)
    return {"root": root, "truth": truth, "half": half}


class TestMetricsCommand:
    def test_self_comparison_all_ones(self, phantom_files, tmp_path, capsys):
        root = phantom_files["root"]
        code = run("metrics", "--pred", root / "truth.nii.gz",
                   "--ref", root / "truth.nii.gz", "--out", tmp_path)
        assert code == 0
        rows = read_csv(tmp_path / "metrics.csv")
        assert len(rows) == 1
        for metric in ("dsc_vox", "sen_vox", "ppv_vox", "dsc_num", "sen_num", "ppv_num"):
            assert float(rows[0][metric]) == 1.0
        payload = json.loads((tmp_path / "metrics.json").read_text())
        assert payload["config"]["connectivity"] == 26
        assert payload["config"]["degenerate_policy"] == "exclude"

    def test_dim_mismatch_exit_2(self, phantom_files, tmp_path, capsys):
        root = phantom_files["root"]
        from conftest import make_mask
        other = make_mask(np.zeros((8, 8, 8), bool))
        write_volume(other, tmp_path / "small.nii", datatype=2)
        code = run("metrics", "--pred", root / "truth.nii.gz",
                   "--ref", tmp_path / "small.nii", "--out", tmp_path)
        assert code == 2
        err = capsys.readouterr().err
        assert "(40, 40, 40)" in err and "(8, 8, 8)" in err

    def test_missing_file_exit_2(self, tmp_path, capsys):
        code = run("metrics", "--pred", tmp_path / "nope.nii",
                   "--ref", tmp_path / "nope.nii", "--out", tmp_path)
        assert code == 2
        assert "no such file" in capsys.readouterr().err

    def test_half_deletion_dice_in_csv(self, phantom_files, tmp_path):
        root = phantom_files["root"]
        code = run("metrics", "--pred", root / "half.nii.gz",
                   "--ref", root / "truth.nii.gz", "--out", tmp_path,
                   "--subject-id", "half")
        assert code == 0
        row = read_csv(tmp_path / "metrics.csv")[0]
        total = phantom_files["truth"].foreground_count
        deleted = total - phantom_files["half"].foreground_count
        f = deleted / total
        assert float(row["dsc_vox"]) == pytest.approx(2 * (1 - f) / (2 - f), abs=1e-12)

    def test_internal_error_exit_1(self, phantom_files, tmp_path, monkeypatch, capsys):
        import pvseval.cli as cli_mod
        root = phantom_files["root"]

        def boom(*args, **kwargs):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr(cli_mod, "evaluate_subject", boom)
        code = run("metrics", "--pred", root / "truth.nii.gz",
                   "--ref", root / "truth.nii.gz", "--out", tmp_path)
        assert code == 1
        assert "internal error" in capsys.readouterr().err


def build_cohort(root, n_per_site, seed0=0):
    records = []
    base = root / "vols"
    base.mkdir(exist_ok=True)
    seed = seed0
    for site, count in n_per_site.items():
        for i in range(count):
            sid = f"{site}{i:02d}"
            spec = PhantomSpec(dims=(32, 32, 32), n_tubes=2,
                               length_range=(6.0, 10.0), seed=seed)
            _, truth, _ = generate(spec)
            pred = perturb(truth, Perturbation(kind="delete_fraction", fraction=0.25),
                           seed=seed + 1)
            write_volume(truth, base / f"{sid}_ref.nii.gz", datatype=2)
            write_volume(pred, base / f"{sid}_pred.nii.gz", datatype=2)
            records.append(SubjectRecord(sid, site,
                                         str(base / f"{sid}_pred.nii.gz"),
                                         str(base / f"{sid}_ref.nii.gz")))
            seed += 7
    manifest = root / "manifest.csv"
    write_manifest(records, manifest)
    return manifest, records


class TestAggregateCommand:
    def test_two_subject_hand_mean(self, tmp_path):
        manifest, _ = build_cohort(tmp_path, {"A": 2})
        out = tmp_path / "out"
        assert run("aggregate", "--manifest", manifest, "--out", out) == 0
        subjects = read_csv(out / "per_subject.csv")
        assert len(subjects) == 2
        values = [float(r["dsc_vox"]) for r in subjects]
        agg = read_csv(out / "aggregate.csv")
        all_sites = next(r for r in agg if r["site"] == "All Sites")
        assert float(all_sites["dsc_vox_mean"]) == pytest.approx(
            sum(values) / 2, abs=1e-12)
        hand_sd = (sum((v - sum(values) / 2) ** 2 for v in values)) ** 0.5
        assert float(all_sites["dsc_vox_sd"]) == pytest.approx(hand_sd, abs=1e-12)

    def test_losocv_table_shape(self, tmp_path):
        manifest, _ = build_cohort(tmp_path, {"A": 2, "B": 2, "C": 2})
        out = tmp_path / "out"
        assert run("aggregate", "--manifest", manifest, "--out", out,
                   "--scheme", "losocv") == 0
        rows = read_csv(out / "losocv_table.csv")
        assert len(rows) == 6  # one region x six metrics
        for site in ("A", "B", "C"):
            assert f"{site}_mean" in rows[0]
        assert "average_mean" in rows[0]

    def test_parallel_matches_serial(self, tmp_path):
        manifest, _ = build_cohort(tmp_path, {"A": 3})
        serial, parallel = tmp_path / "serial", tmp_path / "parallel"
        assert run("aggregate", "--manifest", manifest, "--out", serial) == 0
        assert run("aggregate", "--manifest", manifest, "--out", parallel,
                   "--workers", 3) == 0
        assert (serial / "per_subject.csv").read_text() == \
            (parallel / "per_subject.csv").read_text()


class TestCompareCommand:
    def test_compare_against_self(self, tmp_path):
        manifest, _ = build_cohort(tmp_path, {"A": 3})
        out = tmp_path / "out"
        assert run("aggregate", "--manifest", manifest, "--out", out) == 0
        cmp_out = tmp_path / "cmp"
        assert run("compare", "--a", out / "per_subject.csv",
                   "--b", out / "per_subject.csv", "--out", cmp_out) == 0
        rows = read_csv(cmp_out / "compare.csv")
        assert rows and all(r["sig"] == "No" for r in rows)
        payload = json.loads((cmp_out / "compare.json").read_text())
        assert all(r["method"] == "all_zero_diffs" for r in payload["rows"])

    def test_compare_detects_degradation(self, tmp_path):
        manifest, records = build_cohort(tmp_path, {"A": 10})
        out_good = tmp_path / "good"
        assert run("aggregate", "--manifest", manifest, "--out", out_good) == 0
        # degrade: ref vs ref is perfect, so compare perfect vs damaged
        perfect_manifest = tmp_path / "perfect.csv"
        write_manifest(
            [SubjectRecord(r.subject_id, r.site, r.ref_path, r.ref_path)
             for r in records],
            perfect_manifest,
        )
        out_perfect = tmp_path / "perfect"
        assert run("aggregate", "--manifest", perfect_manifest, "--out", out_perfect) == 0
        cmp_out = tmp_path / "cmp"
        assert run("compare", "--a", out_perfect / "per_subject.csv",
                   "--b", out_good / "per_subject.csv", "--out", cmp_out,
                   "--metrics", "dsc_vox,sen_vox") == 0
        rows = read_csv(cmp_out / "compare.csv")
        for row in rows:
            assert float(row["median_diff"]) > 0
            assert float(row["r"]) == 1.0

    def test_schema_violation_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("subject_id,region,dsc_vox\ns1,WM,notanumber\n")
        good = tmp_path / "good.csv"
        good.write_text("subject_id,region,dsc_vox\ns1,WM,0.5\n")
        code = run("compare", "--a", bad, "--b", good, "--out", tmp_path)
        assert code == 2
        err = capsys.readouterr().err
        assert "missing columns" in err

    def test_bad_value_diagnostic(self, tmp_path, capsys):
        header = "subject_id,region,dsc_vox,sen_vox,ppv_vox,dsc_num,sen_num,ppv_num"
        bad = tmp_path / "bad.csv"
        bad.write_text(f"{header}\ns1,WM,oops,0.5,0.5,0.5,0.5,0.5\n")
        code = run("compare", "--a", bad, "--b", bad, "--out", tmp_path)
        assert code == 2
        err = capsys.readouterr().err
        assert "row 2" in err and "dsc_vox" in err


class TestContrastCommand:
    def test_contrast_output(self, phantom_files, tmp_path):
        root = phantom_files["root"]
        assert run("contrast", "--image", root / "image.nii.gz",
                   "--mask", root / "truth.nii.gz", "--out", tmp_path,
                   "--modality", "T2w") == 0
        row = read_csv(tmp_path / "contrast.csv")[0]
        assert row["mode"] == "global"
        assert row["modality"] == "T2w"
        assert abs(float(row["abs_contrast"]) - 6.0) < 1.0

    def test_per_cluster_mode(self, phantom_files, tmp_path):
        root = phantom_files["root"]
        assert run("contrast", "--image", root / "image.nii.gz",
                   "--mask", root / "truth.nii.gz", "--out", tmp_path,
                   "--mode", "per_cluster") == 0
        row = read_csv(tmp_path / "contrast.csv")[0]
        assert row["mode"] == "per_cluster"
        assert abs(float(row["abs_contrast"]) - 6.0) < 1.5


class TestClustersCommand:
    def test_sizes_and_histogram(self, phantom_files, tmp_path):
        root = phantom_files["root"]
        labels_path = tmp_path / "labels.nii.gz"
        assert run("clusters", "--mask", root / "truth.nii.gz", "--out", tmp_path,
                   "--log-binning", "--save-labels", labels_path) == 0
        sizes = read_csv(tmp_path / "cluster_sizes.csv")
        assert len(sizes) == 4
        hist = read_csv(tmp_path / "size_histogram.csv")
        assert abs(sum(float(r["density"]) for r in hist) - 1.0) < 1e-12
        saved = read_volume(labels_path, "intensity")
        assert saved.data.max() == 4

    def test_empty_mask(self, tmp_path):
        from conftest import make_mask
        write_volume(make_mask(np.zeros((8, 8, 8), bool)), tmp_path / "e.nii", datatype=2)
        assert run("clusters", "--mask", tmp_path / "e.nii", "--out", tmp_path) == 0
        payload = json.loads((tmp_path / "clusters.json").read_text())
        assert payload["component_count"] == 0


class TestPhantomCommand:
    def test_deterministic_outputs(self, tmp_path):
        out = tmp_path / "p"
        args = ("phantom", "--out", out, "--dims", "32,32,32", "--n-tubes", "3",
                "--seed", "9", "--perturb", "delete_fraction:0.5")
        assert run(*args) == 0
        snapshot = {
            name: (out / name).read_bytes()
            for name in ("image.nii.gz", "truth.nii.gz", "pred.nii.gz",
                         "phantom_spec.json")
        }
        shutil.rmtree(out)
        assert run(*args) == 0
        for name, blob in snapshot.items():
            assert (out / name).read_bytes() == blob, name

    def test_phantom_then_metrics(self, tmp_path):
        out = tmp_path / "p"
        assert run("phantom", "--out", out, "--dims", "32,32,32",
                   "--n-tubes", "2", "--seed", "3",
                   "--perturb", "drop_clusters:1") == 0
        mout = tmp_path / "m"
        assert run("metrics", "--pred", out / "pred.nii.gz",
                   "--ref", out / "truth.nii.gz", "--out", mout) == 0
        row = read_csv(mout / "metrics.csv")[0]
        assert float(row["sen_num"]) == pytest.approx(0.5, abs=1e-15)
        assert float(row["ppv_num"]) == 1.0

    def test_bad_perturb_exit_2(self, tmp_path, capsys):
        code = run("phantom", "--out", tmp_path, "--perturb", "explode:1")
        assert code == 2
        assert "unknown perturbation" in capsys.readouterr().err


class TestFoldsCommand:
    def test_folds_json(self, tmp_path):
        manifest, records = build_cohort(tmp_path, {"A": 3, "B": 3})
        out = tmp_path / "f"
        assert run("folds", "--manifest", manifest, "--scheme", "losocv",
                   "--out", out) == 0
        payload = json.loads((out / "foldspec.json").read_text())
        assert payload["scheme"] == "losocv"
        assert set(payload["assignments"].values()) == {"A", "B"}

    def test_config_file_merged_under_flags(self, tmp_path):
        manifest, _ = build_cohort(tmp_path, {"A": 2})
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"connectivity": 6, "workers": 2}))
        out = tmp_path / "o"
        assert run("aggregate", "--manifest", manifest, "--out", out,
                   "--config", cfg, "--connectivity", "18") == 0
        payload = json.loads((out / "aggregate.json").read_text())
        assert payload["config"]["connectivity"] == 18  # flag wins
        assert payload["config"]["workers"] == 2  # file fills the gap

    def test_workers_env_default(self, tmp_path, monkeypatch):
        manifest, _ = build_cohort(tmp_path, {"A": 2})
        monkeypatch.setenv("PVSEVAL_WORKERS", "2")
        out = tmp_path / "o"
        assert run("aggregate", "--manifest", manifest, "--out", out) == 0
        payload = json.loads((out / "aggregate.json").read_text())
        assert payload["config"]["workers"] == 2
