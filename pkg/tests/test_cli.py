import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from dfcembed.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from dfcembed.ingest import read_manifest, write_manifest

SMALL = """
[simulate]
subjects = 4
n = 60
p = 6
n_discriminative = 2
seed = 1

[covariance]
bandwidth = 5

[solver]
lambda1 = 0.05, 0.1
lambda2 = 2
eps_abs = 1e-4
eps_rel = 1e-4

[pca]
retain_fraction = {retain}

[lda]
positive_label = {pos}
negative_label = {neg}
tau = {tau}

[output]
directory = out
"""


def write_config(directory, retain=0.2, pos="2-back", neg="0-back", tau=0.5, extra=""):
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "run.ini"
    path.write_text(SMALL.format(retain=retain, pos=pos, neg=neg, tau=tau) + extra)
    return path


def files_under(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def read_table(path):
    lines = path.read_text().splitlines()
    return lines[0].split("\t"), [line.split("\t") for line in lines[1:]]


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    config = write_config(root)
    assert main(["pipeline", "--config", str(config)]) == EXIT_OK
    return root


def test_pipeline_writes_every_stage(run):
    out = run / "out"
    for rel in ("sim/manifest.tsv", "sim/truth_manifest.tsv", "estimates/tuning.tsv",
                "laplacians/stacked.tsv", "pca/model.tsv", "pca/network_comp_1.tsv",
                "pca/mean_trajectory_LR.tsv", "lda/model.tsv", "lda/summary.json",
                "lda/screen.tsv", "evaluate/report.json", "evaluate/recovery.tsv"):
        assert (out / rel).is_file(), rel
    assert len(list((out / "estimates").glob("*.prec.txt"))) == 8


def test_tuning_report_marks_one_choice_per_session(run):
    header, rows = read_table(run / "out" / "estimates" / "tuning.tsv")
    assert len(rows) == 8 * 2
    sel = header.index("selected")
    by_session = {}
    for r in rows:
        by_session[(r[0], r[1])] = by_session.get((r[0], r[1]), 0) + int(r[sel])
    assert set(by_session.values()) == {1}


def test_pca_outputs_shapes(run):
    header, rows = read_table(run / "out" / "pca" / "trajectories" / "sub001_LR.tsv")
    assert header == ["time", "task_label", "comp_1", "comp_2"] and len(rows) == 60
    _, edges = read_table(run / "out" / "pca" / "network_comp_1.tsv")
    assert len(edges) == 3                        # ceil(0.2 * 15)


def test_report_json(run):
    report = json.loads((run / "out" / "evaluate" / "report.json").read_text())
    assert len(report["sessions"]) == 8
    for key in ("mean_precision", "mean_recall", "mean_f1", "change_point_error",
                "change_point_distance", "n_change_points", "n_true_change_points"):
        assert key in report["summary"]
    assert report["lda"]["discriminative_total"] == 2
    assert 0 <= report["lda"]["discriminative_recovered"] <= 2
    summary = json.loads((run / "out" / "lda" / "summary.json").read_text())
    assert summary["status"] == "ok" and 0 <= summary["accuracy"] <= 1


def test_rerun_is_byte_identical(run, tmp_path):
    config = run / "run.ini"
    assert main(["pipeline", "--config", str(config), "--output", str(tmp_path / "again"),
                 "--workers", "2"]) == EXIT_OK
    assert files_under(run / "out") == files_under(tmp_path / "again")


def test_full_edge_list_when_retaining_everything(run, tmp_path):
    shutil.copytree(run / "out", tmp_path / "out")
    config = write_config(tmp_path, retain=1.0)
    assert main(["embed-pca", "--config", str(config)]) == EXIT_OK
    _, edges = read_table(tmp_path / "out" / "pca" / "network_comp_2.tsv")
    assert len(edges) == 15
    assert [int(e[3]) for e in edges] == list(range(1, 16))


def test_label_swap_negates_lda_trajectories(run, tmp_path):
    shutil.copytree(run / "out", tmp_path / "out")
    config = write_config(tmp_path, pos="0-back", neg="2-back")
    assert main(["embed-lda", "--config", str(config)]) == EXIT_OK
    a = np.loadtxt(run / "out" / "lda" / "mean_trajectory_RL.tsv", skiprows=1, usecols=2)
    b = np.loadtxt(tmp_path / "out" / "lda" / "mean_trajectory_RL.tsv", skiprows=1, usecols=2)
    np.testing.assert_allclose(a, -b, atol=1e-10)


def test_strict_tau_with_no_signal_selects_nothing(tmp_path):
    config = write_config(tmp_path, tau=1.0, extra="")
    text = config.read_text().replace("n_discriminative = 2", "n_discriminative = 0")
    config.write_text(text)
    assert main(["simulate", "--config", str(config)]) == EXIT_OK
    assert main(["estimate", "--config", str(config)]) == EXIT_OK
    assert main(["embed-lda", "--config", str(config)]) == EXIT_OK
    summary = json.loads((tmp_path / "out" / "lda" / "summary.json").read_text())
    assert summary["p_prime"] == 0 and summary["status"] == "no edges selected"
    assert not (tmp_path / "out" / "lda" / "model.tsv").exists()


def test_evaluating_truth_scores_perfectly(run, tmp_path):
    shutil.copytree(run / "out", tmp_path / "out")
    for f in (tmp_path / "out" / "sim" / "truth").glob("*.prec.txt"):
        shutil.copy(f, tmp_path / "out" / "estimates" / f.name)
    config = write_config(tmp_path)
    assert main(["evaluate", "--config", str(config)]) == EXIT_OK
    report = json.loads((tmp_path / "out" / "evaluate" / "report.json").read_text())
    assert report["summary"]["mean_f1"] == 1.0
    assert report["summary"]["change_point_error"] == 0.0


def test_simulate_reproducible_and_seeded(tmp_path):
    config = write_config(tmp_path)
    for name, seed in (("a", "5"), ("b", "5"), ("c", "6")):
        assert main(["simulate", "--config", str(config), "--seed", seed,
                     "--output", str(tmp_path / name)]) == EXIT_OK
    a, b, c = (files_under(tmp_path / n) for n in "abc")
    assert a == b and a != c
    assert len(read_manifest(tmp_path / "a" / "sim" / "manifest.tsv")) == 8


def test_single_session_estimate(run, tmp_path):
    entries = read_manifest(run / "out" / "sim" / "manifest.tsv")[:1]
    write_manifest(tmp_path / "one.tsv", entries)
    config = tmp_path / "one.ini"
    config.write_text("[data]\nmanifest = one.tsv\n[covariance]\nbandwidth = 5\n"
                      "[solver]\neps_abs = 1e-4\neps_rel = 1e-4\n")
    assert main(["estimate", "--config", str(config)]) == EXIT_OK
    assert [p.name for p in (tmp_path / "out" / "estimates").glob("*.prec.txt")] == \
        ["sub001_LR.prec.txt"]


def test_exit_codes(tmp_path, capsys):
    assert main(["estimate", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    bad = tmp_path / "bad.ini"
    bad.write_text("[solver]\nlambda9 = 1\n")
    assert main(["estimate", "--config", str(bad)]) == EXIT_CONFIG
    zero_k = write_config(tmp_path / "k", extra="")
    zero_k.write_text(zero_k.read_text().replace("[pca]", "[pca]\nk = 0"))
    assert main(["embed-pca", "--config", str(zero_k)]) == EXIT_CONFIG
    assert main(["estimate", "--config", str(write_config(tmp_path / "w")), "--workers", "0"]) \
        == EXIT_CONFIG

    (tmp_path / "empty.tsv").write_text("subject_id\tacquisition\tdata_path\tannotation_path\n")
    empty = tmp_path / "empty.ini"
    empty.write_text("[data]\nmanifest = empty.tsv\n")
    assert main(["estimate", "--config", str(empty)]) == EXIT_RUNTIME

    no_contrast = tmp_path / "nc.ini"
    no_contrast.write_text("[data]\nmanifest = empty.tsv\n")
    assert main(["embed-lda", "--config", str(no_contrast)]) == EXIT_CONFIG

    unestimated = write_config(tmp_path / "u")
    assert main(["simulate", "--config", str(unestimated)]) == EXIT_OK
    assert main(["embed-pca", "--config", str(unestimated)]) == EXIT_RUNTIME
    assert "run estimate first" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "dfcembed", "--help"], capture_output=True,
                         text=True, check=True)
    assert "embed-pca" in out.stdout
