import json

import numpy as np
import pytest

from latentconn.atlas import N_EDGES, REGIONS
from latentconn.cli import main
from latentconn.connectome import read_edges_csv, read_matrix_csv, vectorize_upper

TRAIN_FAST = ["--epochs", "2", "--hidden", "8", "8", "--batch-size", "16"]


def tree_bytes(root):
    # config.json echoes the output directory itself, so it differs between trees
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "config.json"}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "syn"), "--n-subjects", "40", "--seed", "3"]) == 0
    assert main(["train", "--manifest", str(root / "syn" / "manifest.csv"), "--edges", str(root / "syn" / "edges"),
                 "--out", str(root / "run"), *TRAIN_FAST]) == 0
    return root


def test_synth_outputs(pipeline):
    syn = pipeline / "syn"
    assert len(list((syn / "edges").glob("*.csv"))) == 40
    assert read_edges_csv(syn / "edges" / "sub0001.csv").size == N_EDGES
    assert (syn / "manifest.csv").read_text().splitlines()[0] == "subject_id,group,age,fiq"
    truth = json.loads((syn / "synth_truth.json").read_text())
    assert len(truth["factor"]) == 40 and truth["spec"]["seed"] == 3
    cfg = json.loads((syn / "config.json").read_text())
    assert cfg["command"] == "synth" and cfg["n_subjects"] == 40


def test_synth_deterministic_and_degenerate(tmp_path):
    args = ["synth", "--n-subjects", "6", "--seed", "9", "--write-matrices"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    m = read_matrix_csv(tmp_path / "a" / "matrices" / "sub0001.csv")
    np.testing.assert_allclose(vectorize_upper(m), read_edges_csv(tmp_path / "a" / "edges" / "sub0001.csv"))
    assert main(["synth", "--out", str(tmp_path / "c"), "--n-subjects", "5",
                 "--noise-sd", "0", "--loading", "0"]) == 0
    edges = [read_edges_csv(p) for p in sorted((tmp_path / "c" / "edges").glob("*.csv"))]
    assert all(np.array_equal(edges[0], e) for e in edges[1:])


def test_connectome_command(tmp_path, capsys):
    rng = np.random.default_rng(0)
    ts = tmp_path / "ts"
    ts.mkdir()
    good = rng.normal(size=(50, 90))
    np.savetxt(ts / "s1.csv", good, delimiter=",", header=",".join(REGIONS), comments="")
    bad = rng.normal(size=(50, 90))
    bad[:, 7] = 1.0
    np.savetxt(ts / "s2.csv", bad, delimiter=",")
    assert main(["connectome", "--timeseries", str(ts), "--out", str(tmp_path / "out")]) == 0
    out = tmp_path / "out"
    assert [p.name for p in (out / "matrices").iterdir()] == ["s1.csv"]
    assert [p.name for p in (out / "edges").iterdir()] == ["s1.csv"]
    m = read_matrix_csv(out / "matrices" / "s1.csv")
    np.testing.assert_allclose(m, np.abs(np.corrcoef(good.T)) * (1 - np.eye(90)), atol=1e-8)
    rejects = (out / "rejects.csv").read_text().splitlines()
    assert rejects[0] == "subject_id,reason" and rejects[1].startswith("s2,")
    assert REGIONS[7] in rejects[1]
    assert "rejected: subject=s2" in capsys.readouterr().err


def test_train_outputs(pipeline):
    run = pipeline / "run"
    rows = (run / "loss_history.csv").read_text().splitlines()
    assert rows[0] == "epoch,train_total,train_recon,train_kl,val_total,val_recon,val_kl"
    assert len(rows) == 3
    assert json.loads((run / "checkpoint.json").read_text())["schema"] == "latentconn.vae/1"


def test_train_deterministic(pipeline, tmp_path):
    syn = pipeline / "syn"
    assert main(["train", "--manifest", str(syn / "manifest.csv"), "--edges", str(syn / "edges"),
                 "--out", str(tmp_path), *TRAIN_FAST]) == 0
    for name in ("checkpoint.json", "loss_history.csv"):
        assert (tmp_path / name).read_bytes() == (pipeline / "run" / name).read_bytes()


def test_analyze(pipeline, tmp_path):
    syn, ckpt = pipeline / "syn", pipeline / "run" / "checkpoint.json"
    args = ["analyze", "--checkpoint", str(ckpt), "--manifest", str(syn / "manifest.csv"),
            "--edges", str(syn / "edges")]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    stats = json.loads((tmp_path / "a" / "stats.json").read_text())
    import hashlib
    assert stats["checkpoint_sha256"] == hashlib.sha256(ckpt.read_bytes()).hexdigest()
    assert len((tmp_path / "a" / "features.csv").read_text().splitlines()) == 41
    assert stats["checkpoint_sha256"] in (tmp_path / "a" / "stats.txt").read_text()
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    # manifest without the fiq column
    lines = (syn / "manifest.csv").read_text().splitlines()
    stripped = tmp_path / "noiq.csv"
    stripped.write_text("\n".join(",".join(l.split(",")[:3]) for l in lines) + "\n")
    assert main(["analyze", "--checkpoint", str(ckpt), "--manifest", str(stripped),
                 "--edges", str(syn / "edges"), "--out", str(tmp_path / "c")]) == 0
    iq = json.loads((tmp_path / "c" / "stats.json").read_text())["iq_correlation"]
    assert iq["present"] is False and iq["n_used"] == 0


def test_generate(pipeline, tmp_path):
    ckpt = str(pipeline / "run" / "checkpoint.json")
    assert main(["generate", "--checkpoint", ckpt, "--out", str(tmp_path / "a"), "--feature", "2"]) == 0
    assert main(["generate", "--checkpoint", ckpt, "--out", str(tmp_path / "b"), "--feature", "2"]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    d = read_matrix_csv(tmp_path / "a" / "delta.csv")
    assert d.shape == (90, 90) and np.array_equal(d, d.T)
    fcs_rows = (tmp_path / "a" / "fcs_delta.csv").read_text().splitlines()
    assert len(fcs_rows) == 91 and fcs_rows[1].startswith("PreCG.L,")
    assert main(["generate", "--checkpoint", ckpt, "--out", str(tmp_path / "z"), "--direction", "0"]) == 0
    assert np.all(read_matrix_csv(tmp_path / "z" / "delta.csv") == 0)
    assert main(["generate", "--checkpoint", ckpt, "--out", str(tmp_path / "x"), "--feature", "3"]) == 2


def test_manifold(pipeline, tmp_path):
    ckpt = str(pipeline / "run" / "checkpoint.json")
    assert main(["manifold", "--checkpoint", ckpt, "--out", str(tmp_path / "a")]) == 0
    cells = sorted((tmp_path / "a" / "cells").iterdir())
    assert len(cells) == 25
    center = tmp_path / "a" / "cells" / "cell_z1_+0.0000_z2_+0.0000.csv"
    assert np.all(read_matrix_csv(center) == 0)
    assert (tmp_path / "a" / "cells" / "cell_z1_-2.0000_z2_+1.0000.csv").exists()
    assert main(["manifold", "--checkpoint", ckpt, "--out", str(tmp_path / "a")]) == 0
    assert len(list((tmp_path / "a" / "cells").iterdir())) == 25
    assert main(["manifold", "--checkpoint", ckpt, "--out", str(tmp_path / "b")]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_subjects": 4, "seed": 2}))
    assert main(["synth", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "o")]) == 0
    echoed = json.loads((tmp_path / "o" / "config.json").read_text())
    assert echoed["n_subjects"] == 4 and echoed["seed"] == 5 and echoed["noise_sd"] == 0.05
    assert "config: " in capsys.readouterr().err


def test_error_lines_and_codes(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_subjectz": 4}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert err.startswith("error: code=2 kind=validation message=") and "n_subjectz" in err
    assert main(["synth"]) == 2
    assert main(["train", "--manifest", str(tmp_path / "nope.csv"), "--edges", str(tmp_path),
                 "--out", str(tmp_path / "t")]) == 2
    assert main(["generate", "--checkpoint", str(cfg), "--out", str(tmp_path / "g")]) == 2


def test_numeric_failure_exit_code(pipeline, tmp_path, capsys):
    syn = pipeline / "syn"
    code = main(["train", "--manifest", str(syn / "manifest.csv"), "--edges", str(syn / "edges"),
                 "--out", str(tmp_path), "--epochs", "2", "--hidden", "8", "8",
                 "--likelihood", "gaussian", "--learning-rate", "1e300"])
    assert code == 3
    assert "error: code=3 kind=numeric" in capsys.readouterr().err
