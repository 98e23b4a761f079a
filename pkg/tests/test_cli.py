import csv
import json

import numpy as np
import pytest

from locsampler.cli import ConfigError, derive_seed, main, parse_config
from locsampler.graph import generate_clustered, save_csr, shuffle_ids
from locsampler.locality import LocalityParams, construct_locality, load_weights

SMALL = """\
seed = 5
graph.clusters = 4
graph.nodes_per_cluster = 20
graph.p_intra = 0.4
graph.p_inter = 0.02
sampler.batch_size = 16
sampler.subgraph_budget = 16
locality.n = 2
locality.target_fraction = 0.4
train.epochs = 3
train.lr = 0.5
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(SMALL)
    return p


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ------------------------------------------------------------------ config

def test_parse_config():
    vals = parse_config("# c\nseed = 3\ngraph.path = a b.txt  # trailing\n\nsampler.fanouts = 5,5\n")
    assert vals == {"seed": "3", "graph.path": "a b.txt", "sampler.fanouts": "5,5"}


@pytest.mark.parametrize("text", ["graph.x\n", "bogus.key = 1\n", "loose = 1\n"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_derive_seed_stable():
    assert derive_seed(1, "graph") == derive_seed(1, "graph")
    assert len({derive_seed(1, c) for c in ("graph", "shuffle", "sampler", "task", "model")}) == 5
    assert derive_seed(1, "graph") != derive_seed(2, "graph")


def test_seed_required(tmp_path, capsys):
    (tmp_path / "c.cfg").write_text("graph.clusters = 2\n")
    assert run("--config", tmp_path / "c.cfg", "--out", tmp_path, "stats") == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and "seed" in err["message"]
    assert json.loads((tmp_path / "error.json").read_text()) == err


def test_missing_path_fails_at_parse(tmp_path, capsys):
    (tmp_path / "c.cfg").write_text("seed = 1\ngraph.path = nope.txt\n")
    assert run("--config", tmp_path / "c.cfg", "--out", tmp_path / "o", "stats") == 1
    assert "nope.txt" in json.loads(capsys.readouterr().err)["message"]


# ------------------------------------------------------------------- stats

@pytest.mark.parametrize("edges, n, row", [
    ("0 1\n1 2\n", None, "3,2,1,2,0.5000"),
    ("0 1\n1 2\n0 2\n", None, "3,3,2,2,1.0000"),
])
def test_stats_rows(tmp_path, capsys, edges, n, row):
    (tmp_path / "g.txt").write_text(edges)
    assert run("--seed", 0, "--out", tmp_path / "o", "stats", tmp_path / "g.txt") == 0
    assert capsys.readouterr().out.splitlines()[1] == row
    assert read_csv(tmp_path / "o" / "stats.csv")[1] == row.split(",")


def test_stats_empty_edge_graph(tmp_path, capsys):
    from conftest import make
    save_csr(make([], 5), tmp_path / "g.csr")
    assert run("--seed", 0, "--out", tmp_path / "o", "stats", tmp_path / "g.csr") == 0
    assert capsys.readouterr().out.splitlines()[1] == "5,0,0,0,0.0000"


def test_stats_parse_error(tmp_path, capsys):
    (tmp_path / "g.txt").write_text("0 1\nzz 2\n")
    assert run("--seed", 0, "--out", tmp_path / "o", "stats", tmp_path / "g.txt") == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "GraphFormatError" and ":2:" in err["message"]


# ------------------------------------------------------ generate / shuffle

def test_generate_and_shuffle(tmp_path, cfg):
    assert run("--config", cfg, "--out", tmp_path / "g", "generate") == 0
    for name in ("graph.csr", "graph.edges", "features.txt", "splits.txt", "run_meta.json"):
        assert (tmp_path / "g" / name).exists()
    assert run("--seed", 1, "--out", tmp_path / "s", "shuffle", tmp_path / "g" / "graph.csr") == 0
    assert (tmp_path / "s" / "graph.csr").read_bytes() != (tmp_path / "g" / "graph.csr").read_bytes()


def test_no_temp_files_left(tmp_path, cfg):
    run("--config", cfg, "--out", tmp_path / "g", "generate")
    assert not [p for p in (tmp_path / "g").iterdir() if p.name.startswith(".")]


# ---------------------------------------------------------------- locality

def test_locality_contiguous_cross_check(tmp_path, capsys):
    g = generate_clustered(3, 12, 0.5, 0.0, seed=4)
    save_csr(g, tmp_path / "g.csr")
    assert run("--seed", 0, "--out", tmp_path / "o", "locality", tmp_path / "g.csr", "--n", 2, "--s", 1.0) == 0
    summary = json.loads((tmp_path / "o" / "locality.json").read_text())
    contiguous = [v for v in range(g.num_nodes)
                  if g.degrees[v] >= 2 and np.all(np.diff(g.neighbors(v)) == 1)]
    assert summary["eligible_fraction"] == len(contiguous) / g.num_nodes
    assert summary["eligible_fraction"] == construct_locality(g, LocalityParams(2, 1.0)).eligible_fraction
    w = load_weights(tmp_path / "o" / "weights.gslw", g)
    assert np.flatnonzero(w.weights).tolist() == contiguous
    assert "eligible fraction" in capsys.readouterr().out


def test_locality_s0_n1(tmp_path):
    g = generate_clustered(2, 10, 0.3, 0.0, seed=1)
    save_csr(g, tmp_path / "g.csr")
    run("--seed", 0, "--out", tmp_path / "o", "locality", tmp_path / "g.csr", "--n", 1, "--s", 0)
    summary = json.loads((tmp_path / "o" / "locality.json").read_text())
    assert summary["eligible_nodes"] == int(np.count_nonzero(g.degrees >= 1))


def test_locality_rerun_identical(tmp_path, cfg):
    for d in ("a", "b"):
        assert run("--config", cfg, "--out", tmp_path / d, "locality") == 0
    assert (tmp_path / "a" / "weights.gslw").read_bytes() == (tmp_path / "b" / "weights.gslw").read_bytes()


# ------------------------------------------------------------------- bench

def test_bench_both_arms(tmp_path, cfg):
    assert run("--config", cfg, "--out", tmp_path / "o", "bench") == 0
    summary = json.loads((tmp_path / "o" / "bench_summary.json").read_text())
    for key in ("l3_dram_ratio", "l2_l3_ratio", "cc_ratio", "nct_ratio"):
        assert key in summary
    rows = read_csv(tmp_path / "o" / "bench_vanilla.csv")
    assert rows[0] == ["batch", "accesses", "l2_l3", "l3_dram", "cc", "nct"]
    assert len(rows) == 1 + 5
    meta = json.loads((tmp_path / "o" / "run_meta.json").read_text())
    assert len(meta["timing"]["vanilla"]["execute_seconds"]) == 5


def test_bench_all_zero_weights_fallback(tmp_path):
    g = shuffle_ids(generate_clustered(2, 20, 0.3, 0.05, seed=0), seed=1)
    save_csr(g, tmp_path / "g.csr")
    (tmp_path / "c.cfg").write_text("seed = 1\ngraph.path = g.csr\nsampler.batch_size = 10\n"
                                    "sampler.subgraph_budget = 10\nlocality.s = 1.0\n")
    assert run("--config", tmp_path / "c.cfg", "--out", tmp_path / "o", "bench", "--locality") == 0
    summary = json.loads((tmp_path / "o" / "bench_summary.json").read_text())
    assert summary["arms"]["locality"]["fallback_count"] > 0
    assert "vanilla" not in summary["arms"]


# ------------------------------------------------------------------- train

def test_train_smoke(tmp_path, cfg):
    assert run("--config", cfg, "--out", tmp_path / "o", "train", "--vanilla") == 0
    assert (tmp_path / "o" / "train_vanilla.json").exists()
    assert len(read_csv(tmp_path / "o" / "train_vanilla.csv")) == 1 + 3


def test_train_epochs_one(tmp_path, cfg):
    cfg.write_text(SMALL.replace("train.epochs = 3", "train.epochs = 1"))
    assert run("--config", cfg, "--out", tmp_path / "o", "train") == 0
    meta = json.loads((tmp_path / "o" / "run_meta.json").read_text())
    t = meta["train_seconds"]
    assert meta["time_reduction"] == pytest.approx(1 - t["locality"] / t["vanilla"])
    summary = json.loads((tmp_path / "o" / "train_summary.json").read_text())
    assert summary["accuracy_loss"] == pytest.approx(
        summary["val_accuracy_vanilla"] - summary["val_accuracy_locality"])


def test_train_from_files(tmp_path, cfg):
    run("--config", cfg, "--out", tmp_path / "g", "generate")
    (tmp_path / "c.cfg").write_text("seed = 2\ngraph.path = g/graph.csr\ntrain.features = g/features.txt\n"
                                    "train.splits = g/splits.txt\ntrain.epochs = 2\nsampler.batch_size = 16\n"
                                    "sampler.subgraph_budget = 16\n")
    assert run("--config", tmp_path / "c.cfg", "--out", tmp_path / "o", "train", "--vanilla") == 0


def test_train_needs_features(tmp_path):
    from conftest import make
    save_csr(make([(0, 1), (1, 2)], 3), tmp_path / "g.csr")
    (tmp_path / "c.cfg").write_text("seed = 2\ngraph.path = g.csr\n")
    assert run("--config", tmp_path / "c.cfg", "--out", tmp_path / "o", "train") == 1


# ------------------------------------------------------------------- sweep

def test_sweep_grid(tmp_path, cfg):
    assert run("--config", cfg, "--out", tmp_path / "o", "--jobs", 2, "sweep",
               "--n-list", "2,3", "--s-list", "0.0,0.05") == 0
    rows = read_csv(tmp_path / "o" / "sweep.csv")
    assert rows[0] == ["n", "s", "train_seconds", "val_accuracy", "fallback_count"]
    assert [r[:2] for r in rows[1:]] == [["2", "0"], ["2", "0.05"], ["3", "0"], ["3", "0.05"]]


def test_sweep_single_cell_matches_train(tmp_path, cfg):
    cfg.write_text(SMALL.replace("locality.target_fraction = 0.4", "locality.s = 0.05"))
    run("--config", cfg, "--out", tmp_path / "t", "train", "--locality")
    run("--config", cfg, "--out", tmp_path / "s", "sweep", "--n-list", "2", "--s-list", "0.05")
    train_acc = json.loads((tmp_path / "t" / "train_locality.json").read_text())["epochs"][-1]["val_accuracy"]
    assert float(read_csv(tmp_path / "s" / "sweep.csv")[1][3]) == pytest.approx(train_acc, abs=1e-6)


def test_sweep_flushes_partial_rows(tmp_path, cfg):
    # s = 0.9 leaves fewer eligible train nodes than the budget: the second cell fails
    assert run("--config", cfg, "--out", tmp_path / "o", "sweep", "--n-list", "2",
               "--s-list", "0.0,0.9") == 1
    rows = read_csv(tmp_path / "o" / "sweep.csv")
    assert len(rows) == 2 and rows[1][:2] == ["2", "0"]
    assert json.loads((tmp_path / "o" / "error.json").read_text())["error"] == "BudgetError"
