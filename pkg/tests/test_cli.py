import struct

import numpy as np
import pytest

from proxgraph.cli import main
from proxgraph.data import load_vectors, read_ivecs


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A tiny end-to-end workspace: dataset, queries, ground truth, index."""
    root = tmp_path_factory.mktemp("cli")
    base = str(root / "base.fvecs")
    queries = str(root / "q.fvecs")
    qids = str(root / "q.ids.ivecs")
    assert main(["gen", "--mode", "powerlaw", "--n", "400", "--d", "8",
                 "--seed", "3", "--out", base]) == 0
    assert main(["gen", "--mode", "noise", "--data", base, "--m", "10",
                 "--sigma2", "0.01", "--seed", "4", "--out", queries,
                 "--out-ids", qids]) == 0
    assert main(["gt", "--data", base, "--queries", queries, "--k", "10",
                 "--out-ids", str(root / "gt.ivecs"),
                 "--out-dists", str(root / "gt.fvecs")]) == 0
    assert main(["build", "--data", base, "--builder", "ii", "--R", "8",
                 "--Lbuild", "32", "--nd", "rnd", "--ss", "ks:k=16",
                 "--seed", "5", "--out", str(root / "g.idx")]) == 0
    return root


def test_gen_outputs_loadable(workdir):
    ds = load_vectors(str(workdir / "base.fvecs"))
    assert (ds.n, ds.d) == (400, 8)
    ids = read_ivecs(str(workdir / "q.ids.ivecs"))
    assert ids.shape == (10, 1)


def test_build_emits_stats_csv(workdir, capsys):
    assert main(["build", "--data", str(workdir / "base.fvecs"), "--builder", "ii",
                 "--R", "8", "--Lbuild", "32", "--seed", "5",
                 "--out", str(workdir / "g2.idx")]) == 0
    out = capsys.readouterr().out.strip().split("\n")
    assert out[0] == "builder,n,d,R,Lbuild,nd,ss,dist_calcs,wall_ms,peak_mem_bytes"
    fields = out[1].split(",")
    assert fields[0] == "ii" and fields[1] == "400"
    assert int(fields[7]) > 0


def test_search_prints_per_query_rows(workdir, capsys):
    assert main(["search", "--data", str(workdir / "base.fvecs"),
                 "--index", str(workdir / "g.idx"),
                 "--queries", str(workdir / "q.fvecs"), "--k", "5", "--L", "50",
                 "--gt-ids", str(workdir / "gt.ivecs"),
                 "--gt-dists", str(workdir / "gt.fvecs")]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0].startswith("query,k,L,nprobe,recall")
    assert len(lines) == 11
    first = lines[1].split(",")
    assert float(first[4]) >= 0.0  # recall column populated


def test_bench_writes_csv(workdir, capsys):
    out_csv = str(workdir / "bench.csv")
    out_gp = str(workdir / "bench.gp")
    assert main(["bench", "--data", str(workdir / "base.fvecs"),
                 "--index", str(workdir / "g.idx"),
                 "--queries", str(workdir / "q.fvecs"),
                 "--gt-ids", str(workdir / "gt.ivecs"),
                 "--gt-dists", str(workdir / "gt.fvecs"),
                 "--k", "5", "--L-grid", "10,20", "--repeats", "1", "--trim", "0",
                 "--out", out_csv, "--gnuplot", out_gp]) == 0
    with open(out_csv) as f:
        lines = f.read().strip().split("\n")
    assert len(lines) == 3
    assert lines[0].startswith("dataset,n,d,builder")
    with open(out_gp) as f:
        script = f.read()
    assert "plot" in script and out_csv in script


def test_stats_reports_complexity(workdir, capsys):
    assert main(["stats", "--data", str(workdir / "base.fvecs"),
                 "--queries", str(workdir / "q.fvecs"), "--k", "20",
                 "--tag", "tiny"]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0] == "dataset,k,mean_lid,mean_lrc,excluded"
    tag, k, lid_v, lrc_v, excluded = lines[1].split(",")
    assert tag == "tiny" and k == "20"
    assert float(lid_v) > 0 and float(lrc_v) > 0


def test_dc_builder_and_partitioned_search(workdir, capsys):
    idx = str(workdir / "dc.idx")
    assert main(["build", "--data", str(workdir / "base.fvecs"), "--builder", "dc",
                 "--partitions", "2", "--R", "8", "--Lbuild", "32",
                 "--seed", "6", "--out", idx]) == 0
    capsys.readouterr()
    assert main(["search", "--data", str(workdir / "base.fvecs"), "--index", idx,
                 "--queries", str(workdir / "q.fvecs"), "--k", "5", "--L", "50",
                 "--nprobe", "2"]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert len(lines) == 11


def test_np_builder(workdir, capsys):
    idx = str(workdir / "np.idx")
    assert main(["build", "--data", str(workdir / "base.fvecs"), "--builder", "np",
                 "--np-k", "8", "--np-iters", "6", "--seed", "7",
                 "--out", idx]) == 0
    out = capsys.readouterr().out.strip().split("\n")
    assert out[1].split(",")[3] == "8"  # degree column reflects np_k
    assert main(["search", "--data", str(workdir / "base.fvecs"), "--index", idx,
                 "--queries", str(workdir / "q.fvecs"), "--k", "5", "--L", "50"]) == 0


def test_config_file_supplies_defaults(workdir, tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("mode=powerlaw\nn=50\nd=4\nseed=9\n# comment\n")
    out = str(tmp_path / "cfg.fvecs")
    assert main(["gen", "--config", str(cfg), "--out", out]) == 0
    assert load_vectors(out).n == 50
    # explicit flags beat the config file
    out2 = str(tmp_path / "cfg2.fvecs")
    assert main(["gen", "--config", str(cfg), "--n", "70", "--out", out2]) == 0
    assert load_vectors(out2).n == 70


class TestExitCodes:
    def test_parameter_error_is_2(self, workdir, capsys):
        code = main(["gt", "--data", str(workdir / "base.fvecs"),
                     "--queries", str(workdir / "q.fvecs"), "--k", "100000",
                     "--out-ids", "x.ivecs", "--out-dists", "x.fvecs"])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_missing_file_is_3(self, tmp_path):
        assert main(["gt", "--data", str(tmp_path / "nope.fvecs"),
                     "--queries", str(tmp_path / "nope.fvecs"), "--k", "5",
                     "--out-ids", "x", "--out-dists", "y"]) == 3

    def test_data_error_is_4(self, tmp_path):
        bad = tmp_path / "nan.fvecs"
        bad.write_bytes(struct.pack("<iff", 2, 1.0, float("nan")))
        assert main(["stats", "--data", str(bad),
                     "--queries", str(bad), "--k", "2"]) == 4
