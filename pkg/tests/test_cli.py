import json

import numpy as np
import pytest

from cqrelay import cli, io, netgen, relay


@pytest.fixture
def files(tmp_path):
    rng = np.random.default_rng(5)
    paths = {
        "copy": tmp_path / "copy.json",
        "const": tmp_path / "const.json",
        "rand": tmp_path / "rand.json",
        "uniform": tmp_path / "uniform.json",
        "pu": tmp_path / "pu.json",
    }
    io.save_channel(paths["copy"], relay.classical_copy_channel())
    io.save_channel(paths["const"], relay.constant_channel())
    io.save_channel(paths["rand"], relay.random_channel(rng))
    io.save_dist(paths["uniform"], np.full((2, 2), 0.25))
    io.save_dist(paths["pu"], rng.dirichlet(np.ones(8)).reshape(2, 2, 2))
    return {k: str(v) for k, v in paths.items()}


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_channel_round_trip_bit_exact(tmp_path, rng):
    ch = relay.random_channel(rng, n1=3, d2=1, d3=3)
    io.save_channel(tmp_path / "c.json", ch)
    back = io.load_channel(tmp_path / "c.json")
    assert back.dims == ch.dims and np.array_equal(back.family, ch.family)


def test_network_round_trip(tmp_path):
    net = netgen.fig2_network((2, 3, 2))
    io.save_network(tmp_path / "n.json", net)
    back = io.load_network(tmp_path / "n.json")
    assert back.vertices == net.vertices and back.msg_sizes == net.msg_sizes and back.ind == net.ind
    for v in net.vertices:
        assert np.array_equal(back.cpds[v], net.cpds[v])
    pdf = relay.scheme_network("partial-decode-forward", 2, np.full((2, 2, 2), 0.125), 2, 2)
    io.save_network(tmp_path / "p.json", pdf)
    assert io.load_network(tmp_path / "p.json").msg_sizes == pdf.msg_sizes


def test_missing_cell_named(tmp_path, files):
    doc = json.load(open(files["copy"]))
    doc["outputs"] = [e for e in doc["outputs"] if (e["x1"], e["x2"]) != (1, 0)]
    with pytest.raises(io.FormatError, match=r"\(x1, x2\) = \(1, 0\)"):
        io.channel_from_json(doc)


def test_unknown_major_version_rejected(files):
    doc = json.load(open(files["copy"]))
    doc["format_version"] = "2.0"
    with pytest.raises(io.FormatError, match="format_version"):
        io.channel_from_json(doc)
    doc["format_version"] = "1.7"
    io.channel_from_json(doc)


def test_atomic_write_leaves_no_temp(tmp_path):
    io.atomic_write(tmp_path / "a.txt", "x")
    io.atomic_write(tmp_path / "a.txt", "y")
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]
    assert (tmp_path / "a.txt").read_text() == "y"


def test_bounds_copy_and_constant(files, capsys, tmp_path):
    code, out, _ = run(["bounds", files["copy"], "--resolution", "9"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert set(doc["bounds"]) == set(relay.SCHEMES) | {"cutset"}
    for rep in doc["bounds"].values():
        assert rep["value"] == pytest.approx(1.0, abs=0.02)
        assert "diagnostics" in rep and "argmax" in rep
    out_file = tmp_path / "b.json"
    assert run(["bounds", files["const"], "--resolution", "9", "-o", out_file], capsys)[0] == 0
    doc = json.loads(out_file.read_text())
    assert all(abs(r["value"]) < 1e-12 for r in doc["bounds"].values())


def test_bounds_report_round_trip(files, capsys):
    _, out, _ = run(["bounds", files["rand"], "--resolution", "9"], capsys)
    doc = json.loads(out)
    assert json.loads(io.dumps(doc)) == doc
    direct = relay.all_bounds(io.load_channel(files["rand"]), cli.OptimizerConfig(resolution=9))
    for k, rep in direct.items():
        assert doc["bounds"][k]["value"] == pytest.approx(rep.value, abs=1e-12)


def test_malformed_file_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run(["bounds", bad], capsys)
    assert code == 2 and "invalid JSON" in err
    code, _, err = run(["bounds", tmp_path / "missing.json"], capsys)
    assert code == 2 and "error" in err


def test_restarts_need_seed(files, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["bounds", files["copy"], "--restarts", "3"])
    assert e.value.code == 2


def test_region_rows_and_grid(files, capsys, tmp_path):
    for b, rows in ((2, 3), (3, 15)):
        grid = tmp_path / f"g{b}.csv"
        code, out, _ = run(["region", files["rand"], files["pu"], "--b", b, "--grid-output", grid], capsys)
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "Jp,Jq,jp,jq,threshold" and len(lines) == rows + 1
        g = np.genfromtxt(grid, delimiter=",", names=True)
        assert g.size == 2500
        assert not np.any((g["in_S"] == 1) & (g["in_Sb"] == 0))


def test_region_cap_refuses_output(files, capsys, tmp_path):
    out = tmp_path / "r.csv"
    code, _, err = run(["region", files["rand"], files["pu"], "--b", 5, "--max-pairs", 10, "-o", out], capsys)
    assert code == 2 and "cap" in err and not out.exists()


def test_delta_huge_rate_and_fixture(files, capsys):
    code, out, _ = run(["delta", files["copy"], files["uniform"], "--scheme", "multihop",
                        "--rate", "2000", "--eps", "0.1", "--b", "2"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["delta"]["value"] == 1.0
    assert doc["inputs"]["rate"] == 2000 and doc["inputs"]["eps"] == 0.1
    _, out, _ = run(["delta", files["copy"], files["uniform"], "--scheme", "multihop",
                     "--rate", "0.5", "--eps", "0.1", "--b", "2"], capsys)
    rep = relay.finite_delta("multihop", relay.classical_copy_channel(), np.full((2, 2), 0.25), 0.5, 0.1, 2)
    assert json.loads(out)["delta"]["raw"] == rep.raw


def test_delta_pdf_needs_pair(files, capsys):
    code, out, _ = run(["delta", files["rand"], files["pu"], "--scheme", "partial-decode-forward",
                        "--rates", "0.1", "0.05", "--eps", "0.1", "--b", "2"], capsys)
    assert code == 0 and json.loads(out)["delta"]["mode"] == "exact"
    with pytest.raises(SystemExit):
        cli.main(["delta", files["rand"], files["pu"], "--scheme", "partial-decode-forward",
                  "--rate", "0.1", "--eps", "0.1", "--b", "2"])


def test_invalid_scheme_is_usage_error(files, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["delta", files["copy"], files["uniform"], "--scheme", "amplify",
                  "--rate", "1", "--eps", "0.1", "--b", "2"])
    assert e.value.code == 2
    assert "invalid choice" in capsys.readouterr().err


def test_simulate_requires_seed(files, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["simulate", files["copy"], files["uniform"], "--scheme", "multihop",
                  "--rate", "1", "--blocks", "3", "--trials", "5"])
    assert e.value.code == 2


def test_simulate_deterministic_and_sweep(files, capsys, tmp_path):
    args = ["simulate", files["const"], files["uniform"], "--scheme", "multihop", "--rate", "1",
            "--blocks", "3", "--trials", "50", "--seed", "7"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(args + ["-o", a], capsys)
    run(args + ["-o", b], capsys)
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["reports"][0]["seed"] == 7 and doc["inputs"]["trials"] == 50
    code, out, _ = run(["simulate", files["copy"], files["uniform"], "--scheme", "multihop",
                        "--rates", "0", "1", "--n", "1", "--blocks", "3", "--trials", "30",
                        "--seed", "1", "--format", "csv"], capsys)
    rows = out.strip().splitlines()
    assert code == 0 and rows[0] == "rate,n,error,stderr" and len(rows) == 3
    assert float(rows[1].split(",")[2]) == 0.0


def test_check_all_passes(capsys):
    code, out, _ = run(["check"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["passed"]
    names = {r["name"] for r in doc["results"]}
    assert "cmi-identity" in names
    cmi = [r for r in doc["results"] if r["name"] == "cmi-identity"][0]
    assert cmi["deviation"] <= cmi["tolerance"] == 1e-9


def test_check_reports_corrupted_cpd(tmp_path, capsys):
    path = tmp_path / "net.json"
    io.save_network(path, netgen.fig2_network())
    doc = json.loads(path.read_text())
    doc["cpds"]["X2"] = [0.7, 0.4, 0.2, 0.8]
    path.write_text(json.dumps(doc))
    code, out, _ = run(["check", "--suite", "netgen", "--network", path], capsys)
    res = [r for r in json.loads(out)["results"] if r["name"] == "input-network-valid"][0]
    assert code == 1 and not res["passed"] and "X2" in res["detail"]


def test_check_rejects_unknown_suite():
    with pytest.raises(SystemExit):
        cli.main(["check", "--suite", "everything"])
