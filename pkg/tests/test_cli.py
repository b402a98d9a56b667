import csv

import pytest

from cellfree_ra.cli import main
from cellfree_ra.config import parse_config, spec_from_dict

TINY = """\
Q = 7
N = 2
M = 2
cell_radius = 250.0
user_density = 25.0
tau_p = 4
seed = {seed}
slots = 2
realizations = 1
average_last = 2
schemes = ["du", "conjugate"]
leakage = "statistical"
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_empty_config_gives_defaults(tmp_path):
    spec = parse_config(write(tmp_path, ""))
    n = spec.network
    assert (n.Q, n.N, n.M, n.tau_p, n.tau_d) == (7, 10, 8, 32, 200)
    assert n.p_du_dbm == 30.0 and n.cell_radius == 500.0 and n.user_density == 200.0
    assert spec.schemes == ["du", "cu", "zf", "conjugate"]
    assert [m.kind for m in spec.leakage] == ["standard"]
    assert (spec.run.slots, spec.run.average_last) == (30, 20)


def test_invalid_values_name_the_key(tmp_path, capsys):
    assert main(["run", str(write(tmp_path, "tau_p = 0\n")), "--out", str(tmp_path / "o")]) == 2
    assert "tau_p" in capsys.readouterr().err
    with pytest.raises(ValueError, match="traffic.P_h"):
        spec_from_dict({"traffic.P_h": 1.5})
    with pytest.raises(ValueError, match="unknown config key 'foo'"):
        spec_from_dict({"foo": 1})
    with pytest.raises(ValueError, match="N"):
        spec_from_dict({"N": "ten"})


def test_traffic_settings_carried(tmp_path):
    text = 'leakage = "traffic"\n[traffic]\nmode = "hotspots"\nP_h = 0.4\nsigma_h = 80.0\n'
    spec = parse_config(write(tmp_path, text))
    assert spec.leakage[0].kind == "traffic"
    t = spec.traffic
    assert (t.mode, t.P_h, t.sigma_h) == ("hotspots", 0.4, 80.0)
    assert (t.n_hotspots_min, t.n_hotspots_max) == (4, 6)


@pytest.fixture(scope="module")
def run_dirs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    cfg = write(base, TINY.format(seed=11))
    out = {}
    for name, extra in (("a", []), ("b", []), ("conv", ["--convergence"])):
        out[name] = base / name
        assert main(["run", str(cfg), "--out", str(out[name]), *extra]) == 0
    other = write(base, TINY.format(seed=12), "other.toml")
    out["other"] = base / "other"
    assert main(["run", str(other), "--out", str(out["other"])]) == 0
    return out


FILES = ["slot_metrics.csv", "user_se.csv", "trace.csv", "counters.csv", "flags.csv", "summary.csv",
         "config.resolved.toml"]


def test_run_writes_all_outputs(run_dirs):
    for f in FILES:
        assert (run_dirs["a"] / f).is_file()
    slots = rows(run_dirs["a"] / "slot_metrics.csv")
    assert {r["scheme"] for r in slots} == {"du", "conjugate"}
    per = {}
    for r in slots:
        per.setdefault(r["scheme"], set()).add((r["realization"], r["slot"]))
    assert per["du"] == per["conjugate"]


def test_rerun_is_byte_identical(run_dirs):
    for f in FILES:
        assert (run_dirs["a"] / f).read_bytes() == (run_dirs["b"] / f).read_bytes()


def test_resolved_config_roundtrips(run_dirs):
    spec = parse_config(run_dirs["a"] / "config.resolved.toml")
    assert spec.network.seed == 11 and spec.schemes == ["du", "conjugate"]


def test_convergence_trace_rows(run_dirs):
    assert rows(run_dirs["a"] / "trace.csv") == []
    trace = rows(run_dirs["conv"] / "trace.csv")
    assert trace and {r["scheme"] for r in trace} == {"du"}
    by_node = {}
    for r in trace:
        by_node.setdefault((r["slot"], r["node"]), []).append(int(r["iteration"]))
    for its in by_node.values():
        assert its == list(range(1, len(its) + 1))


def test_compare_identical_inputs(run_dirs, tmp_path):
    out = tmp_path / "cmp.csv"
    assert main(["compare", str(run_dirs["a"]), str(run_dirs["b"]), "--out", str(out)]) == 0
    table = rows(out)
    same = [r for r in table if r["kind"] == "ratio" and r["dir_a"] != r["dir_b"]
            and r["scheme_a"] == r["scheme_b"]]
    assert same and all(float(r["value"]) == 1.0 for r in same)
    cross = [r for r in table if r["kind"] == "ratio" and r["scheme_a"] == "du"
             and r["scheme_b"] == "conjugate"]
    assert all(float(r["value"]) > 1.0 for r in cross)


def test_compare_errors(run_dirs, tmp_path, capsys):
    missing = tmp_path / "nope"
    assert main(["compare", str(run_dirs["a"]), str(missing), "--out", str(tmp_path / "x.csv")]) == 2
    assert str(missing) in capsys.readouterr().err
    assert main(["compare", str(run_dirs["a"]), str(run_dirs["other"]),
                 "--out", str(tmp_path / "y.csv")]) == 2
    assert "seed mismatch" in capsys.readouterr().err
