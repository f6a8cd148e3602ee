import csv
import io
import json
import subprocess
import sys

import pytest

from mpdo_approx import cli
from mpdo_approx.config import ExperimentConfig


def run_cli(tmp_path, *args):
    return cli.main(list(args) + ["--out", str(tmp_path)])


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_compress_rows_follow_the_column_contract(tmp_path):
    code = run_cli(tmp_path, "compress", "--set", "state.N=6", "--set", "compress.dps=1, 2, 4, 8")
    assert code == 0
    rows = read_csv(tmp_path / "compress.csv")
    assert list(rows[0]) == cli.COLUMNS["compress"] + ["status", "config_hash"]
    assert [int(r["D_p"]) for r in rows] == [1, 2, 4, 8]
    for r in rows:
        assert r["status"] == "ok"
        assert float(r["eps_measured"]) <= float(r["eps_bound"])
        assert r["K"] == "3"
    assert len({r["config_hash"] for r in rows}) == 1


def test_scan_of_product_state_is_zero(tmp_path):
    code = run_cli(tmp_path, "scan", "--set", "state.source=test", "--set", "state.kind=product",
                   "--set", "state.N=4", "--set", "scan.alphas=0.5, 2.0")
    assert code == 0
    rows = read_csv(tmp_path / "scan.csv")
    assert len(rows) == 6
    assert all(abs(float(r["value"])) <= 1e-12 for r in rows)


def test_asymptotics_column_is_decreasing(tmp_path):
    assert run_cli(tmp_path, "asymptotics", "--format", "both") == 0
    rows = read_csv(tmp_path / "asymptotics.csv")
    logs = [float(r["log_bound"]) for r in rows]
    assert [float(r["N"]) for r in rows] == [2.0**e for e in range(4, 21)]
    assert all(b < a for a, b in zip(logs, logs[1:]))
    doc = json.loads((tmp_path / "asymptotics.json").read_text())
    assert doc["details"]["strictly_decreasing"] is True
    assert float(rows[0]["Delta"]) == 1.0


def test_truncate_marks_oversized_ranks(tmp_path):
    assert run_cli(tmp_path, "truncate", "--set", "state.N=3", "--set", "truncate.dps=1, 8") == 0
    rows = read_csv(tmp_path / "truncate.csv")
    skipped = [r for r in rows if r["status"].startswith("skipped")]
    ok = [r for r in rows if r["status"] == "ok"]
    assert skipped and ok
    assert all(float(r["eta"]) <= float(r["eta_bound"]) + 1e-9 for r in ok)


def test_eop_task(tmp_path):
    code = run_cli(tmp_path, "eop", "--set", "state.N=3", "--set", "eop.restarts=1",
                   "--set", "eop.max_iters=20", "--set", "eop.cuts=1")
    assert code == 0
    (row,) = read_csv(tmp_path / "eop.csv")
    assert float(row["value"]) <= float(row["canonical_value"]) + 1e-9


def test_bench_task(tmp_path):
    assert run_cli(tmp_path, "bench", "--set", "bench.sizes=4", "--set", "bench.repeats=1") == 0
    rows = read_csv(tmp_path / "bench.csv")
    assert {r["kernel"] for r in rows} == {"smoothed_nuclear", "alternating_projections"}


def test_outputs_are_byte_identical_without_timings(tmp_path):
    outs = []
    d = tmp_path / "run"
    for _ in range(2):
        code = cli.main(["compress", "--out", str(d), "--format", "both", "--seed", "5",
                         "--set", "state.N=5", "--set", "compress.dps=2, 3",
                         "--set", "output.timings=false"])
        assert code == 0
        doc = json.loads((d / "compress.json").read_text())
        doc["header"].pop("timestamp")
        outs.append(((d / "compress.csv").read_bytes(), json.dumps(doc, sort_keys=True)))
    assert outs[0] == outs[1]
    assert b"wall_ms" in outs[0][0]


def test_json_mirrors_csv_and_nests_levels(tmp_path):
    assert run_cli(tmp_path, "compress", "--format", "json", "--set", "state.N=4",
                   "--set", "compress.dps=2") == 0
    doc = json.loads((tmp_path / "compress.json").read_text())
    assert doc["header"]["task"] == "compress"
    assert ExperimentConfig.loads(doc["header"]["config"]).digest() == doc["header"]["config_hash"]
    (rep,) = doc["details"]["reports"]
    assert rep["level_errors"] and rep["merges"][0]["level"] == 2
    assert doc["rows"][0]["D_p"] == 2


def test_mpdo_files_written_and_readable(tmp_path):
    from mpdo_approx.mpdo import MPDO, reconstruct

    assert run_cli(tmp_path, "compress", "--set", "state.N=4", "--set", "compress.dps=2",
                   "--set", "compress.write_mpdo=true") == 0
    m = MPDO.loads((tmp_path / "mpdo_Dp2.txt").read_text())
    assert abs(reconstruct(m).matrix.trace() - 1) < 1e-12


def test_config_file_and_flags(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("task = compress\nstate.N = 3\ncompress.dps = 1\n")
    assert cli.main(["compress", "--config", str(cfgfile), "--out", str(tmp_path / "o"),
                     "--threads", "2"]) == 0
    assert read_csv(tmp_path / "o" / "compress.csv")[0]["D_p"] == "1"


def test_dump_config_round_trips(capsys):
    assert cli.main(["scan", "--set", "scan.alphas=0.3", "--dump-config"]) == 0
    text = capsys.readouterr().out
    cfg = ExperimentConfig.loads(text)
    assert cfg["task"] == "scan" and cfg["scan.alphas"] == (0.3,)


@pytest.mark.parametrize("args", [
    ["--set", "state.colour=red"],
    ["--set", "state.N=many"],
    ["--set", "compress.mode=frobenius"],
    ["--set", "state.model=potts"],
    ["--set", "noequals"],
    ["--config", "/nonexistent/run.cfg"],
])
def test_config_errors_exit_2(tmp_path, args):
    assert run_cli(tmp_path, "compress", *args) == 2


def test_resource_cap_exits_3(tmp_path):
    assert run_cli(tmp_path, "compress", "--set", "state.N=13") == 3


def test_bound_violation_exits_4(tmp_path, monkeypatch):
    import mpdo_approx.compressor as comp

    monkeypatch.setattr(comp, "global_bound", lambda *a, **k: 0.0)
    code = run_cli(tmp_path, "compress", "--set", "state.N=4", "--set", "compress.dps=1")
    assert code == 4
    assert read_csv(tmp_path / "compress.csv")[0]["status"] == "bound_violated"


def test_bound_violation_in_hs_mode_is_only_recorded(tmp_path, monkeypatch):
    import mpdo_approx.compressor as comp

    monkeypatch.setattr(comp, "global_bound", lambda *a, **k: 0.0)
    code = run_cli(tmp_path, "compress", "--set", "state.N=4", "--set", "compress.dps=1",
                   "--set", "compress.mode=hs")
    assert code == 0


def test_partial_failure_keeps_going(tmp_path):
    code = run_cli(tmp_path, "compress", "--set", "state.N=3", "--set", "compress.dps=0, 1")
    assert code == 0
    rows = read_csv(tmp_path / "compress.csv")
    assert rows[0]["status"] == "error:DomainError" and rows[1]["status"] == "ok"


def test_total_failure_exits_1(tmp_path):
    assert run_cli(tmp_path, "compress", "--set", "state.N=3", "--set", "compress.dps=0") == 1


def test_plot_writes_svg(tmp_path):
    assert run_cli(tmp_path, "compress", "--set", "state.N=4", "--set", "compress.dps=1, 2, 4") == 0
    svg = tmp_path / "eps.svg"
    assert cli.main(["plot", str(tmp_path / "compress.csv"), "--output", str(svg)]) == 0
    text = svg.read_text()
    assert text.startswith("<svg") and text.count("<polyline") == 2
    assert cli.main(["plot", str(tmp_path / "missing.csv")]) == 2


def test_csv_cells_are_locale_free():
    text = cli.csv_text("bench", [{"kernel": "k", "n": 4, "D": 2, "backend": "numpy",
                                   "seconds": 0.1, "max_abs_diff": 1e-300, "status": "ok"}], "abc")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[1] == ["k", "4", "2", "numpy", "0.10000000000000001", "1e-300", "ok", "abc"]


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mpdo_approx.cli", "asymptotics", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.strip().endswith("asymptotics.csv")
