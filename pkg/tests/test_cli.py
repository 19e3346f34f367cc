from __future__ import annotations

import csv
import struct

import numpy as np
import pytest

from pushrelabel_ot.cli import AGG_FIELDS, BENCH_FIELDS, main


def run(argv, capsys):
    rc = main(argv)
    out = capsys.readouterr()
    return rc, out.out, out.err


def field(out, key):
    for line in out.splitlines():
        if line.startswith(key + ":"):
            return line.split(":", 1)[1].strip()
    raise KeyError(key)


def test_gen_and_solve_cached(tmp_path, capsys):
    path = tmp_path / "i.bin"
    rc, out, _ = run(["gen", "--kind", "square", "--n", "60", "--seed", "7", "--out", str(path)], capsys)
    assert rc == 0 and "n_a=60" in out and path.exists()
    rc, out, _ = run(["solve", "--instance", str(path), "--eps", "0.1", "--verify"], capsys)
    assert rc == 0
    assert field(out, "verify").startswith("pass")
    assert float(field(out, "cost")) <= float(field(out, "oracle_cost")) + 3 * 0.1 * 60


@pytest.mark.parametrize("solver", ["pushrelabel", "pushrelabel-ot", "sinkhorn", "exact-ot"])
def test_solvers_verify(solver, capsys):
    rc, out, _ = run(["solve", "--solver", solver, "--n", "12", "--seed", "1", "--eps", "0.2",
                      "--verify"], capsys)
    assert rc == 0, out
    assert field(out, "verify").startswith("pass")


def test_hungarian_equals_brute_force(capsys):
    rc, out, _ = run(["solve", "--solver", "hungarian", "--n", "8", "--seed", "4", "--verify"], capsys)
    assert rc == 0
    assert float(field(out, "cost")) == pytest.approx(float(field(out, "oracle_cost")))


def test_exit_codes(tmp_path, capsys):
    rc, _, err = run(["solve", "--solver", "sinkhorn", "--n", "10", "--reg", "1e-9"], capsys)
    assert rc == 4 and "regularization too small" in err
    assert run(["solve", "--n", "10", "--eps", "1.5"], capsys)[0] == 2
    assert run(["solve", "--n", "10"], capsys)[0] == 2
    (tmp_path / "junk").write_bytes(b"nope")
    assert run(["solve", "--instance", str(tmp_path / "junk"), "--eps", "0.1"], capsys)[0] == 3
    assert run(["gen", "--kind", "mnist", "--n", "2", "--images", str(tmp_path / "missing"),
                "--out", str(tmp_path / "o")], capsys)[0] == 3


def test_mnist_via_env_dir(tmp_path, monkeypatch, capsys):
    imgs = np.random.default_rng(0).integers(1, 256, (12, 28, 28), dtype=np.uint8)
    (tmp_path / "imgs.idx").write_bytes(struct.pack(">IIII", 0x803, 12, 28, 28) + imgs.tobytes())
    monkeypatch.setenv("PUSHRELABEL_OT_DATA", str(tmp_path))
    monkeypatch.chdir(tmp_path.parent)
    rc, out, _ = run(["solve", "--kind", "mnist", "--images", "imgs.idx", "--n", "5",
                      "--eps", "0.25", "--verify"], capsys)
    assert rc == 0 and field(out, "n") == "5"


def test_no_normalize_reports_raw_units(capsys):
    args = ["solve", "--solver", "hungarian", "--n", "10", "--seed", "2"]
    _, norm, _ = run(args, capsys)
    _, raw, _ = run(args + ["--no-normalize"], capsys)
    assert float(raw.split("cost: ")[1].split()[0]) == pytest.approx(
        float(norm.split("cost: ")[1].split()[0]) * np.sqrt(2))


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_bench_csv_and_aggregate(tmp_path, capsys):
    out = tmp_path / "b.csv"
    rc, _, _ = run(["bench", "--n", "10,20", "--eps", "0.2,0.1", "--runs", "3",
                    "--solvers", "pushrelabel,sinkhorn", "--out", str(out), "--verify",
                    "--quiet"], capsys)
    assert rc == 0
    rows = read_csv(out)
    assert list(rows[0].keys()) == BENCH_FIELDS
    assert len(rows) == 2 * 2 * 3 * 2
    assert all(r["status"] == "ok" for r in rows)
    agg = read_csv(tmp_path / "b_agg.csv")
    assert list(agg[0].keys()) == AGG_FIELDS and len(agg) == 8
    for cell in agg:
        times = [float(r["time_ms"]) for r in rows if (r["solver"], r["n"], r["eps"]) ==
                 (cell["solver"], cell["n"], cell["eps"])]
        assert len(times) == 3
        assert float(cell["mean_time_ms"]) == pytest.approx(sum(times) / 3, rel=1e-12)


def test_bench_records_underflow(tmp_path, capsys):
    out = tmp_path / "b.csv"
    rc, _, _ = run(["bench", "--n", "30", "--eps", "0.001", "--runs", "1", "--solvers", "sinkhorn",
                    "--out", str(out), "--quiet"], capsys)
    assert rc == 0
    assert read_csv(out)[0]["status"] == "underflow"


def test_solve_csv_deterministic(tmp_path, capsys):
    out = tmp_path / "s.csv"
    for _ in range(2):
        run(["solve", "--n", "40", "--seed", "5", "--eps", "0.05", "--csv", str(out)], capsys)
    rows = read_csv(out)
    assert len(rows) == 2
    assert rows[0]["cost"] == rows[1]["cost"] and rows[0]["phases"] == rows[1]["phases"]
