import csv
import json

import numpy as np
import pytest

from sumrate import cli

FIVE = {"mode": "cdma", "powers": [30, 15, 10, 7, 3], "limits": {"codes": [2] * 5},
        "constants": {"N": 8, "noise_variance": 1.0}}
FIVE_FDMA = {"mode": "fdma", "powers": [30, 15, 10, 7, 3], "limits": {"bandwidth": [0.125] * 5},
             "constants": {"total_bandwidth": 0.5, "noise_psd": 1.0}}


@pytest.fixture
def write(tmp_path):
    def _write(doc, name="inst.json"):
        path = tmp_path / name
        path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
        return str(path)
    return _write


def test_solve_five_user_report(write, capsys):
    assert cli.main(["solve", write(FIVE_FDMA)]) == 0
    out = capsys.readouterr().out
    assert "K1=2  K2=3" in out
    for value in ("0.125", "0.087499999999999994", "0.037499999999999999"):
        assert value in out
    assert "KKT certificate: valid" in out


def test_solve_mincount_counts(write, capsys):
    assert cli.main(["solve", write(FIVE), "--strategy", "mincount", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["n_k_star"] == [2, 2, 2, 2, 1]
    assert doc["n_orthogonal"] == [2, 2, 2, 1, 0]


@pytest.mark.parametrize("doc", [FIVE, FIVE_FDMA,
                                 {**FIVE, "mode": "cdma-async", "delays": [0, 1, 2, 3, 4]},
                                 {"mode": "tdma", "powers": [30, 15, 10, 7, 3],
                                  "limits": {"duty": [0.25] * 5},
                                  "constants": {"total_bandwidth": 0.5}}])
def test_json_round_trip(write, capsys, doc):
    path = write(doc)
    assert cli.main(["solve", path, "--json", "--trace", "--complex"]) == 0
    parsed = json.loads(capsys.readouterr().out)
    assert parsed == cli.solve_document(cli.load_instance(path), None, True, True)


def test_tdma_duty_cycles(write, capsys):
    doc = {"mode": "tdma", "powers": [30, 15, 10, 7, 3], "limits": {"duty": [0.25] * 5},
           "constants": {"total_bandwidth": 0.5}}
    cli.main(["solve", write(doc), "--json"])
    out = json.loads(capsys.readouterr().out)
    assert np.allclose(out["t_star"], [0.25, 0.25, 0.25, 0.175, 0.075], atol=1e-12)
    assert out["kkt_valid"]


def test_zero_power_fdma(write, capsys):
    doc = {"mode": "fdma", "powers": [1, 0], "limits": {"bandwidth": [1, 1]}}
    assert cli.main(["solve", write(doc), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["w_star"] == [1.0, 0.0]


def test_csv_output(write, tmp_path, capsys):
    out_dir = tmp_path / "out"
    assert cli.main(["solve", write(FIVE), "--csv", str(out_dir), "--trace"]) == 0
    rows = list(csv.DictReader(open(out_dir / "allocation.csv")))
    assert [float(r["w_k_star"]) for r in rows] == [0.125, 0.125, 0.125, 0.0875, 0.0375]
    assert rows[3]["w_k_star"] == "0.087499999999999994"
    trace = list(csv.DictReader(open(out_dir / "trace.csv")))
    assert abs(float(trace[0]["due_share"]) - 30 / 130) < 1e-15
    streams = list(csv.DictReader(open(out_dir / "streams.csv")))
    assert len(streams) == 10


def test_unsorted_input_shows_both_indices(write, capsys):
    doc = {**FIVE_FDMA, "powers": [7, 30, 3, 15, 10]}
    cli.main(["solve", write(doc), "--json"])
    out = json.loads(capsys.readouterr().out)
    assert out["permutation"] == [1, 3, 4, 0, 2]
    assert out["w_star"][0] == pytest.approx(0.0875)


@pytest.mark.parametrize("text", ["{bad json", "[1, 2]", json.dumps({"mode": "ofdm"}),
                                  json.dumps({**FIVE, "limits": {"bandwidth": [1] * 5}}),
                                  json.dumps({**FIVE, "limits": {"codes": [1.5] * 5}}),
                                  json.dumps({**FIVE, "powers": "many"}),
                                  json.dumps({**FIVE, "constants": {"noise_variance": 1}}),
                                  json.dumps({**FIVE, "mode": "cdma-async"})])
def test_parse_errors_exit_2(write, text, capsys):
    assert cli.main(["solve", write(text)]) == 2


def test_missing_file_exit_2(tmp_path):
    assert cli.main(["solve", str(tmp_path / "nope.json")]) == 2


@pytest.mark.parametrize("doc", [{**FIVE, "powers": [1, -1, 1, 1, 1]},
                                 {**FIVE, "powers": [0, 0, 0, 0, 0]},
                                 {**FIVE, "constants": {"N": 0}},
                                 {**FIVE_FDMA, "limits": {"bandwidth": [0] * 5}},
                                 {**FIVE, "mode": "cdma-async", "delays": [0, 9, 0, 0, 0]}])
def test_invalid_instances_exit_3(write, doc, capsys):
    assert cli.main(["solve", write(doc)]) == 3
    assert capsys.readouterr().err.startswith("invalid instance")


def test_sequences_five_user(write, tmp_path, capsys):
    path = write({**FIVE, "strategy": "mincount"})
    out = tmp_path / "S.csv"
    assert cli.main(["sequences", path, "--seed", "1", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert len(rows) == 8 and all(len(r) == 10 for r in rows)
    assert "gram check: pass" in capsys.readouterr().out
    first = out.read_bytes()
    cli.main(["sequences", path, "--seed", "1", "--out", str(out)])
    assert out.read_bytes() == first


def test_sequences_seed_from_environment(write, tmp_path, monkeypatch, capsys):
    path = write(FIVE)
    cli.main(["sequences", path, "--seed", "4", "--out", str(tmp_path / "a.csv")])
    monkeypatch.setenv(cli.SEED_ENV, "4")
    cli.main(["sequences", path, "--out", str(tmp_path / "b.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_sequences_orthogonal_instance(write, tmp_path, capsys):
    doc = {"mode": "cdma", "powers": [1, 1], "limits": {"codes": [1, 1]}, "constants": {"N": 4}}
    out = tmp_path / "S.csv"
    assert cli.main(["sequences", write(doc), "--out", str(out)]) == 0
    S = np.loadtxt(out, delimiter=",")
    assert np.allclose(S.T @ S, 4 * np.eye(2), atol=1e-12)


def test_sequences_rejects_fdma(write, tmp_path):
    assert cli.main(["sequences", write(FIVE_FDMA), "--out", str(tmp_path / "S.csv")]) == 3


def test_sequences_gram_failure_exit_4(write, tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(cli.sequences, "GRAM_TOL", -1.0)
    assert cli.main(["sequences", write(FIVE), "--out", str(tmp_path / "S.csv")]) == 4


def test_curves_loading_saturates(tmp_path, capsys):
    out = tmp_path / "l.csv"
    assert cli.main(["curves", "loading", "--K", "40", "80", "160", "--N", "128",
                     "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert list(rows[0]) == ["nbar", "K=40", "K=80", "K=160"]
    for K in (40, 80, 160):
        mac = 0.5 * np.log2(1 + 10 * K)
        last = float(rows[-1][f"K={K}"])
        assert last == pytest.approx(mac, rel=1e-12)


def test_curves_ebn0_flat_for_larger_nbar(tmp_path, capsys):
    out = tmp_path / "e.csv"
    assert cli.main(["curves", "ebn0", "--nbar", "1", "2", "4", "--load", "0.625",
                     "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    for r in rows:
        assert r["nbar=2"] == r["nbar=4"]
        assert float(r["nbar=1"]) <= float(r["nbar=2"])


def test_curves_fading_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["curves", "fading", "--trials", "100", "--seed", "7", "--Ns", "100", "50"]
    assert cli.main(args + ["--out", str(a), "--per-trial", str(tmp_path / "t.csv")]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(open(a)))
    assert list(rows[0]) == ["load", "nbar=1", "nbar=2", "nbar=4", "unrestricted"]
    trials = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert len(trials) == 2 * 3 * 100


@pytest.mark.parametrize("args", [["curves", "fading", "--trials", "0"],
                                  ["curves", "loading", "--K", "-3"],
                                  ["curves", "weird"],
                                  ["curves", "fading", "--K", "10", "20"]])
def test_curves_bad_params_exit_2(tmp_path, args, capsys):
    try:
        code = cli.main(args + ["--out", str(tmp_path / "x.csv")])
    except SystemExit as exc:
        code = exc.code
    assert code == 2


def test_fmt_round_trips():
    rng = np.random.default_rng(0)
    for x in rng.standard_normal(200) * 10.0 ** rng.integers(-30, 30, 200):
        assert float(cli.fmt(x)) == x
