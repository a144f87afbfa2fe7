import json

import pytest

from rsma_fbl.cli import main


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"n_tx": 2, "groups": [[1], [2]], "channel_variances": [1.0, 0.5], "snr_db": 20,
                                "l_total": 300, "strategy": "RSMA"}))
    return path


def test_validate_ok(config_file, capsys):
    assert main(["validate", str(config_file)]) == 0
    assert "ok" in capsys.readouterr().out


def test_validate_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_tx": 2, "groups": [[1, 2], [2]], "channel_variances": [1, 1], "p_tx": 1,
                               "l_total": 300}))
    assert main(["validate", str(bad)]) == 1
    assert "overlap" in capsys.readouterr().err


def test_sample_then_solve(config_file, tmp_path, capsys):
    ens = tmp_path / "ch.bin"
    assert main(["sample-channels", str(config_file), "--count", "2", "--out", str(ens)]) == 0
    out = tmp_path / "sol.json"
    assert main(["solve", str(config_file), "--channels", str(ens), "--index", "1", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["strategy"] == "RSMA" and doc["solution"]["mmf"] > 0


def test_solve_with_mismatched_channels(config_file, tmp_path):
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"n_tx": 3, "groups": [[1], [2]], "channel_variances": [1.0, 0.5], "p_tx": 10,
                                 "l_total": 300}))
    ens = tmp_path / "ch.bin"
    main(["sample-channels", str(other), "--count", "1", "--out", str(ens)])
    assert main(["solve", str(config_file), "--channels", str(ens)]) == 1


def test_sweep_and_gains(tmp_path, capsys):
    out = tmp_path / "sweep"
    code = main(["sweep", "--preset", "multicast-2x2", "--seeds", "1", "--blocklengths", "200", "--modes", "fin",
                 "--out", str(out)])
    assert code == 0
    assert (out / "records.csv").exists() and (out / "manifest.json").exists()
    assert main(["gains", str(out / "result.json"), "--a", "RSMA", "--b", "SDMA", "--l-n", "200"]) == 0
    assert "RSMA over SDMA" in capsys.readouterr().out
    assert main(["gains", str(out / "result.json"), "--a", "NOMA", "--b", "SDMA", "--l-n", "200"]) == 1


def test_sweep_partial_failure_exit_code(tmp_path, monkeypatch):
    import rsma_fbl.bench as bench

    def boom(ch, cfg):
        raise RuntimeError("no")

    monkeypatch.setattr(bench, "SOLVERS", {**bench.SOLVERS, "SDMA": boom})
    code = main(["sweep", "--preset", "multicast-2x2", "--seeds", "1", "--blocklengths", "200", "--modes", "fin",
                 "--out", str(tmp_path / "s")])
    assert code == 2


def test_sweep_invalid_spec(tmp_path):
    assert main(["sweep", "--preset", "coop-4tx", "--seeds", "1", "--blocklengths", "150", "--out",
                 str(tmp_path / "x")]) == 1
