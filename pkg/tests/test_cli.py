import csv
import subprocess
import sys

import numpy as np
import pytest

from cqitestbed import cli, crnn, runtime
from cqitestbed.gridio import CqiGrid, SinrGrid, load_grid


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--preset", "vehicle", "--duration-ms", 1500, "--seed", 4,
               "-o", d / "veh.sgr", "--channel-out", d / "veh.npz") == 0
    assert run("map", d / "veh.sgr", "-o", d / "veh.cqi") == 0
    assert run("train", d / "veh.sgr", "--window", 8, "--hidden", 8, "--filters", 2,
               "--epochs", 2, "--max-windows", 300, "-o", d / "m.crn",
               "--history", d / "hist.csv", "--figure", d / "loss.png") == 0
    return d


def test_synth_outputs(work):
    g = load_grid(work / "veh.sgr")
    assert isinstance(g, SinrGrid) and g.data.shape == (1500, 50)
    assert g.meta.name == "vehicle" and g.meta.speed_kmh == 60
    ch = np.load(work / "veh.npz")
    assert ch["H"].shape == (1500, 600) and float(ch["mean_snr_db"]) == 15.0


def test_synth_csv_and_scenario_file(tmp_path):
    ini = tmp_path / "s.ini"
    ini.write_text(
        "[scenario]\nname = lab\nspeed_kmh = 5\nmean_snr_db = 3\nn_rb = 6\n"
        "[delay_profile]\ndelay_ns = 0\npower_db = 0\n"
    )
    out = tmp_path / "lab.csv"
    assert run("synth", "--scenario", ini, "--duration-ms", 20, "--format", "csv", "-o", out) == 0
    assert load_grid(out, "csv").data.shape == (20, 6)


def test_map_output(work):
    g = load_grid(work / "veh.cqi")
    assert isinstance(g, CqiGrid) and g.data.shape == (1500, 50)
    assert run("map", work / "veh.cqi", "-o", work / "again.cqi") == 3


def test_estimate(work, tmp_path):
    out = tmp_path / "est.sgr"
    assert run("estimate", work / "veh.npz", "-o", out, "--cell-id", 3) == 0
    est = load_grid(out)
    truth = load_grid(work / "veh.sgr")
    assert est.data.shape == truth.data.shape
    assert np.all((est.data >= -20) & (est.data <= 40))


def test_train_artifacts(work):
    m = crnn.load_model(work / "m.crn")
    assert m.config.window_w == 8 and m.config.n_rb == 50
    rows = list(csv.reader(open(work / "hist.csv")))
    assert rows[0] == ["epoch", "loss"] and len(rows) == 3
    assert (work / "loss.png").stat().st_size > 0


def test_predict(work, tmp_path):
    out = tmp_path / "pred.cqi"
    assert run("predict", work / "veh.cqi", "--model", work / "m.crn", "-o", out) == 0
    pred = load_grid(out)
    assert pred.data.shape == (1500 - 8, 50)


def test_eval(work, tmp_path, capsys):
    metrics, trace, fig = tmp_path / "m.txt", tmp_path / "t.csv", tmp_path / "t.png"
    assert run("eval", work / "veh.cqi", "--model", work / "m.crn", "--metrics", metrics,
               "--trace", trace, "--figure", fig, "--rb", 3) == 0
    kv = dict(line.split("=") for line in metrics.read_text().splitlines())
    for key in ("rmse", "mae", "asym_loss", "overprediction_rate", "exact_match_rate",
                "persistence_rmse", "rmse_rb49"):
        assert key in kv
    assert int(kv["n_windows"]) == 300 - 8
    assert next(csv.reader(open(trace))) == ["t", "rb", "truth", "pred", "baseline"]
    assert fig.stat().st_size > 0
    assert "rmse=" in capsys.readouterr().out


def test_stream_and_stats(work, tmp_path, capsys):
    frames, stats_file = tmp_path / "out.frames", tmp_path / "s.txt"
    assert run("stream", "--source", "replay", work / "veh.sgr", "--model", work / "m.crn",
               "--sink", "file", frames, "--deadline-us", 1e6, "--stats-out", stats_file) == 0
    out = runtime.decode_stream(frames.read_bytes())
    assert len(out) == 1500 - 8 + 1
    st = runtime.StreamStats.from_kv(stats_file.read_text())
    assert st.frames_processed == 1500 and st.emitted == len(out)

    cdf_csv, fig = tmp_path / "cdf.csv", tmp_path / "cdf.png"
    assert run("stats", work / "veh.sgr", "--stream-stats", stats_file, "--points", 50,
               "-o", cdf_csv, "--figure", fig) == 0
    text = cdf_csv.read_text()
    assert "frames_processed=1500" in text
    rows = text[text.index("scenario,delta_db,cdf"):].splitlines()
    assert len(rows) == 51 and rows[-1].endswith(",1")
    assert fig.stat().st_size > 0


def test_stream_datagram_sink(work):
    import socket

    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    rx.bind(("127.0.0.1", 0))
    port = rx.getsockname()[1]
    rx.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 20)
    assert run("stream", "--source", "replay", work / "veh.sgr", "--model", work / "m.crn",
               "--sink", "send", f"127.0.0.1:{port}", "--deadline-us", 1e6) == 0
    rx.settimeout(0.5)
    first = runtime.decode_cqi_frame(rx.recv(1024))
    assert first.timestamp_ms == 8 and first.n_rb == 50
    rx.close()


def test_exit_codes(work, tmp_path):
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"\x00" * 64)
    assert run("stream", "--source", "replay", junk, "--model", work / "m.crn",
               "--sink", "file", tmp_path / "x") == 2
    assert run("stream", "--source", "replay", work / "veh.cqi", "--model", work / "m.crn",
               "--sink", "file", tmp_path / "x") == 3
    assert run("synth", "--preset", "train", "--duration-ms", 10, "--seed", 1,
               "-o", tmp_path / "six.sgr") == 0
    small = tmp_path / "m6.crn"
    crnn.save_model(crnn.init_model(crnn.ModelConfig(window_w=4, n_rb=6, hidden=4)), small)
    assert run("predict", work / "veh.cqi", "--model", small, "-o", tmp_path / "p") == 3
    assert run("map", tmp_path / "does-not-exist.sgr", "-o", tmp_path / "y") == 1
    with pytest.raises(SystemExit):
        run("stream", "--source", "tape", "x", "--model", small, "--sink", "file", "y")


def test_presets_listing(capsys):
    assert run("presets") == 0
    out = capsys.readouterr().out
    assert "train: 80 km/h, fd=192.7 Hz" in out
    assert run("presets", "--dump", "cqi_table") == 0
    assert "[cqi_table]" in capsys.readouterr().out


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "cqitestbed.cli", "presets"],
                         capture_output=True, text=True, check=True)
    assert "pedestrian: 3 km/h" in res.stdout
