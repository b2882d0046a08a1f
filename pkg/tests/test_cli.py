import json

import numpy as np
import pytest

from streamvc import cli
from streamvc.audio import read_wav, write_mel, write_wav
from streamvc.pqmf import PqmfBank, design_bank

from conftest import small_config


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    cfg.write_text(small_config().to_json())
    path = d / "m.svcm"
    assert cli.main(["init-model", "--out", str(path), "--config", str(cfg), "--seed", "5"]) == 0
    return path


def _mask_rows(capsys, *args):
    assert cli.main(["mask", *args]) == 0
    return capsys.readouterr().out.split()


def test_mask_output(capsys):
    rows = _mask_rows(capsys, "--chunk", "2", "--num-chunks", "3")
    assert rows == ["110000", "110000", "111100", "111100", "111111", "111111"]
    assert _mask_rows(capsys, "--chunk", "1", "--num-chunks", "1", "--history", "0") == ["1"]
    assert _mask_rows(capsys, "--chunk", "1", "--num-chunks", "3", "--history", "1") == ["100", "110", "011"]
    assert _mask_rows(capsys, "--chunk", "1", "--num-chunks", "2", "--history", "inf") == ["10", "11"]


def test_mask_rejects_bad_chunk(capsys):
    assert cli.main(["mask", "--chunk", "0", "--num-chunks", "2"]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_convert_silence(tmp_path, model_path, capsys):
    src = tmp_path / "in.wav"
    write_wav(src, np.zeros(16000, np.float32))
    outs = []
    for name in ("a.wav", "b.wav"):
        code = cli.main(["convert", "--model", str(model_path), "--in", str(src), "--out", str(tmp_path / name),
                         "--chunk-ms", "80", "--speaker", "1"])
        assert code == 0
        outs.append(read_wav(tmp_path / name))
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["chunk_ms"] == 80 and report["lookahead_ms"] == 30.0
    assert abs(len(outs[0]) - 16000) <= 160
    assert np.array_equal(outs[0], outs[1])
    assert np.abs(outs[0]).max() <= 1.0


def test_convert_crossfade_mode(tmp_path, model_path, capsys):
    src = tmp_path / "in.wav"
    write_wav(src, 0.1 * np.sin(np.arange(8000) / 10.0))
    code = cli.main(["convert", "--model", str(model_path), "--in", str(src), "--out", str(tmp_path / "o.wav"),
                     "--chunk-ms", "40", "--mode", "mb_offline_crossfade", "--history", "inf"])
    assert code == 0
    assert abs(len(read_wav(tmp_path / "o.wav")) - 8000) <= 160


def test_convert_rejects_50ms(tmp_path, model_path, capsys):
    src = tmp_path / "in.wav"
    write_wav(src, np.zeros(1600, np.float32))
    code = cli.main(["convert", "--model", str(model_path), "--in", str(src), "--out", str(tmp_path / "o.wav"),
                     "--chunk-ms", "50"])
    assert code == 1
    assert "multiple of 40 ms" in capsys.readouterr().err


def test_convert_bad_speaker_and_missing_model(tmp_path, model_path, capsys, monkeypatch):
    src = tmp_path / "in.wav"
    write_wav(src, np.zeros(1600, np.float32))
    args = ["convert", "--in", str(src), "--out", str(tmp_path / "o.wav")]
    assert cli.main(args + ["--model", str(model_path), "--speaker", "99"]) == 1
    monkeypatch.delenv(cli.MODEL_ENV, raising=False)
    assert cli.main(args) == 1
    assert cli.main(args + ["--model", str(tmp_path / "nope.svcm")]) == 1


def test_model_from_environment(tmp_path, model_path, monkeypatch):
    src = tmp_path / "in.wav"
    write_wav(src, np.zeros(1600, np.float32))
    monkeypatch.setenv(cli.MODEL_ENV, str(model_path))
    assert cli.main(["convert", "--in", str(src), "--out", str(tmp_path / "o.wav"), "--chunk-ms", "40"]) == 0


def test_vocode_streaming_is_chunk_invariant(tmp_path, model_path, capsys):
    mel = np.random.default_rng(0).standard_normal((20, 80)).astype(np.float32)
    write_mel(tmp_path / "m.mel", mel)
    outs = []
    for cf in ("1", "7", "20"):
        out = tmp_path / f"v{cf}.wav"
        assert cli.main(["vocode", "--model", str(model_path), "--mel", str(tmp_path / "m.mel"), "--out", str(out),
                         "--chunk-frames", cf]) == 0
        outs.append(read_wav(out))
    assert len(outs[0]) == 20 * 160
    assert all(np.array_equal(outs[0], o) for o in outs[1:])


def test_vocode_offline_modes(tmp_path, model_path):
    write_mel(tmp_path / "m.mel", np.zeros((16, 80), np.float32))
    for n in ("0", "81"):
        out = tmp_path / f"o{n}.wav"
        assert cli.main(["vocode", "--model", str(model_path), "--mel", str(tmp_path / "m.mel"), "--out", str(out),
                         "--mode", "mb_offline_crossfade", "--crossfade-n", n, "--chunk-frames", "4"]) == 0
        assert len(read_wav(out)) == 16 * 160


def test_vocode_errors(tmp_path, model_path, capsys):
    write_mel(tmp_path / "e.mel", np.zeros((0, 80), np.float32))
    base = ["vocode", "--model", str(model_path), "--out", str(tmp_path / "o.wav")]
    assert cli.main(base + ["--mel", str(tmp_path / "e.mel")]) == 1
    write_mel(tmp_path / "m.mel", np.zeros((4, 80), np.float32))
    assert cli.main(base + ["--mel", str(tmp_path / "m.mel"), "--chunk-frames", "0"]) == 1


def test_features(tmp_path, capsys):
    write_wav(tmp_path / "a.wav", np.zeros(1000, np.float32))
    assert cli.main(["features", "--in", str(tmp_path / "a.wav"), "--out", str(tmp_path / "a.mel")]) == 0
    assert "7 frames" in capsys.readouterr().out


def test_design_pqmf_json(tmp_path, capsys):
    assert cli.main(["design-pqmf"]) == 0
    bank = PqmfBank.from_json(capsys.readouterr().out)
    ref = design_bank()
    assert np.array_equal(bank.analysis_filters, ref.analysis_filters) and bank.delay == 61
    assert cli.main(["design-pqmf", "--bands", "2", "--taps", "32", "--out", str(tmp_path / "b.json")]) == 0
    assert PqmfBank.from_json((tmp_path / "b.json").read_text()).num_bands == 2


def test_bench_accounting(tmp_path, model_path, capsys):
    from streamvc.bench import check_accounting

    out = tmp_path / "bench.json"
    assert cli.main(["bench", "--model", str(model_path), "--chunk-ms", "40,80", "--seconds", "0.5",
                     "--repeats", "1", "--out", str(out)]) == 0
    result = json.loads(out.read_text())
    assert [r["chunk_ms"] for r in result["latency"]] == [40, 80]
    assert all(check_accounting(r) for r in result["latency"])
    assert result["vocoder"]["rtf"] > 0


@pytest.mark.parametrize("args", [["--seconds", "0"], ["--chunk-ms", "50"], ["--repeats", "0"]])
def test_bench_errors(model_path, capsys, args):
    assert cli.main(["bench", "--model", str(model_path), *args]) == 1


def test_every_option_has_help():
    parser = cli.build_parser()
    subs = next(a for a in parser._actions if a.choices and isinstance(a.choices, dict)).choices
    assert set(subs) == {"init-model", "features", "convert", "vocode", "design-pqmf", "mask", "bench"}
    for name, sub in subs.items():
        for action in sub._actions:
            if action.dest != "help":
                assert action.help, f"{name} {action.dest}"
