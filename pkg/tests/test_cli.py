"""Command-line interface tests, run in-process through cli.main."""

import fcntl
import os

import numpy as np
import pytest

from tfse import cli
from tfse.dsp import read_wav, write_wav
from tfse.synth import tonal_speech


@pytest.fixture(scope="module")
def toy_cfg_path(corpus_manifest, tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "toy.cfg"
    path.write_text(
        "backbone = mamba\nblocks = 1\ncausal = true\n"
        "d_model = 32\nd_ff = 64\nheads = 4\nd_state = 4\n"
        "step_w = 400\nbatch_size = 10\nsnr_lo = -5\nsnr_hi = 10\n"
        f"epochs = 1\ncorpus = {corpus_manifest}\n"
    )
    return str(path)


@pytest.fixture(scope="module")
def trained_out(toy_cfg_path, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli_run"))
    assert cli.main(["train", "--config", toy_cfg_path, "--out", out]) == 0
    return out


def latest_ckpt(out_dir):
    from tfse.training import latest_checkpoint

    return latest_checkpoint(out_dir)


class TestTrain:
    def test_progress_and_summary(self, toy_cfg_path, tmp_path, capsys):
        out = str(tmp_path / "run")
        code = cli.main(["train", "--config", toy_cfg_path, "--out", out, "--log-every", "1"])
        captured = capsys.readouterr()
        assert code == 0
        assert "trained 1 steps over 1 epochs" in captured.out
        assert os.path.exists(os.path.join(out, "loss.csv"))

    def test_resume_without_checkpoint_fails_cleanly(self, toy_cfg_path, tmp_path, capsys):
        out = str(tmp_path / "empty")
        os.makedirs(out)
        code = cli.main(["train", "--config", toy_cfg_path, "--out", out, "--resume"])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_config_key_names_the_key_and_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("backbone = mamba\ncausal = true\nbogus_key = 1\n")
        code = cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
        err = capsys.readouterr().err
        assert code == 2
        assert "bad.cfg:3" in err and "bogus_key" in err

    def test_unknown_shipped_name_lists_available(self, tmp_path, capsys):
        code = cli.main(["train", "--config", "no-such-model", "--out", str(tmp_path / "o")])
        err = capsys.readouterr().err
        assert code == 2
        assert "shipped" in err and "transformer-4" in err


class TestEnhance:
    def test_single_file(self, trained_out, tmp_path, capsys):
        wav_in = str(tmp_path / "in.wav")
        wav_out = str(tmp_path / "out.wav")
        write_wav(wav_in, tonal_speech(np.random.default_rng(0), 1.0), "pcm16")
        ckpt = latest_ckpt(trained_out)
        code = cli.main(["enhance", "--checkpoint", ckpt, "--in", wav_in, "--out", wav_out])
        assert code == 0
        result = read_wav(wav_out)
        assert len(result) == len(read_wav(wav_in))

    def test_glob_into_directory(self, trained_out, tmp_path):
        rng = np.random.default_rng(1)
        for i in range(2):
            write_wav(str(tmp_path / f"clip_{i}.wav"), tonal_speech(rng, 0.6), "pcm16")
        out_dir = str(tmp_path / "enhanced")
        ckpt = latest_ckpt(trained_out)
        code = cli.main([
            "enhance", "--checkpoint", ckpt,
            "--in", str(tmp_path / "clip_*.wav"), "--out", out_dir,
            "--encoding", "float32",
        ])
        assert code == 0
        assert sorted(os.listdir(out_dir)) == ["clip_0.wav", "clip_1.wav"]

    def test_missing_input_is_a_clean_error(self, trained_out, tmp_path, capsys):
        ckpt = latest_ckpt(trained_out)
        code = cli.main([
            "enhance", "--checkpoint", ckpt,
            "--in", str(tmp_path / "nope.wav"), "--out", str(tmp_path / "o.wav"),
        ])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestParams:
    def test_shipped_preset_count(self, capsys):
        assert cli.main(["params", "--config", "transformer-4"]) == 0
        out = capsys.readouterr().out.strip()
        assert out == "transformer-4: 3.29M (3,291,651)"


class TestVerify:
    def test_all_checks_pass(self, capsys):
        assert cli.main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert "checks passed" in out

    def test_negative_control_is_caught(self, capsys):
        assert cli.main(["verify", "--negative-control"]) == 1
        out = capsys.readouterr().out
        assert "FAIL" in out and "negative-control" in out


class TestBench:
    def test_writes_csv(self, toy_cfg_path, tmp_path, capsys):
        out_csv = str(tmp_path / "bench.csv")
        code = cli.main([
            "bench", "--config", toy_cfg_path, "--lengths", "0.5",
            "--batch", "1", "--runs", "2", "--warmup", "1",
            "--train-steps", "2", "--out", out_csv,
        ])
        assert code == 0
        rows = open(out_csv).read().splitlines()
        assert rows[0].startswith("model,params,causal,")
        assert len(rows) == 2

    def test_lock_contention(self, toy_cfg_path, tmp_path, capsys):
        with open(cli.BENCH_LOCK, "w") as holder:
            fcntl.flock(holder, fcntl.LOCK_EX | fcntl.LOCK_NB)
            code = cli.main([
                "bench", "--config", toy_cfg_path, "--lengths", "0.5",
                "--runs", "1", "--warmup", "0",
            ])
        assert code == 2
        assert "lock" in capsys.readouterr().err


class TestScore:
    def test_csv_to_stdout_and_file(self, trained_out, corpus_manifest, tmp_path, capsys):
        base = os.path.dirname(corpus_manifest)
        manifest = tmp_path / "eval.txt"
        manifest.write_text(
            f"{os.path.join(base, 'speech_000.wav')} {os.path.join(base, 'noise_000.wav')} 0\n"
            f"{os.path.join(base, 'speech_001.wav')} {os.path.join(base, 'noise_001.wav')} 5\n"
        )
        out_csv = str(tmp_path / "scores.csv")
        ckpt = latest_ckpt(trained_out)
        code = cli.main([
            "score", "--checkpoint", ckpt, "--manifest", str(manifest), "--out", out_csv,
        ])
        assert code == 0
        text = open(out_csv).read()
        assert text.splitlines()[0] == "metric,0,5"
        assert "estoi_enhanced" in text
        assert capsys.readouterr().out.splitlines()[0] == "metric,0,5"


class TestSynthCorpus:
    def test_generates_manifest_and_wavs(self, tmp_path, capsys):
        out = str(tmp_path / "corpus")
        code = cli.main([
            "synth-corpus", "--out", out, "--n-speech", "2", "--n-noise", "1",
            "--dur", "0.5",
        ])
        assert code == 0
        listing = os.listdir(out)
        assert "manifest.txt" in listing
        assert sum(f.endswith(".wav") for f in listing) == 3
