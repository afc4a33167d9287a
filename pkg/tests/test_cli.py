
import numpy as np
import pytest

from qembed.cli import main, parse_model
from qembed.embeddings import deserialize


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestParseModel:
    def test_forms(self):
        assert parse_model("sparse:4:1024").kind == "sparse"
        assert parse_model("ball:16").kind == "ball"
        assert parse_model("lowrank:1:4:4").kind == "low_rank"
        assert parse_model("group_sparse:2:3:6").kind == "group_sparse"

    def test_bad_model(self):
        from qembed.cli import _CliError

        with pytest.raises(_CliError):
            parse_model("sparse:4")
        with pytest.raises(_CliError):
            parse_model("sparse:4:x")
        with pytest.raises(_CliError):
            parse_model("mystery:1:2")


class TestReqmAndEntropy:
    def test_reqm_prints_required_dimension(self, capsys):
        code, out, _ = run_cli(
            capsys, "reqm", "--prop", "p1", "--model", "sparse:4:1024",
            "--eps", "0.1", "--delta", "1", "--C", "1", "--q", "2",
        )
        assert code == 0
        assert out.strip() == "13885"

    def test_entropy_value(self, capsys):
        code, out, _ = run_cli(capsys, "entropy", "--model", "sparse:4:1024", "--eta", "0.01", "--q", "2")
        assert code == 0
        assert abs(float(out) - 138.8) <= 0.1

    def test_infeasible_parameters_exit_1(self, capsys):
        code, _, err = run_cli(
            capsys, "reqm", "--prop", "p1", "--model", "sparse:4:1024",
            "--eps", "1.5", "--delta", "1",
        )
        assert code == 1
        assert "epsilon" in err

    def test_unknown_flag_exit_1(self, capsys):
        code, _, err = run_cli(capsys, "entropy", "--model", "sparse:2:8", "--eta", "0.1", "--bogus", "1")
        assert code == 1


class TestEmbedDistance:
    def test_embed_then_distance_zero(self, tmp_path, capsys):
        vec = tmp_path / "x.txt"
        vec.write_text(" ".join(str(v) for v in np.linspace(-1, 1, 16)) + "\n")
        out1 = tmp_path / "a.qemb"
        out2 = tmp_path / "b.qemb"
        for out in (out1, out2):
            code, _, _ = run_cli(
                capsys, "embed", "--family", "gaussian", "--m", "32", "--n", "16",
                "--input", str(vec), "--delta", "0.5", "--seed", "9",
                "--dither-seed", "3", "--out", str(out),
            )
            assert code == 0
        code, out, _ = run_cli(capsys, "distance", str(out1), str(out2), "--mode", "l1")
        assert code == 0
        assert float(out) == 0.0

    def test_embed_bidither_and_circ(self, tmp_path, capsys):
        vec = tmp_path / "x.txt"
        vec.write_text("0.1 0.2 0.3 0.4\n")
        out = tmp_path / "c.qemb"
        code, _, _ = run_cli(
            capsys, "embed", "--family", "gaussian", "--m", "8", "--n", "4",
            "--input", str(vec), "--delta", "1", "--layout", "bidither", "--out", str(out),
        )
        assert code == 0
        block = deserialize(out.read_bytes())
        assert block.layout == "bidither" and block.cols == 2
        code, txt, _ = run_cli(capsys, "distance", str(out), str(out), "--mode", "circ")
        assert code == 0 and float(txt) == 0.0

    def test_embedding_is_deterministic_bytes(self, tmp_path, capsys):
        vec = tmp_path / "x.txt"
        vec.write_text("1 2 3 4\n")
        a, b = tmp_path / "a.qemb", tmp_path / "b.qemb"
        for out in (a, b):
            run_cli(
                capsys, "embed", "--family", "subsampled_hadamard", "--m", "4", "--n", "4",
                "--input", str(vec), "--delta", "1", "--seed", "7", "--out", str(out),
            )
        assert a.read_bytes() == b.read_bytes()

    def test_vector_length_mismatch(self, tmp_path, capsys):
        vec = tmp_path / "x.txt"
        vec.write_text("1 2 3\n")
        code, _, err = run_cli(
            capsys, "embed", "--family", "gaussian", "--m", "4", "--n", "8",
            "--input", str(vec), "--delta", "1", "--out", str(tmp_path / "o.qemb"),
        )
        assert code == 1
        assert "--input" in err or "length" in err

    def test_rop_embed(self, tmp_path, capsys):
        vec = tmp_path / "u.txt"
        vec.write_text(" ".join(str(v) for v in np.linspace(0, 1, 12)) + "\n")
        out = tmp_path / "r.qemb"
        code, _, _ = run_cli(
            capsys, "embed", "--family", "rop", "--m", "16", "--n1", "3", "--n2", "4",
            "--input", str(vec), "--delta", "1", "--kappa", "2", "--out", str(out),
        )
        assert code == 0
        block = deserialize(out.read_bytes())
        assert block.layout == "single" and block.m == 16
        code, _, err = run_cli(
            capsys, "embed", "--family", "rop", "--m", "16", "--n1", "5", "--n2", "4",
            "--input", str(vec), "--delta", "1", "--out", str(out),
        )
        assert code == 1 and "--n1*--n2" in err


class TestRiptestQripDecay:
    def test_riptest(self, capsys):
        code, out, _ = run_cli(
            capsys, "riptest", "--family", "gaussian", "--m", "512", "--n", "128",
            "--model", "sparse:4:128", "--p", "2", "--q", "2", "--pairs", "60", "--seed", "1",
        )
        assert code == 0
        assert 0 <= float(out) <= 0.5

    def test_qrip_writes_csvs(self, tmp_path, capsys):
        out = tmp_path / "records.csv"
        code, txt, _ = run_cli(
            capsys, "qrip", "--family", "gaussian", "--m", "128", "--n", "32",
            "--model", "sparse:4:32", "--radius", "8", "--mode", "l2sq", "--delta", "1",
            "--grid", "0.5,1,2", "--pairs", "3", "--dithers", "4", "--seed", "2",
            "--out", str(out),
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# config:")
        assert lines[1] == "m,delta,mode,true_dist,est_dist,rel_err,pair_id,trial_id,seed"
        assert len(lines) == 2 + 3 * 3 * 4
        summary = (tmp_path / "records.csv.summary.csv").read_text().splitlines()
        assert summary[1] == "m,mode,eps_L_hat,dist,rho_hat_max,rho_hat_median"
        assert len(summary) == 2 + 3

    def test_qrip_deterministic_output(self, tmp_path, capsys):
        args = [
            "qrip", "--family", "gaussian", "--m", "64", "--n", "16",
            "--model", "sparse:2:16", "--radius", "4", "--mode", "l1", "--delta", "1",
            "--grid", "0.5,1", "--pairs", "2", "--dithers", "3", "--seed", "5",
        ]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_cli(capsys, *args, "--out", str(a))
        run_cli(capsys, *args, "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_qrip_threads_env(self, tmp_path, capsys, monkeypatch):
        args = [
            "qrip", "--family", "gaussian", "--m", "64", "--n", "16",
            "--model", "sparse:2:16", "--radius", "4", "--mode", "l1", "--delta", "1",
            "--grid", "0.5,1", "--pairs", "3", "--dithers", "2", "--seed", "5",
        ]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_cli(capsys, *args, "--out", str(a))
        monkeypatch.setenv("QEMB_THREADS", "4")
        run_cli(capsys, *args, "--out", str(b))
        assert a.read_bytes() == b.read_bytes()
        monkeypatch.setenv("QEMB_THREADS", "zero")
        code, _, err = run_cli(capsys, *args, "--out", str(tmp_path / "c.csv"))
        assert code == 1 and "QEMB_THREADS" in err

    def test_qrip_vanishing_quantizer_matches_linear(self, tmp_path, capsys):
        out = tmp_path / "tiny.csv"
        code, _, _ = run_cli(
            capsys, "qrip", "--family", "gaussian", "--m", "256", "--n", "32",
            "--model", "sparse:4:32", "--radius", "8", "--mode", "l1", "--delta", "1e-9",
            "--grid", "0.5,1,2,4", "--pairs", "4", "--dithers", "16", "--seed", "8",
            "--out", str(out),
        )
        assert code == 0
        rows = [ln.split(",") for ln in (tmp_path / "tiny.csv.summary.csv").read_text().splitlines()[2:]]
        for row in rows:
            dist, rho_max = float(row[3]), float(row[4])
            assert rho_max <= 1e-6 * dist

    def test_decay_prints_slope(self, tmp_path, capsys):
        code, out, _ = run_cli(
            capsys, "decay", "--family", "gaussian", "--n", "32",
            "--model", "sparse:4:32", "--radius", "8", "--mode", "l1", "--delta", "1",
            "--grid", "0.2,1,4", "--m-list", "64,128,256,512", "--pairs", "3",
            "--dithers", "4", "--seed", "6", "--out", str(tmp_path / "d.csv"),
        )
        assert code == 0
        slope = float(out)
        assert -1.2 <= slope <= 0.1
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[1] == "m,mode,eps_L_hat,dist,rho_hat_max,rho_hat_median"
        assert len(lines) == 2 + 4 * 3


class TestMeanwidthSelftestConfig:
    def test_meanwidth(self, capsys):
        code, out, _ = run_cli(capsys, "meanwidth", "--model", "ball:1", "--trials", "100000", "--seed", "3")
        assert code == 0
        est, se = (float(v) for v in out.split())
        assert abs(est - 0.7979) <= 3 * se + 1e-3

    def test_selftest_byte_identical(self, capsys):
        code1, out1, _ = run_cli(capsys, "selftest", "--seed", "7", "--fast")
        code2, out2, _ = run_cli(capsys, "selftest", "--seed", "7", "--fast")
        assert code1 == code2 == 0
        assert out1 == out2
        assert all(line.startswith(("PASS", "FAIL")) or "checks passed" in line for line in out1.splitlines())

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("model = sparse:4:1024\neps = 0.1\ndelta = 1\nprop = p1\n")
        code, out, _ = run_cli(capsys, "reqm", "--config", str(cfg))
        assert code == 0 and out.strip() == "13885"
        # explicit flag beats the file
        code, out, _ = run_cli(capsys, "reqm", "--config", str(cfg), "--eps", "0.2")
        assert code == 0 and out.strip() != "13885"

    def test_config_file_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("this is not key value\n")
        code, _, err = run_cli(capsys, "reqm", "--config", str(bad))
        assert code == 1 and "key=value" in err
        code, _, err = run_cli(capsys, "reqm", "--config", str(tmp_path / "missing.cfg"))
        assert code == 1
