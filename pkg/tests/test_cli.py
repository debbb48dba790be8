import numpy as np
import pytest

from blockinv.cli import main
from blockinv.core import load_matrix, residual_norm, save_matrix, save_text

from conftest import well_conditioned


def run(*argv):
    return main([str(a) for a in argv])


class TestGenAndPartition:
    def test_gen_roundtrip(self, tmp_path):
        out = tmp_path / "m.txt"
        assert run("gen", "--order", 9, "--seed", 3, "--out", out) == 0
        m = load_matrix(out)
        assert m.shape == (9, 9)

    def test_gen_binary(self, tmp_path):
        out = tmp_path / "m.blk"
        assert run("gen", "--order", 6, "--out", out, "--binary") == 0
        assert load_matrix(out).shape == (6, 6)

    def test_partition_output(self, capsys):
        assert run("partition", "21") == 0
        captured = capsys.readouterr().out
        assert "N_k = 8" in captured
        assert "2 2 2 3 3 3 3 3" in captured

    def test_partition_explicit_sizes(self, capsys):
        assert run("partition", "32", "--sizes", "5,9,7,11") == 0
        assert "N_k = 4" in capsys.readouterr().out


class TestInvert:
    @pytest.mark.parametrize("method", ["a", "inplace", "ad", "parallel", "oracle"])
    def test_methods(self, tmp_path, method):
        src = tmp_path / "m.txt"
        dst = tmp_path / "inv.txt"
        m = well_conditioned(9, 60)
        save_matrix(m, src)
        assert run("invert", "--in", src, "--out", dst, "--method", method) == 0
        assert residual_norm(m, load_matrix(dst)) <= 1e-8 * 9

    def test_singular_exit_code(self, tmp_path):
        src = tmp_path / "sing.txt"
        save_text(np.ones((4, 4)), src)
        assert run("invert", "--in", src, "--method", "a") == 2

    def test_retry_flag_recovers_permutation(self, tmp_path):
        src = tmp_path / "p.txt"
        dst = tmp_path / "pinv.txt"
        p = np.eye(8)[::-1].copy()
        save_text(p, src)
        assert run("invert", "--in", src, "--method", "a") == 2
        assert run("invert", "--in", src, "--out", dst, "--method", "a", "--retry") == 0
        assert residual_norm(p, load_matrix(dst)) <= 1e-12

    def test_missing_file_exit_code(self, tmp_path):
        assert run("invert", "--in", tmp_path / "nope.txt") == 3

    def test_bad_format_exit_code(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("not a matrix\n")
        assert run("invert", "--in", bad) == 3

    def test_workers_env(self, tmp_path, capsys, monkeypatch):
        src = tmp_path / "m.txt"
        save_matrix(well_conditioned(8, 61), src)
        monkeypatch.setenv("INVERTOR_WORKERS", "2")
        assert run("invert", "--in", src, "--method", "parallel") == 0
        assert "workers 2" in capsys.readouterr().out
        # explicit flag wins over the environment
        assert run("invert", "--in", src, "--method", "parallel", "--workers", "4") == 0
        assert "workers 4" in capsys.readouterr().out

    def test_explicit_sizes(self, tmp_path):
        src = tmp_path / "m.txt"
        save_matrix(well_conditioned(12, 62), src)
        assert run("invert", "--in", src, "--sizes", "5,7") == 0


class TestVerify:
    def test_verify_method(self, tmp_path):
        src = tmp_path / "m.txt"
        save_matrix(well_conditioned(9, 63), src)
        assert run("verify", "--in", src, "--method", "parallel") == 0

    def test_verify_inverse_file(self, tmp_path):
        src = tmp_path / "m.txt"
        dst = tmp_path / "inv.txt"
        m = well_conditioned(6, 64)
        save_matrix(m, src)
        assert run("invert", "--in", src, "--out", dst, "--method", "ad") == 0
        assert run("verify", "--in", src, "--inverse", dst) == 0


class TestBenchCommand:
    def test_csv_output(self, tmp_path):
        csv = tmp_path / "b.csv"
        assert run("bench", "--methods", "a,inplace", "--orders", "6,8,10,12",
                   "--csv", csv, "--fit", "6:12") == 0
        lines = csv.read_text().splitlines()
        assert lines[0].startswith("method,m,workers,seconds,residual")
        assert len(lines) == 9

    def test_orders_range_syntax(self, tmp_path):
        csv = tmp_path / "b.csv"
        assert run("bench", "--methods", "a", "--orders", "4:10:2", "--csv", csv) == 0
        assert len(csv.read_text().splitlines()) == 5


class TestCheckpointCommands:
    def test_invert_with_checkpoint_then_resume(self, tmp_path):
        src = tmp_path / "m.txt"
        out1 = tmp_path / "a.txt"
        out2 = tmp_path / "b.txt"
        m = well_conditioned(21, 65)
        save_matrix(m, src)
        ck = tmp_path / "ck"
        assert run("invert", "--in", src, "--out", out1, "--method", "parallel",
                   "--checkpoint-dir", ck) == 0
        assert run("resume", "--in", src, "--checkpoint-dir", ck, "--out", out2) == 0
        assert load_matrix(out1).tobytes() == load_matrix(out2).tobytes()

    def test_resume_mismatch_exit_code(self, tmp_path):
        src = tmp_path / "m.txt"
        other = tmp_path / "other.txt"
        m = well_conditioned(9, 66)
        save_matrix(m, src)
        save_matrix(m + np.eye(9), other)
        ck = tmp_path / "ck"
        assert run("invert", "--in", src, "--method", "parallel",
                   "--checkpoint-dir", ck) == 0
        assert run("resume", "--in", other, "--checkpoint-dir", ck) == 4

    def test_file_backed(self, tmp_path):
        src = tmp_path / "m.txt"
        save_matrix(well_conditioned(9, 67), src)
        ck = tmp_path / "ck"
        assert run("invert", "--in", src, "--method", "parallel",
                   "--checkpoint-dir", ck, "--file-backed") == 0
        assert (ck / "minv" / "B_0_0.blk").exists()
