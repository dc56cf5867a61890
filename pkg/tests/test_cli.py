from __future__ import annotations

import io
import sys

import pytest

from ecusum import cli


def run(capsys, *argv, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def table(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]


class TestCalibrate:
    def test_round_trip(self, capsys):
        code, out, _ = run(capsys, "calibrate", "--gamma", "4.8731273", "--mu", "1", "--lambda", "1")
        assert code == 0
        assert "# gamma=4.8731273" in out
        assert float(table(out)[0]["nu_star"]) == pytest.approx(1.0, abs=1e-7)

    def test_zero_gamma(self, capsys):
        code, out, _ = run(capsys, "calibrate", "--gamma", "0", "--mu", "1", "--lambda", "1")
        assert code == 0 and float(table(out)[0]["nu_star"]) == 0.0

    def test_negative_gamma(self, capsys):
        code, _, err = run(capsys, "calibrate", "--gamma", "-1", "--mu", "1", "--lambda", "1")
        assert code == 2 and "gamma" in err

    def test_zero_rate(self, capsys):
        assert run(capsys, "calibrate", "--gamma", "1", "--mu", "1", "--lambda", "0")[0] == 2

    def test_text_format(self, capsys):
        code, out, _ = run(capsys, "calibrate", "--gamma", "10", "--mu", "1", "--lambda", "1", "--format", "text")
        assert code == 0 and "nu_star:" in out and "command: calibrate" in out


class TestCurves:
    def test_full_grid(self, capsys, tmp_path):
        dest = tmp_path / "curves.csv"
        code, _, _ = run(capsys, "curves", "--ratios", "0.1,1,10,100", "--gamma-grid", "0.1:1000:40", "--out", str(dest))
        assert code == 0
        rows = table(dest.read_text(encoding="utf-8"))
        assert len(rows) == 160
        assert all(float(r["ecusum_delay_norm"]) <= float(r["cusum_delay_norm"]) for r in rows)

    def test_single_zero(self, capsys):
        code, out, _ = run(capsys, "curves", "--ratios", "1", "--gamma-grid", "0")
        row = table(out)[0]
        assert code == 0 and float(row["ecusum_delay_norm"]) == 0.0 and float(row["cusum_delay_norm"]) == 0.0

    @pytest.mark.parametrize("ratios,grid", [("1,x", "1"), ("", "1"), ("1", ""), ("-1", "1"), ("1", "0:1:3")])
    def test_bad_input(self, capsys, ratios, grid):
        assert run(capsys, "curves", "--ratios", ratios, "--gamma-grid", grid)[0] == 2


class TestMonteCarlo:
    def test_reference_and_z(self, capsys):
        code, out, _ = run(capsys, "mc", "--paths", "4000", "--bridge", "--seed", "3")
        row = table(out)[0]
        assert code == 0
        assert float(row["analytic"]) == pytest.approx(1.3678794411714423)
        ref = float(row["analytic"])
        assert abs(float(row["mean"]) - ref) <= 3 * float(row["stderr"]) + 0.005 * ref

    def test_start_at_threshold(self, capsys):
        row = table(run(capsys, "mc", "--y0", "1", "--paths", "10")[1])[0]
        assert float(row["mean"]) == 0.0 and float(row["stderr"]) == 0.0

    def test_repeatable_bytes(self, capsys):
        args = ("mc", "--regime", "pre", "--paths", "500", "--seed", "17")
        assert run(capsys, *args)[1] == run(capsys, *args)[1]

    def test_seed_from_environment(self, capsys, monkeypatch):
        monkeypatch.setenv(cli.SEED_ENV, "42")
        out = run(capsys, "mc", "--paths", "50")[1]
        assert "# seed=42" in out and f"# seed_source=env:{cli.SEED_ENV}" in out
        assert "# seed=5" in run(capsys, "mc", "--paths", "50", "--seed", "5")[1]

    def test_bad_environment_seed(self, capsys, monkeypatch):
        monkeypatch.setenv(cli.SEED_ENV, "abc")
        assert run(capsys, "mc", "--paths", "50")[0] == 2

    def test_truncation_exit(self, capsys):
        code, _, err = run(capsys, "mc", "--regime", "pre", "--lambda", "0", "--paths", "50", "--max-time", "1")
        assert code == 4 and "truncated" in err

    @pytest.mark.parametrize("extra", [["--mu", "0"], ["--paths", "1"], ["--dt", "-1"], ["--y0", "2"], ["--regime", "x"]])
    def test_invalid(self, capsys, extra):
        assert run(capsys, "mc", "--paths", "20", *extra)[0] == 2


class TestDetect:
    def test_alarm_from_stdin(self, capsys, monkeypatch):
        code, out, _ = run(capsys, "detect", "--mu", "1", "--nu", "1", stdin="t,dxi,occ\n1,1.5,0\n", monkeypatch=monkeypatch)
        row = table(out)[0]
        assert code == 0 and float(row["alarm_time"]) == 1.0

    def test_no_alarm(self, capsys, monkeypatch):
        code, out, _ = run(capsys, "detect", "--mu", "1", "--nu", "1", stdin="t,dxi,occ\n", monkeypatch=monkeypatch)
        row = table(out)[0]
        assert code == 0 and row["alarm_time"] == "" and float(row["final_y"]) == 0.0

    def test_malformed(self, capsys, monkeypatch):
        code, _, err = run(capsys, "detect", "--mu", "1", "--nu", "1", stdin="t,dxi,occ\n1,0,0\n0.5,0,0\n",
                           monkeypatch=monkeypatch)
        assert code == 3 and "line 3" in err

    def test_file_and_levels(self, capsys, tmp_path):
        src = tmp_path / "s.csv"
        src.write_text("t,xi,occ\n1,0.2,1\n2,3.0,0\n", encoding="utf-8")
        code, out, _ = run(capsys, "detect", "--input", str(src), "--mu", "1", "--nu", "1", "--levels")
        assert code == 0 and float(table(out)[0]["alarm_time"]) == 2.0

    def test_missing_file(self, capsys, tmp_path):
        assert run(capsys, "detect", "--input", str(tmp_path / "nope"), "--mu", "1", "--nu", "1")[0] == 2


class TestFramework:
    def test_bundled_example(self, capsys):
        code, out, _ = run(capsys, "framework", "--spec", "example")
        assert code == 0
        rows = {r["measure"]: r["result"] for r in table(out)}
        for key in ("J_P", "J_L"):
            fields = dict(item.split("=", 1) for item in rows[key].split() if "=" in item)
            assert abs(float(fields["value"]) - 4 / 3) <= float(fields["cap_error"]) * 2

    def test_bad_prior(self, capsys, tmp_path):
        doc = tmp_path / "m.toml"
        doc.write_text(
            'horizon = 2\nalphabet = ["0","1"]\npre_dist = [0.5,0.5]\npost_dist = [0.5,0.5]\n'
            '[rule]\nfamily = "fixed-time"\ntime = 1\n[[priors]]\nname = "x"\nvarpi = [0.5, 0.2, 0.2]\n',
            encoding="utf-8",
        )
        code, _, err = run(capsys, "framework", "--spec", str(doc))
        assert code == 2 and "varpi must sum to 1" in err

    def test_undefined_measure(self, capsys, tmp_path):
        doc = tmp_path / "m.toml"
        doc.write_text(
            'horizon = 2\nalphabet = ["0","1"]\npre_dist = [0.5,0.5]\npost_dist = [0.5,0.5]\n'
            '[rule]\nfamily = "fixed-time"\ntime = 0\n[[priors]]\nname = "late"\nvarpi = [0, 1, 0]\n',
            encoding="utf-8",
        )
        code, out, _ = run(capsys, "framework", "--spec", str(doc))
        assert code == 0 and "undefined" in out


class TestHelp:
    @pytest.mark.parametrize("cmd", ["calibrate", "curves", "mc", "detect", "framework"])
    def test_help_documents_columns(self, capsys, cmd):
        with pytest.raises(SystemExit) as exc:
            cli.main([cmd, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        assert "columns:" in text or "rows:" in text

    def test_missing_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 2
