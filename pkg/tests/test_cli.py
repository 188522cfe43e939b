import json
import math

import numpy as np
import pytest

from itequant.cli import main, parse_method_token

RNG = np.random.default_rng(99)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def cre_csv(tmp_path, n1=6, n0=6, seed=1):
    rng = np.random.default_rng(seed)
    lines = ["id,arm,outcome"]
    for i in range(n1):
        lines.append(f"t{i},1,{np.round(rng.normal(1.5, 1.0), 2)}")
    for i in range(n0):
        lines.append(f"c{i},0,{np.round(rng.normal(0.0, 1.0), 2)}")
    return write(tmp_path, "cre.csv", "\n".join(lines) + "\n")


def placebo_csv(tmp_path):
    text = (
        "id,arm,outcome\n"
        "t0,1,3.2\nt1,1,2.1\nt2,1,1.4\nt3,1,0.5\n"
        "c0,0,0.5\nc1,0,0.5\nc2,0,0.5\nc3,0,0.5\n"
    )
    return write(tmp_path, "placebo.csv", text)


def pairs_csv(tmp_path, pairs=6, seed=2):
    rng = np.random.default_rng(seed)
    lines = ["id,arm,stratum,outcome"]
    for p in range(pairs):
        lines.append(f"t{p},1,p{p},{np.round(rng.normal(1.0, 1.0), 2)}")
        lines.append(f"c{p},0,p{p},{np.round(rng.normal(0.0, 1.0), 2)}")
    return write(tmp_path, "pairs.csv", "\n".join(lines) + "\n")


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestMethodTokens:
    def test_valid_tokens(self):
        m1 = parse_method_token("M1-W")
        assert m1.method == "M1" and m1.stat_primary.kind == "wilcoxon"
        m2 = parse_method_token("M2-S2-S6")
        assert m2.method == "M2"
        assert m2.stat_primary.s == 2 and m2.flipped.s == 6
        m3 = parse_method_token("M3-S2")
        assert m3.flipped == m3.stat_primary

    def test_invalid_tokens(self):
        for bad in ("M4-W", "M1", "M1-X9", "M2-S2-S6-S8", "M1-S"):
            with pytest.raises(ValueError):
                parse_method_token(bad)


class TestPlaceboCommand:
    def test_profile_run(self, tmp_path, capsys):
        path = placebo_csv(tmp_path)
        code, out, err = run(
            capsys,
            ["placebo", "--input", path, "--lod", "0.5", "--alpha", "0.1",
             "--ranks", "6,7,8"],
        )
        assert code == 0 and err == ""
        lines = out.splitlines()
        assert lines[0] == "rank,lower_limit,upper_limit,level,method,simultaneous"
        assert len(lines) == 4
        assert lines[1].startswith("6,")

    def test_lod_required(self, tmp_path, capsys):
        path = placebo_csv(tmp_path)
        code, out, err = run(capsys, ["placebo", "--input", path])
        assert code == 2
        assert "requires --lod" in err

    def test_count_bounds(self, tmp_path, capsys):
        path = placebo_csv(tmp_path)
        code, out, err = run(
            capsys,
            ["placebo", "--input", path, "--lod", "0.5", "--alpha", "0.1",
             "--count-thresholds", "0.5,1.0"],
        )
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "threshold,count_lower_bound"
        assert len(lines) == 3

    def test_simultaneous_flag(self, tmp_path, capsys):
        path = placebo_csv(tmp_path)
        code, out, _ = run(
            capsys,
            ["placebo", "--input", path, "--lod", "0.5", "--alpha", "0.1",
             "--ranks", "7,8", "--simultaneous", "--mc-draws", "10000"],
        )
        assert code == 0
        assert "placebo-simultaneous" in out


class TestCreCommand:
    def test_profile_deterministic(self, tmp_path, capsys):
        path = cre_csv(tmp_path)
        argv = ["cre", "--input", path, "--method", "M1", "--stat", "stephenson",
                "--stat-s", "2", "--alpha", "0.1"]
        code1, out1, _ = run(capsys, argv)
        code2, out2, _ = run(capsys, argv)
        assert code1 == code2 == 0
        assert out1 == out2
        assert "M1-S2" in out1

    def test_two_sided_brackets(self, tmp_path, capsys):
        path = cre_csv(tmp_path)
        code, out, _ = run(
            capsys,
            ["cre", "--input", path, "--method", "M1", "--alpha", "0.2",
             "--ranks", "6,9,12", "--two-sided"],
        )
        assert code == 0
        rows = [line.split(",") for line in out.splitlines()[1:]]
        for row in rows:
            lower, upper = float(row[1]), float(row[2])
            assert lower <= upper
            assert float(row[3]) == pytest.approx(0.8)

    def test_one_sided_upper_is_inf(self, tmp_path, capsys):
        path = cre_csv(tmp_path)
        code, out, _ = run(
            capsys, ["cre", "--input", path, "--ranks", "9", "--alpha", "0.1"]
        )
        assert code == 0
        row = out.splitlines()[1].split(",")
        assert row[2] == "inf"

    def test_m2_and_m3_run(self, tmp_path, capsys):
        path = cre_csv(tmp_path)
        for method, tag in (("M2", "M2-S2-S6"), ("M3", "M3-S2-S6")):
            code, out, _ = run(
                capsys,
                ["cre", "--input", path, "--method", method,
                 "--stat", "stephenson", "--stat-s", "2",
                 "--stat-flipped", "stephenson", "--stat-flipped-s", "6",
                 "--alpha", "0.1", "--ranks", "8,10,12"],
            )
            assert code == 0
            assert tag in out

    def test_config_file_with_override(self, tmp_path, capsys):
        path = cre_csv(tmp_path)
        config = write(
            tmp_path, "run.json",
            json.dumps({"alpha": 0.05, "ranks": [10, 12], "stat": "wilcoxon"}),
        )
        code, out, _ = run(
            capsys, ["cre", "--input", path, "--config", config, "--alpha", "0.2"]
        )
        assert code == 0
        rows = [line.split(",") for line in out.splitlines()[1:]]
        assert [r[0] for r in rows] == ["10", "12"]
        assert all(float(r[3]) == pytest.approx(0.8) for r in rows)

    def test_json_format(self, tmp_path, capsys):
        path = cre_csv(tmp_path)
        code, out, _ = run(
            capsys,
            ["cre", "--input", path, "--ranks", "10", "--format", "json"],
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["kind"] == "quantile-profile"
        assert payload["meta"]["n"] == 12

    def test_output_file(self, tmp_path, capsys):
        path = cre_csv(tmp_path)
        out_path = tmp_path / "result.csv"
        code, out, _ = run(
            capsys,
            ["cre", "--input", path, "--ranks", "10", "--output", str(out_path)],
        )
        assert code == 0
        assert out == ""
        assert out_path.read_text(encoding="utf-8").startswith("rank,")


class TestStratifiedCommand:
    def test_run(self, tmp_path, capsys):
        path = pairs_csv(tmp_path, pairs=5)
        code, out, _ = run(
            capsys,
            ["stratified", "--input", path, "--alpha", "0.15",
             "--ranks", "6,8,10", "--method", "M1str"],
        )
        assert code == 0
        assert "M1str" in out

    def test_solver_choice_rejected_by_parser(self, tmp_path, capsys):
        path = pairs_csv(tmp_path, pairs=3)
        with pytest.raises(SystemExit):
            main(["stratified", "--input", path, "--solver", "magic"])
        capsys.readouterr()


class TestSensitivityCommand:
    def test_curves(self, tmp_path, capsys):
        path = pairs_csv(tmp_path)
        code, out, _ = run(
            capsys,
            ["sensitivity", "--input", path, "--alpha", "0.15",
             "--ranks", "9,11", "--gamma-grid", "1.0,1.5"],
        )
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "gamma,rank,lower_limit,level,amp_lambda,amp_delta"
        assert len(lines) == 5
        gamma_one = [l for l in lines[1:] if l.startswith("1.0,")]
        assert all(",nan,nan" in l for l in gamma_one)
        gamma_big = [l for l in lines[1:] if l.startswith("1.5,")]
        sym = 1.5 + math.sqrt(1.5**2 - 1.0)
        assert all(repr(sym) in l for l in gamma_big)

    def test_rejects_non_pairs(self, tmp_path, capsys):
        text = (
            "id,arm,stratum,outcome\n"
            "a,1,s1,2.0\nb,0,s1,1.0\nc,0,s1,0.5\nd,1,s2,3.0\ne,0,s2,0.0\n"
        )
        path = write(tmp_path, "blocks.csv", text)
        code, _, err = run(
            capsys, ["sensitivity", "--input", path, "--ranks", "3"]
        )
        assert code == 2
        assert "matched pairs" in err

    def test_rejects_missing_strata(self, tmp_path, capsys):
        path = cre_csv(tmp_path)
        code, _, err = run(
            capsys, ["sensitivity", "--input", path, "--ranks", "6"]
        )
        assert code == 2
        assert "stratum label" in err


class TestSimulateCommand:
    def test_run_and_determinism(self, tmp_path, capsys):
        pool1 = write(tmp_path, "p1.txt", "1.0\n2.0\n3.5\n")
        pool0 = write(tmp_path, "p0.txt", "0.0\n0.5\n")
        argv = [
            "simulate", "--pool1", pool1, "--pool0", pool0,
            "--n1", "5", "--n0", "5", "--reps", "3",
            "--methods", "M1-S2,M2-S2-S6", "--alpha", "0.1", "--seed", "4",
            "--fractions", "0.8,0.9",
        ]
        code1, out1, _ = run(capsys, argv)
        code2, out2, _ = run(capsys, argv)
        assert code1 == code2 == 0
        assert out1 == out2
        lines = out1.splitlines()
        assert lines[0] == "method,mean_ss,rank,median_lower_limit"
        tags = {line.split(",")[0] for line in lines[1:]}
        assert tags == {"M1-S2", "M2-S2-S6"}

    def test_pools_required(self, capsys):
        code, _, err = run(capsys, ["simulate", "--n1", "4", "--n0", "4"])
        assert code == 2
        assert "--pool1" in err

    def test_bad_pool_file(self, tmp_path, capsys):
        pool1 = write(tmp_path, "p1.txt", "1.0\nxyz\n")
        pool0 = write(tmp_path, "p0.txt", "0.0\n")
        code, _, err = run(
            capsys,
            ["simulate", "--pool1", pool1, "--pool0", pool0, "--n1", "2", "--n0", "2"],
        )
        assert code == 2
        assert "line 2" in err


class TestSateCommand:
    def test_normal_approx(self, tmp_path, capsys):
        path = cre_csv(tmp_path)
        code, out, _ = run(capsys, ["sate", "--input", path, "--alpha", "0.1"])
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "estimate,lower_limit,level,method"
        est, lower, level, method = lines[1].split(",")
        assert float(lower) < float(est)
        assert method == "normal_approx"

    def test_studentized(self, tmp_path, capsys):
        path = cre_csv(tmp_path, n1=5, n0=5)
        code, out, _ = run(
            capsys,
            ["sate", "--input", path, "--alpha", "0.1",
             "--method", "studentized_frt", "--mc-draws", "500"],
        )
        assert code == 0
        assert "studentized_frt" in out


class TestExitCodes:
    def test_missing_input_file_is_io_error(self, capsys):
        code, _, err = run(capsys, ["cre", "--input", "/nonexistent/x.csv"])
        assert code == 3
        assert "error:" in err

    def test_bad_csv_is_validation_error(self, tmp_path, capsys):
        path = write(tmp_path, "bad.csv", "id,arm,outcome\na,9,1.0\n")
        code, _, err = run(capsys, ["cre", "--input", path])
        assert code == 2
        assert "arm value" in err

    def test_unknown_config_key(self, tmp_path, capsys):
        path = cre_csv(tmp_path)
        config = write(tmp_path, "bad.json", json.dumps({"alfa": 0.1}))
        code, _, err = run(capsys, ["cre", "--input", path, "--config", config])
        assert code == 2
        assert "unknown config key" in err

    def test_unwritable_output(self, tmp_path, capsys):
        path = cre_csv(tmp_path)
        code, _, err = run(
            capsys,
            ["cre", "--input", path, "--ranks", "10",
             "--output", "/nonexistent-dir/out.csv"],
        )
        assert code == 3
