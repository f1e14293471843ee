import csv
import io
import json

import pytest

from rcad.cli import EXIT_INVALID, EXIT_OK, EXIT_REPRODUCTION, main

REF = ["--T", "1e-3", "--q", "1024", "--alpha", "-0.55", "--gamma", "1.45", "--sigma-x2", "134"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv, "--format", "json")
    return code, json.loads(out), err


class TestPredict:
    def test_reference_row(self, capsys):
        code, doc, _ = run_json(capsys, "predict", *REF)
        assert code == EXIT_OK
        assert doc["rate"]["skr"] == pytest.approx(0.00095, rel=0.15)
        assert doc["config"]["n"] == 41

    def test_human_output(self, capsys):
        code, out, _ = run(capsys, "predict", *REF)
        fields = dict(line.split(None, 1) for line in out.strip().splitlines())
        assert set(fields) == {"n", "P_TA", "P_FA", "SER", "SKR", "I_XY", "I_EY", "DW", "PLOB"}
        _, doc, _ = run_json(capsys, "predict", *REF)
        assert fields["SKR"].strip() == f"{doc['rate']['skr']:.6g}"

    def test_small_gamma_negative(self, capsys):
        args = [a if a != "1.45" else "0.5" for a in REF]
        _, doc, _ = run_json(capsys, "predict", *args)
        assert doc["rate"]["skr"] < 0

    def test_pinned_n_echoed(self, capsys):
        _, doc, _ = run_json(capsys, "predict", *REF, "--n", "41")
        assert doc["config"]["n"] == 41 and doc["config"]["n_pinned"]
        assert doc["rate"]["n"] == 41

    def test_distance_flag(self, capsys):
        args = ["--distance-km", "136"] + REF[2:]
        _, doc, _ = run_json(capsys, "predict", *args)
        assert doc["config"]["distance_km"] == 136.0
        assert doc["config"]["T"] == pytest.approx(10 ** (-0.022 * 136))

    def test_csv_format(self, capsys):
        code, out, _ = run(capsys, "predict", *REF, "--format", "csv")
        row = next(csv.DictReader(io.StringIO(out)))
        assert float(row["rate.n"]) == 41

    @pytest.mark.parametrize("bad", [["--T", "1.5"], ["--q", "1"], ["--gamma", "-1"],
                                     ["--sigma-x2", "-2"]])
    def test_validation_exit_code(self, capsys, bad):
        args = list(REF)
        i = args.index(bad[0])
        args[i + 1] = bad[1]
        code, _, err = run(capsys, "predict", *args)
        assert code == EXIT_INVALID and "error" in err

    def test_missing_transmission(self, capsys):
        code, _, err = run(capsys, "predict", *REF[2:])
        assert code == EXIT_INVALID and "T" in err

    def test_usage_error(self, capsys):
        code, _, _ = run(capsys, "predict", "--T", "1e-3")
        assert code == 2


class TestMonteCarlo:
    @pytest.mark.slow
    def test_byte_identical_json(self, capsys):
        a = run(capsys, "mc", *REF, "--trials", "100000", "--seed", "42", "--format", "json")
        b = run(capsys, "mc", *REF, "--trials", "100000", "--seed", "42", "--format", "json")
        assert a[0] == EXIT_OK and a[1] == b[1]
        doc = json.loads(a[1])
        assert abs(doc["z"]["p_ta"]) < 3 and abs(doc["z"]["p_fa"]) < 3
        assert doc["seed"] == 42

    def test_thread_invariance(self, capsys):
        base = [*REF, "--trials", "3000", "--seed", "9", "--format", "json"]
        assert run(capsys, "mc", *base, "--threads", "1")[1] == \
            run(capsys, "mc", *base, "--threads", "6")[1]

    def test_fixed_m(self, capsys):
        _, doc, _ = run_json(capsys, "mc", *REF, "--trials", "5000", "--m", "n")
        assert doc["config"]["mode"] == "fixed-m" and doc["config"]["m"] == 41.0
        assert abs(doc["z"]["p_ta"]) < 4

    def test_very_negative_alpha(self, capsys):
        args = [a if a != "-0.55" else "-99" for a in REF]
        code, doc, err = run_json(capsys, "mc", *args, "--trials", "200")
        assert code == EXIT_OK and "warning" in err
        assert doc["tally"]["case_counts"]["4"] == 200

    def test_negative_m(self, capsys):
        code, _, _ = run(capsys, "mc", *REF, "--m", "-1")
        assert code == EXIT_INVALID


class TestGridCommands:
    def test_landscape_files(self, capsys, tmp_path):
        code, out, _ = run(capsys, "landscape", "--T", "1e-3", "--sigma-x2", "163",
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        csvs = list(tmp_path.glob("landscape-*.csv"))
        assert len(csvs) == 1
        rows = list(csv.DictReader(csvs[0].open()))
        assert max(float(r["skr"]) for r in rows) > 0
        manifest = json.loads(next(tmp_path.glob("*.manifest.json")).read_text())
        assert csvs[0].name in manifest["outputs"]
        assert manifest["command"] == "landscape" and manifest["wall_clock_s"] > 0
        assert csvs[0].name.startswith(f"landscape-{manifest['run_id']}")
        result = json.loads(next(tmp_path.glob("landscape-*[0-9a-f].json")).read_text())
        assert result["manifest"].endswith(".manifest.json")

    def test_landscape_run_id_is_stable(self, capsys, tmp_path):
        for _ in range(2):
            run(capsys, "landscape", "--T", "1e-3", "--sigma-x2", "163", "--out", str(tmp_path))
        assert len(list(tmp_path.glob("*.manifest.json"))) == 1

    @pytest.mark.slow
    def test_optimize(self, capsys):
        code, doc, _ = run_json(capsys, "optimize", "--T", "1e-6", "--q", "1024")
        assert code == EXIT_OK and doc["optimum"]["skr"] >= 0.00085

    @pytest.mark.slow
    def test_sweep(self, capsys, tmp_path):
        code, out, _ = run(capsys, "sweep", "--q", "1024", "--distances", "45,136,273,364",
                           "--format", "csv", "--out", str(tmp_path))
        assert code == EXIT_OK
        rows = list(csv.DictReader(io.StringIO(out)))
        assert len(rows) == 4
        assert {"skr_opt", "plob_cv", "max_dw"} <= set(rows[0])

    def test_empty_distances(self, capsys):
        code, _, _ = run(capsys, "sweep", "--distances", ",")
        assert code == EXIT_INVALID


class TestReproduce:
    def test_fig5_reports_failure(self, capsys):
        # argmax of f_0.95 is 1.86, outside 15% of the large-x estimate 2.58
        code, doc, _ = run_json(capsys, "reproduce", "fig5")
        assert code == EXIT_REPRODUCTION
        assert doc["report"]["failed"] == ["argmax f_0.95"]

    def test_fig5_files(self, capsys, tmp_path):
        run(capsys, "reproduce", "fig5", "--out", str(tmp_path))
        rows = list(csv.DictReader(next(tmp_path.glob("reproduce-fig5-*.csv")).open()))
        assert {"beta", "argmax", "max", "argmax_asymptote"} == set(rows[0])

    def test_table1_columns(self, capsys):
        code, out, _ = run(capsys, "reproduce", "table1", "--format", "csv")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert len(rows) == 16 and "skr_rel_err" in rows[0]
        assert code == EXIT_REPRODUCTION
