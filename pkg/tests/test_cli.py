import json

import numpy as np
import pytest

from chanmix.cli import (
    EXIT_CONVERGENCE,
    EXIT_INPUT,
    EXIT_OK,
    EXIT_USAGE,
    main,
)
from chanmix.evaluation import FitReport
from chanmix.mixture import MixtureModel, sample

TRUTH = MixtureModel.from_arrays([0.55, 0.45], [40.0, 220.0], [8.0, 30.0])


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "powers.csv"
    values = sample(TRUTH, 1200, seed=3)
    path.write_text("power_mw\n" + "".join(f"{float(v)!r}\n" for v in values))
    return path


@pytest.fixture(scope="module")
def em_report(tmp_path_factory, data_csv):
    out = tmp_path_factory.mktemp("cli-em") / "em.json"
    code = main(["fit-em", str(data_csv), "--k", "2", "--seed", "5", "--out", str(out)])
    assert code == EXIT_OK
    return out


def report_payload(path, drop_runtime=True):
    payload = json.loads(path.read_text())
    if drop_runtime:
        payload.pop("runtime_seconds", None)
    return payload


class TestFitEm:
    def test_writes_valid_report(self, em_report):
        report = FitReport.from_json(em_report.read_text())
        assert report.method == "EM"
        assert report.k_configured == 2
        assert report.k_effective <= 2
        assert report.kl_divergence < 0.1

    def test_missing_file_exit_1(self, tmp_path):
        out = tmp_path / "r.json"
        assert main(["fit-em", "no-such-file.csv", "--k", "2", "--out", str(out)]) == EXIT_INPUT

    def test_k_zero_usage_error(self, data_csv, tmp_path):
        out = tmp_path / "r.json"
        assert main(["fit-em", str(data_csv), "--k", "0", "--out", str(out)]) == EXIT_USAGE

    def test_missing_k_usage_error(self, data_csv, tmp_path):
        assert main(["fit-em", str(data_csv), "--out", str(tmp_path / "r.json")]) == EXIT_USAGE

    def test_non_convergence_exit_2(self, data_csv, tmp_path):
        out = tmp_path / "r.json"
        code = main(
            ["fit-em", str(data_csv), "--k", "2", "--max-iters", "2", "--tol", "1e-14", "--out", str(out)]
        )
        assert code == EXIT_CONVERGENCE
        assert out.exists()  # report still written

    def test_deterministic_reports(self, data_csv, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert main(["fit-em", str(data_csv), "--k", "2", "--seed", "7", "--out", str(out)]) == EXIT_OK
        assert report_payload(a) == report_payload(b)

    def test_merge_required_for_multiple_inputs(self, data_csv, tmp_path):
        assert (
            main(["fit-em", str(data_csv), str(data_csv), "--k", "2", "--out", str(tmp_path / "r.json")])
            == EXIT_USAGE
        )

    def test_merge_concatenates(self, data_csv, tmp_path):
        out = tmp_path / "r.json"
        code = main(
            ["fit-em", str(data_csv), str(data_csv), "--merge", "--k", "2", "--out", str(out)]
        )
        assert code == EXIT_OK
        assert report_payload(out)["binning"]["n_samples"] == 2400


class TestConfigFile:
    def test_config_supplies_values(self, data_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"k": 2, "seed": 9, "bins": 40}))
        out = tmp_path / "r.json"
        assert main(["fit-em", str(data_csv), "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        payload = report_payload(out)
        assert payload["seed"] == 9
        assert payload["binning"]["bins"] == 40

    def test_flags_override_config(self, data_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"k": 2, "seed": 9}))
        out = tmp_path / "r.json"
        assert (
            main(["fit-em", str(data_csv), "--config", str(cfg), "--seed", "4", "--out", str(out)])
            == EXIT_OK
        )
        assert report_payload(out)["seed"] == 4

    def test_unknown_keys_rejected(self, data_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"k": 2, "mystery": 1}))
        assert (
            main(["fit-em", str(data_csv), "--config", str(cfg), "--out", str(tmp_path / "r.json")])
            == EXIT_INPUT
        )


class TestSynthAndEval:
    def test_synth_round_trip(self, tmp_path, data_csv):
        model_path = tmp_path / "model.json"
        model_path.write_text(TRUTH.to_json())
        synth_csv = tmp_path / "synth.csv"
        assert main(["synth", str(model_path), "--n", "800", "--seed", "2", "--out", str(synth_csv)]) == EXIT_OK
        lines = synth_csv.read_text().strip().splitlines()
        assert lines[0] == "power_mw"
        assert len(lines) == 801

        # synth then fit-em: end-to-end pipeline sanity
        out = tmp_path / "fit.json"
        assert main(["fit-em", str(synth_csv), "--k", "2", "--seed", "1", "--out", str(out)]) == EXIT_OK
        assert report_payload(out)["kl_divergence"] < 0.05

    def test_synth_requires_n(self, tmp_path):
        model_path = tmp_path / "model.json"
        model_path.write_text(TRUTH.to_json())
        assert main(["synth", str(model_path), "--out", str(tmp_path / "s.csv")]) == EXIT_USAGE

    def test_synth_deterministic(self, tmp_path):
        model_path = tmp_path / "model.json"
        model_path.write_text(TRUTH.to_json())
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert main(["synth", str(model_path), "--n", "50", "--seed", "6", "--out", str(out)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()

    def test_eval_two_reports(self, em_report, data_csv, tmp_path, capsys):
        second = tmp_path / "em2.json"
        assert main(["fit-em", str(data_csv), "--k", "3", "--seed", "5", "--out", str(second)]) == EXIT_OK
        csv_out = tmp_path / "table.csv"
        code = main(["eval", str(em_report), str(second), "--csv", str(csv_out)])
        assert code == EXIT_OK
        printed = capsys.readouterr().out
        assert "method" in printed and "EM" in printed
        header = csv_out.read_text().splitlines()[0]
        assert header.startswith("method,k_configured,k_effective,kl_divergence")

    def test_eval_single_report_errors(self, em_report):
        assert main(["eval", str(em_report)]) == EXIT_INPUT

    def test_eval_with_data_revalidates(self, em_report, data_csv, tmp_path):
        second = tmp_path / "em3.json"
        assert main(["fit-em", str(data_csv), "--k", "3", "--seed", "5", "--out", str(second)]) == EXIT_OK
        assert main(["eval", str(em_report), str(second), "--data", str(data_csv)]) == EXIT_OK

    def test_schema_mismatch_exit_1(self, em_report, tmp_path):
        bad = tmp_path / "bad.json"
        payload = json.loads(em_report.read_text())
        payload["schema"] = 2
        bad.write_text(json.dumps(payload))
        assert main(["eval", str(em_report), str(bad)]) == EXIT_INPUT


class TestPlot:
    def test_overlay_files_and_normalization(self, em_report, data_csv, tmp_path):
        svg = tmp_path / "overlay.svg"
        assert main(["plot", str(em_report), "--data", str(data_csv), "--out", str(svg)]) == EXIT_OK
        assert svg.exists()
        csv_path = tmp_path / "overlay.csv"
        assert csv_path.exists()
        rows = csv_path.read_text().strip().splitlines()
        assert rows[0].split(",")[0] == "x"
        assert len(rows) == 513
        xs = np.array([float(r.split(",")[0]) for r in rows[1:]])
        ys = np.array([float(r.split(",")[1]) for r in rows[1:]])
        assert np.trapezoid(ys, xs) == pytest.approx(1.0, abs=0.01)

    def test_plot_two_reports(self, em_report, data_csv, tmp_path):
        out = tmp_path / "two.svg"
        assert (
            main(["plot", str(em_report), str(em_report), "--data", str(data_csv), "--out", str(out)])
            == EXIT_OK
        )
        header = (tmp_path / "two.csv").read_text().splitlines()[0]
        assert header == "x,EM,EM_1"


class TestDispatch:
    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_no_arguments(self):
        assert main([]) == EXIT_USAGE


@pytest.mark.slow
class TestFitDpgmmCli:
    def test_small_fit_report_and_trace(self, data_csv, tmp_path):
        out = tmp_path / "dp.json"
        trace_csv = tmp_path / "trace.csv"
        code = main(
            [
                "fit-dpgmm",
                str(data_csv),
                "--truncation", "6",
                "--chains", "2",
                "--warmup", "300",
                "--draws", "150",
                "--init-k", "2",
                "--seed", "3",
                "--out", str(out),
                "--trace", str(trace_csv),
            ]
        )
        assert code == EXIT_OK
        payload = report_payload(out, drop_runtime=False)
        assert payload["method"] == "DPGMM"
        info = payload["extra"]["dpgmm"]
        assert info["truncation"] == 6
        assert info["r_hat_log_posterior"] is not None
        assert 1 <= payload["k_effective"] <= 4
        lines = trace_csv.read_text().splitlines()
        assert lines[0].startswith("chain,draw,log_posterior,concentration,stick_1")
        assert len(lines) == 1 + 2 * 150

    def test_single_chain_warns_in_report(self, data_csv, tmp_path):
        out = tmp_path / "dp1.json"
        code = main(
            [
                "fit-dpgmm",
                str(data_csv),
                "--truncation", "4",
                "--chains", "1",
                "--warmup", "200",
                "--draws", "80",
                "--init-k", "2",
                "--seed", "4",
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        info = report_payload(out)["extra"]["dpgmm"]
        assert info["r_hat_log_posterior"] is None
        assert any("single chain" in w for w in info["warnings"])

    def test_truncation_saturation_flagged(self, data_csv, tmp_path):
        out = tmp_path / "dp2.json"
        code = main(
            [
                "fit-dpgmm",
                str(data_csv),
                "--truncation", "2",
                "--chains", "1",
                "--warmup", "200",
                "--draws", "80",
                "--init-k", "2",
                "--seed", "5",
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        # 2-component truth at truncation 2: the remainder slot carries
        # real weight, which the report must flag
        info = report_payload(out)["extra"]["dpgmm"]
        assert info["truncation_saturated"] is True

    def test_deterministic_reports(self, data_csv, tmp_path):
        outs = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            code = main(
                [
                    "fit-dpgmm",
                    str(data_csv),
                    "--truncation", "4",
                    "--chains", "2",
                    "--warmup", "200",
                    "--draws", "60",
                    "--init-k", "2",
                    "--seed", "8",
                    "--out", str(out),
                ]
            )
            assert code == EXIT_OK
            outs.append(out)
        assert report_payload(outs[0]) == report_payload(outs[1])

    def test_rwm_fallback(self, data_csv, tmp_path):
        out = tmp_path / "dp3.json"
        code = main(
            [
                "fit-dpgmm",
                str(data_csv),
                "--truncation", "3",
                "--chains", "2",
                "--warmup", "400",
                "--draws", "200",
                "--init-k", "2",
                "--seed", "9",
                "--fallback-rwm",
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        assert report_payload(out)["extra"]["dpgmm"]["sampler"] == "rwm"
