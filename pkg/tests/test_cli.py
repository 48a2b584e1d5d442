import csv
import io
import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from layeralgebra import cli
from layeralgebra.cli import EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE, main
from layeralgebra.matrix_forms import layout_permutation
from layeralgebra.schemas import SCHEMAS, load_schema

SMALL_BENCH = ["bench", "--input", "1x14x14x8", "--heads", "2", "--reps", "30", "--warmup", "1"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == EXIT_OK, err
    return json.loads(out)


def validate(doc, name):
    jsonschema.validate(doc, load_schema(name))


# -- schemas ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", SCHEMAS)
def test_schemas_are_valid(name):
    jsonschema.Draft202012Validator.check_schema(load_schema(name))


# -- verify -------------------------------------------------------------------------------


def test_verify_oracle_seed_42(capsys):
    doc = run_json(capsys, "verify", "--suite", "oracle", "--seed", "42")
    validate(doc, "verify_report")
    assert doc["passed"] and doc["suites"][0]["counts"]["fail"] == 0


def test_verify_grad_one_layer(capsys):
    doc = run_json(capsys, "verify", "--suite", "grad", "--layer", "local_attention")
    validate(doc, "verify_report")
    kinds = {r["instance"].get("kind") for r in doc["suites"][0]["reports"]}
    assert "local_attention" in kinds


def test_verify_unknown_suite_is_usage_error(capsys):
    code, out, err = run(capsys, "verify", "--suite", "everything")
    assert code == EXIT_USAGE != EXIT_CHECK_FAILED
    assert "unknown suite" in err and out == ""


def test_verify_unknown_layer(capsys):
    assert run(capsys, "verify", "--layer", "capsule")[0] == EXIT_USAGE


def test_verify_failure_exit_code(capsys, monkeypatch):
    monkeypatch.setattr(cli, "run_suites", lambda names, seed, layer: {"passed": False, "suites": []})
    assert run(capsys, "verify", "--suite", "set")[0] == EXIT_CHECK_FAILED


def test_verify_writes_out_file(tmp_path, capsys):
    out = tmp_path / "report.json"
    code, stdout, _ = run(capsys, "verify", "--suite", "kronecker", "--out", str(out))
    assert code == EXIT_OK and stdout == ""
    validate(json.loads(out.read_text()), "verify_report")


# -- config -------------------------------------------------------------------------------


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# verify settings\nsuite = kronecker set\nseed = 5\n")
    doc = run_json(capsys, "verify", "--config", str(cfg), "--seed", "9")
    assert doc["seed"] == 9
    assert [s["suite"] for s in doc["suites"]] == ["kronecker", "set"]


def test_config_alone(tmp_path, capsys):
    cfg = tmp_path / "count.cfg"
    cfg.write_text("arch = dwconv-t\ninput = 224\n")
    doc = run_json(capsys, "count", "--config", str(cfg))
    assert doc["arch"] == "dwconv-t"


@pytest.mark.parametrize("text", ["colour = blue\n", "seed = many\n", "just words\n"])
def test_bad_config(tmp_path, capsys, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert run(capsys, "verify", "--config", str(cfg))[0] == EXIT_USAGE


def test_missing_config(capsys, tmp_path):
    assert run(capsys, "verify", "--config", str(tmp_path / "none.cfg"))[0] == EXIT_USAGE


# -- count ---------------------------------------------------------------------------------


def test_count_swin_t(capsys):
    doc = run_json(capsys, "count", "--arch", "swin-t")
    validate(doc, "count_report")
    assert abs(doc["params_total"] / 1e6 - 28) <= 0.5
    assert sum(e["params"] for e in doc["breakdown"]) == doc["params_total"]


def test_count_dwconv_flops(capsys):
    doc = run_json(capsys, "count", "--arch", "dwconv-t", "--input", "224")
    assert abs(doc["flops_total"] / 1e9 - 3.8) <= 0.05 * 3.8


def test_count_compare(capsys):
    doc = run_json(capsys, "count", "--compare", "swin-t", "dwconv-t")
    validate(doc, "count_report")
    c = doc["comparison"]
    assert abs(c["params_reduction_pct"] - 14.2) <= 1 and abs(c["flops_reduction_pct"] - 15.5) <= 1


def test_count_errors(capsys):
    assert run(capsys, "count", "--arch", "resnet-50")[0] == EXIT_USAGE
    assert run(capsys, "count")[0] == EXIT_USAGE
    assert run(capsys, "count", "--arch", "swin-t", "--input", "225")[0] == EXIT_USAGE


# -- bench ---------------------------------------------------------------------------------


def test_bench_json(capsys):
    doc = run_json(capsys, *SMALL_BENCH)
    validate(doc, "bench_report")
    assert [r["kind"] for r in doc["reports"]] == ["depthwise_conv", "local_attention"]
    assert all(r["reps"] == 30 and r["p10_s"] <= r["median_s"] <= r["p90_s"] for r in doc["reports"])
    assert isinstance(doc["depthwise_faster_than_attention"], bool)


def test_bench_csv_from_extension(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert run(capsys, *SMALL_BENCH, "--kind", "pointwise_conv", "--out", str(out))[0] == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [r["kind"] for r in rows] == ["pointwise_conv"]
    assert rows[0]["input_shape"] == "1x14x14x8"


@pytest.mark.parametrize("argv", [
    ["--reps", "1"],
    ["--precision", "fp64"],
    ["--kind", "capsule"],
    ["--input", "56x56x96"],
])
def test_bench_rejects(capsys, argv):
    assert run(capsys, *SMALL_BENCH, *argv)[0] == EXIT_USAGE


# -- matrix dump ------------------------------------------------------------------------------


def test_dump_circulant_text(capsys):
    code, out, _ = run(capsys, "matrix-dump", "--kind", "circulant", "--kernel", "3", "--n", "4")
    assert code == EXIT_OK
    grid = [line.split() for line in out.splitlines() if not line.startswith("#")]
    # taps are 1, 2, 3 so entries name a1, a2, a3
    assert grid == [["2", "3", "0", "1"], ["1", "2", "3", "0"], ["0", "1", "2", "3"], ["3", "0", "1", "2"]]
    assert "# layout: channel_major" in out


def test_dump_toeplitz_drops_wraparound(capsys):
    doc = run_json(capsys, "matrix-dump", "--kind", "toeplitz", "--kernel", "3", "--n", "4", "--format", "json")
    assert doc["matrix"][0] == [2.0, 3.0, 0.0, 0.0]


def test_dump_depthwise_sparsity(capsys):
    n, c, k = 4, 3, 3
    doc = run_json(capsys, "matrix-dump", "--kind", "depthwise_conv", "--kernel", str(k), "--n", str(n),
                   "--channels", str(c), "--format", "json")
    validate(doc, "matrix_dump")
    positions = n * n
    expect = 1 - k * k / (positions * c)
    assert doc["structural_sparsity"] == pytest.approx(expect)
    assert doc["nonzeros"] == c * positions * k * k
    assert doc["sparsity"] == pytest.approx(expect)


def test_dump_layouts_are_permutation_conjugate(capsys):
    base = ["matrix-dump", "--kind", "pointwise_conv", "--n", "3", "--channels", "4", "--format", "json"]
    cm = np.array(run_json(capsys, *base, "--layout", "channel_major")["matrix"])
    pm = np.array(run_json(capsys, *base, "--layout", "position_major")["matrix"])
    p = np.eye(36)[layout_permutation(9, 4)]
    assert np.max(np.abs(cm - p @ pm @ p.T)) == 0.0
    # position-major pointwise is block diagonal with identical 4x4 blocks
    assert np.array_equal(pm[:4, :4], pm[4:8, 4:8]) and not np.any(pm[:4, 4:])


def test_dump_attention_json_file(tmp_path, capsys):
    out = tmp_path / "attn.json"
    code, _, _ = run(capsys, "matrix-dump", "--kind", "local_attention", "--kernel", "2", "--n", "4",
                     "--channels", "2", "--heads", "2", "--out", str(out))
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    validate(doc, "matrix_dump")
    assert doc["shape"] == [32, 32]


def test_dump_errors(capsys):
    assert run(capsys, "matrix-dump", "--kind", "capsule")[0] == EXIT_USAGE
    assert run(capsys, "matrix-dump", "--kind", "circulant", "--kernel", "5", "--n", "4")[0] == EXIT_USAGE
    # 64x64 map with 2 channels exceeds the 4096 cap
    assert run(capsys, "matrix-dump", "--kind", "depthwise_conv", "--n", "64", "--channels", "2")[0] == EXIT_USAGE


def test_dump_deterministic(capsys):
    argv = ["matrix-dump", "--kind", "inhomogeneous_dynamic_conv", "--n", "3", "--channels", "4",
            "--heads", "2", "--seed", "7"]
    assert run(capsys, *argv)[1] == run(capsys, *argv)[1]


# -- entry point ---------------------------------------------------------------------------------


def test_no_command_is_usage_error(capsys):
    assert run(capsys)[0] == EXIT_USAGE


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "layeralgebra.cli", "count", "--arch", "swin-b"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert abs(json.loads(proc.stdout)["params_total"] / 1e6 - 88) <= 1
