"""Acceptance criteria, one test each, printing a PASS/FAIL line with its runtime budget."""

import contextlib
import time

import pytest

from layeralgebra.arch import PER_CHANNEL, build_arch, compare, count_flops, count_params
from layeralgebra.bench import faster, run_bench
from layeralgebra.layers.spec import KINDS, LOCAL_ATTENTION
from layeralgebra.verify import FAIL, INAPPLICABLE, PASS, run_suite

M = 1e6
G = 1e9


@pytest.fixture
def criterion(capsys):
    """Time a block, compare against its budget and print one summary line."""

    @contextlib.contextmanager
    def run(number, title, budget_s):
        start = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            within = elapsed < budget_s
            status = "PASS" if ok and within else "FAIL"
            with capsys.disabled():
                print(f"\n[acceptance {number:2d}] {status} {title} ({elapsed:.2f}s, budget {budget_s:g}s)")
        assert within, f"took {elapsed:.2f}s, budget {budget_s}s"

    return run


def _instances(doc, prefix):
    return [r for r in doc["reports"] if r["name"].split("[")[0].split(":")[0] == prefix]


def _controls(doc):
    return [r for r in doc["reports"] if r["instance"].get("negative_control")]


def test_complexity_reproduction(criterion):
    with criterion(1, "reference params/FLOPs and reduction figures", 1.0):
        targets = {
            "swin-t": (28, 0.5, 4.5),
            "dwconv-t": (24, 0.5, 3.8),
            "swin-b": (88, 1.0, 15.4),
            "dwconv-b": (74, 1.0, 12.9),
        }
        for name, (p, ptol, f) in targets.items():
            r = count_flops(build_arch(name))
            assert abs(r.params_total / M - p) <= ptol, name
            assert abs(r.flops_total / G - f) <= 0.05 * f, name
        for pair, (pp, fp) in {("swin-t", "dwconv-t"): (14.2, 15.5),
                               ("swin-b", "dwconv-b"): (15.9, 16.2)}.items():
            c = compare(*(build_arch(n) for n in pair))
            assert abs(c["params_reduction_pct"] - pp) <= 1.0, pair
            assert abs(c["flops_reduction_pct"] - fp) <= 1.0, pair


def test_dynamic_predictor_calibration(criterion):
    with criterion(2, "dynamic predictor calibration (51M / 162M)", 1.0):
        tiny = count_params(build_arch("d-dwconv-t", predictor_mode=PER_CHANNEL)).params_total
        base = count_params(build_arch("d-dwconv-b", predictor_mode=PER_CHANNEL)).params_total
        assert abs(tiny / M - 51) <= 1.0
        assert abs(base / M - 162) <= 3.0


def test_dual_path_equivalence(criterion):
    with criterion(3, "per-head vs element-wise aggregation on 100 instances", 10.0):
        doc = run_suite("dual_path", seed=0)
        inst = _instances(doc, "dual_path")
        assert len(inst) >= 100
        assert all(r["status"] == PASS and r["metric"] < 1e-12 for r in inst)
        for r in inst:
            _, h, w, d = r["instance"]["shape"]
            assert h <= 16 and w <= 16 and d <= 96
            assert r["instance"]["heads_or_groups"] in (1, 2, 3, d)
        assert {r["instance"]["heads_or_groups"] for r in inst} >= {1, 2, 3}
        assert all(r["status"] == PASS for r in _controls(doc))


def test_dense_oracle_equivalence(criterion):
    with criterion(4, "every layer kind against its dense operator", 30.0):
        doc = run_suite("oracle", seed=0)
        inst = _instances(doc, "oracle")
        assert len(inst) >= 50
        assert all(r["status"] == PASS and r["metric"] < 1e-10 for r in inst)
        assert {r["instance"]["kind"] for r in inst} == set(KINDS)
        dynamic_attention = [r for r in inst if r["instance"]["kind"] == LOCAL_ATTENTION]
        assert dynamic_attention
        controls = _controls(doc)
        assert len(controls) == len(KINDS) and all(r["status"] == PASS for r in controls)


def test_kronecker_identity(criterion):
    with criterion(5, "Kronecker identity on 20 instances", 1.0):
        doc = run_suite("kronecker", seed=0)
        inst = _instances(doc, "kronecker")
        assert len(inst) >= 20
        assert all(r["status"] == PASS and r["metric"] < 1e-12 for r in inst)
        assert all(max(r["instance"]["a"] + r["instance"]["b"]) <= 8 for r in inst)
        assert all(r["status"] == PASS for r in _controls(doc))


def test_gradient_correctness(criterion):
    with criterion(6, "analytic backward vs central differences, all kinds", 60.0):
        doc = run_suite("grad", seed=0)
        inst = _instances(doc, "grad")
        assert {r["instance"]["kind"] for r in inst} == set(KINDS)
        for r in inst:
            assert r["status"] == PASS and r["metric"] < 1e-4
            assert r["instance"]["step"] == 1e-5
            assert "input" in r["instance"]["per_tensor"]
        assert all(r["status"] == PASS for r in _controls(doc))


def test_equivariance_suite(criterion):
    with criterion(7, "translation equivariance and its unit-shift witness", 10.0):
        doc = run_suite("equivariance", seed=0)
        inst = _instances(doc, "equivariance")
        assert not [r for r in inst if r["status"] == FAIL]
        circular = [r for r in inst if r["instance"]["kind"] == "depthwise_conv"
                    and r["instance"]["padding"] == "circular"]
        zero = [r for r in inst if r["instance"]["kind"] == "depthwise_conv"
                and r["instance"]["padding"] == "zero"]
        assert len(circular) == 64 and all(r["instance"]["shape"][1:3] == [8, 8] for r in circular)
        assert all(r["metric"] <= 1e-12 for r in circular)
        assert all(r["status"] == PASS and r["metric"] <= 1e-12 for r in zero)
        attention = [r for r in inst if r["instance"]["kind"] == LOCAL_ATTENTION]
        block = [r for r in attention if r["status"] == PASS]
        assert block and all(r["metric"] <= 1e-12 for r in block)
        assert all(r["status"] == INAPPLICABLE for r in attention if r not in block)
        witness = _instances(doc, "equivariance_witness")
        assert witness and all(r["status"] == PASS and r["metric"] > 1e-12 for r in witness)
        assert all(r["status"] == PASS for r in _controls(doc))


def test_structure_suite(criterion):
    with criterion(8, "sharing and sparsity rows plus locality probes", 10.0):
        doc = run_suite("structure", seed=0)
        rows = {r["instance"]["row"] for r in _instances(doc, "structure") if r["status"] == PASS}
        assert rows >= {"local_attention", "attention", "dw_conv", "d_dw_conv",
                        "pointwise_conv", "channel_separable_mlp"}
        assert not [r for r in doc["reports"] if r["status"] == FAIL]
        probes = [r for r in _instances(doc, "locality") if r["status"] == PASS]
        assert {r["instance"]["kind"] for r in probes} >= {"local_attention", "depthwise_conv"}
        assert all(r["status"] == PASS for r in _controls(doc))


def test_set_representation(criterion):
    with criterion(9, "slot permutation invariance and the biased counterexample", 5.0):
        doc = run_suite("set", seed=0)
        inst = _instances(doc, "set")
        assert inst and all(r["status"] == PASS and r["metric"] <= 1e-12 for r in inst)
        assert not any(r["instance"]["relative_position_bias"] for r in inst)
        counter = _instances(doc, "set_counterexample")
        assert len(counter) == 1 and counter[0]["status"] == PASS and counter[0]["metric"] > 1e-12
        assert counter[0]["instance"]["relative_position_bias"]


def test_throughput_direction(criterion):
    # three benchmark runs of 30 timed passes each; well under a minute on one core
    with criterion(10, "depth-wise 7x7 faster than local attention 7x7, 3 of 3 runs", 120.0):
        for _ in range(3):
            reports = run_bench()
            assert all(r.input_shape == (1, 56, 56, 96) and r.precision == "fp32" for r in reports)
            assert faster(reports, "depthwise_conv", LOCAL_ATTENTION)
