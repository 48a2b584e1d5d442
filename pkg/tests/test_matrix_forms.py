import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layeralgebra.errors import ConfigurationError, GeometryError, ShapeError
from layeralgebra.layers import init_params, layer_forward
from layeralgebra.layers.spec import (
    DEPTHWISE_CONV,
    LOCAL_ATTENTION,
    PARTITION,
    POINTWISE_CONV,
    SLIDING,
    STATIC_LOCAL_ATTENTION,
    TOKEN_MIXING_MLP,
    LayerParams,
    LayerSpec,
    WindowGeometry,
)
from layeralgebra.matrix_forms import (
    CHANNEL_MAJOR,
    POSITION_MAJOR,
    SIZE_CAP,
    DenseOperator,
    LowRankFactors,
    apply_to_map,
    circulant_from_kernel,
    compose,
    conv_dense_operator,
    dense_apply,
    depthwise_dense_operator,
    flatten,
    kronecker_apply,
    layer_dense_operator,
    layout_permutation,
    local_attention_dense_operator,
    lowrank_apply,
    lowrank_operator,
    sepmlp_channel_operator,
    sepmlp_spatial_operator,
    to_layout,
    unflatten,
)


def rand(shape, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, shape)


def shift_matrix(n, s=1):
    return np.roll(np.eye(n), s, axis=1)


# -- circulant -----------------------------------------------------------------


def test_circulant_first_row_wraps():
    a1, a2, a3 = 1.0, 2.0, 3.0
    op = circulant_from_kernel([a1, a2, a3], 4)
    assert op.matrix[0].tolist() == [a2, a3, 0.0, a1]
    assert op.matrix[3].tolist() == [a3, 0.0, a1, a2]
    # a1 at the top-right corner, a3 at the bottom-left
    assert op.matrix[0, -1] == a1 and op.matrix[-1, 0] == a3


def test_circulant_delta_is_identity():
    assert np.array_equal(circulant_from_kernel([0, 0, 1, 0, 0], 6).matrix, np.eye(6))


def test_circulant_constant_vector():
    k = np.array([0.5, -1.0, 2.0])
    y = dense_apply(circulant_from_kernel(k, 5), np.full(5, 3.0))
    assert np.allclose(y, k.sum() * 3.0, atol=1e-15)


def test_circulant_rejects_bad_kernels():
    with pytest.raises(GeometryError):
        circulant_from_kernel([1, 2, 3, 4, 5], 4)
    with pytest.raises(GeometryError):
        circulant_from_kernel([1, 2], 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 12), st.sampled_from([1, 3, 5]), st.integers(0, 10**6))
def test_circulant_commutes_with_cyclic_shift(n, k, seed):
    if k > n:
        return
    c = circulant_from_kernel(rand(k, seed), n).matrix
    s = shift_matrix(n)
    assert np.max(np.abs(c @ s - s @ c)) < 1e-12


def test_circulant_mask_counts():
    op = circulant_from_kernel([1.0, 0.0, 2.0], 6)
    # the declared mask keeps a zero tap structurally present
    assert op.mask.sum() == 18
    assert op.nonzeros() == 12


# -- full and depth-wise convolution ------------------------------------------


def test_conv_single_channel_is_circulant():
    k = rand(3, 1)
    assert np.array_equal(conv_dense_operator(k[None, None], 5).matrix,
                          circulant_from_kernel(k, 5).matrix)


def test_conv_sums_channels():
    delta = np.array([0.0, 1.0, 0.0])
    op = conv_dense_operator(np.stack([delta, delta])[None], 4)
    x = rand(8, 2)
    assert np.array_equal(dense_apply(op, x), x[:4] + x[4:])


def test_conv_matches_naive_loop():
    k = rand((2, 2, 3), 3)
    x = rand((2, 6), 4)
    ref = np.zeros((2, 6))
    for co in range(2):
        for ci in range(2):
            for i in range(6):
                for t in range(3):
                    ref[co, i] += k[co, ci, t] * x[ci, (i + t - 1) % 6]
    y = dense_apply(conv_dense_operator(k, 6), x.ravel())
    assert np.max(np.abs(y - ref.ravel())) < 1e-12


def test_conv_extent_mismatch():
    with pytest.raises(ShapeError):
        conv_dense_operator(np.ones((2, 3)), 4)
    with pytest.raises(GeometryError):
        conv_dense_operator(np.ones((1, 1, 7)), 4)


def test_depthwise_off_diagonal_blocks_zero():
    op = depthwise_dense_operator(rand((3, 3), 5), 5)
    n = 5
    for a in range(3):
        for b in range(3):
            if a != b:
                assert np.all(op.matrix[a * n:(a + 1) * n, b * n:(b + 1) * n] == 0)


def test_depthwise_is_diagonal_full_conv():
    k = rand((3, 3), 6)
    full = np.zeros((3, 3, 3))
    for d in range(3):
        full[d, d] = k[d]
    assert np.array_equal(depthwise_dense_operator(k, 6).matrix, conv_dense_operator(full, 6).matrix)


@pytest.mark.parametrize("padding", ["circular", "zero"])
def test_depthwise_matches_layer(padding):
    spec = LayerSpec(DEPTHWISE_CONV, 3, 1, WindowGeometry(3, 3, SLIDING, padding))
    params = init_params(spec, 7)
    x = rand((1, 4, 5, 3), 7)
    op = depthwise_dense_operator(np.moveaxis(params.kernel, -1, 0), (4, 5), padding)
    assert np.max(np.abs(apply_to_map(op, x) - layer_forward(x, spec, params))) < 1e-10


def test_depthwise_sparsity():
    n, c, k = 8, 4, 3
    op = depthwise_dense_operator(rand((c, k), 8) + 2.0, n)
    assert op.sparsity() == pytest.approx(1 - k / (n * c))
    assert op.structural_sparsity() == pytest.approx(1 - k / (n * c))


# -- separable MLP and Kronecker ------------------------------------------------


def test_sepmlp_channel_identity():
    assert np.array_equal(sepmlp_channel_operator(np.eye(4), 3).matrix, np.eye(12))


def test_sepmlp_channel_blocks_shared():
    wc = rand((4, 4), 9)
    m = sepmlp_channel_operator(wc, 3).matrix
    for d in range(3):
        assert np.array_equal(m[4 * d:4 * d + 4, 4 * d:4 * d + 4], wc)


def test_sepmlp_channel_matches_token_mixing():
    spec = LayerSpec(TOKEN_MIXING_MLP, 3, 1, WindowGeometry(1, 1))
    params = init_params(spec, 10, spatial=(2, 3))
    x = rand((1, 2, 3, 3), 10)
    op = sepmlp_channel_operator(params.wc, 3)
    assert np.max(np.abs(apply_to_map(op, x) - layer_forward(x, spec, params))) < 1e-10


def test_sepmlp_spatial_identity_and_blocks():
    assert np.array_equal(sepmlp_spatial_operator(np.eye(3), 4).matrix, np.eye(12))
    wp = rand((2, 3), 11)
    m = sepmlp_spatial_operator(wp, 4).matrix
    for p in range(4):
        assert np.array_equal(m[2 * p:2 * p + 2, 3 * p:3 * p + 3], wp)


def test_sepmlp_spatial_matches_pointwise():
    spec = LayerSpec(POINTWISE_CONV, 3, 1, WindowGeometry(1, 1), out_channels=2)
    params = init_params(spec, 12).replace(pw_bias=None)
    x = rand((1, 3, 3, 3), 12)
    op = sepmlp_spatial_operator(params.pw.T, 9)
    assert np.max(np.abs(apply_to_map(op, x) - layer_forward(x, spec, params))) < 1e-10


def test_sepmlp_rejects_non_square():
    with pytest.raises(ShapeError):
        sepmlp_channel_operator(np.ones((2, 3)), 2)


def test_kronecker_identities():
    x = rand(6, 13)
    assert np.array_equal(kronecker_apply(np.eye(2), np.eye(3), x), x)
    assert np.allclose(kronecker_apply(2 * np.eye(2), 3 * np.eye(3), x), 6 * x, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 10**6))
def test_kronecker_matches_explicit(c, n, seed):
    rng = np.random.default_rng(seed)
    a, b, x = rng.normal(size=(c, c)), rng.normal(size=(n, n)), rng.normal(size=c * n)
    assert np.max(np.abs(kronecker_apply(a, b, x) - np.kron(b.T, a) @ x)) < 1e-12


def test_kronecker_shape_mismatch():
    with pytest.raises(ShapeError):
        kronecker_apply(np.eye(2), np.eye(3), np.ones(5))


# -- local attention operator ---------------------------------------------------


def attn_spec(d=4, m=1, k=2, **kw):
    return LayerSpec(LOCAL_ATTENTION, d, m, WindowGeometry(k, k, PARTITION), **kw)


@pytest.mark.parametrize("m,bias", [(1, False), (2, True), (4, False)])
def test_attention_operator_matches_forward(m, bias):
    spec = attn_spec(4, m, 2, use_relative_position_bias=bias)
    params = init_params(spec, 14)
    x = rand((1, 4, 6, 4), 14)
    op = local_attention_dense_operator(x, spec, params)
    assert np.max(np.abs(apply_to_map(op, x) - layer_forward(x, spec, params))) < 1e-10


def test_attention_operator_with_projections():
    spec = attn_spec(4, 2, 2, use_qkv_projections=True)
    params = init_params(spec, 15).replace(bv=None, bo=None)
    x = rand((1, 4, 4, 4), 15)
    op = local_attention_dense_operator(x, spec, params)
    assert np.max(np.abs(apply_to_map(op, x) - layer_forward(x, spec, params))) < 1e-10


def test_attention_operator_rejects_projection_bias():
    spec = attn_spec(4, 2, 2, use_qkv_projections=True)
    with pytest.raises(ConfigurationError):
        local_attention_dense_operator(rand((1, 2, 2, 4)), spec, init_params(spec, 0))


def test_attention_single_head_blocks_identical():
    spec = attn_spec(3, 1, 2)
    x = rand((1, 4, 4, 3), 16)
    m = local_attention_dense_operator(x, spec, LayerParams()).matrix
    n = 16
    assert np.array_equal(m[:n, :n], m[n:2 * n, n:2 * n])
    assert np.array_equal(m[:n, :n], m[2 * n:, 2 * n:])


def test_attention_zero_outside_window():
    spec = attn_spec(2, 1, 2)
    op = local_attention_dense_operator(rand((1, 4, 4, 2), 17), spec, LayerParams())
    assert np.all(op.matrix[~op.mask] == 0)
    # each row holds exactly Nk nonzeros (softmax weights are positive)
    assert np.all(np.count_nonzero(op.matrix, axis=1) == 4)


def test_static_attention_operator_matches_forward():
    spec = LayerSpec(STATIC_LOCAL_ATTENTION, 4, 2, WindowGeometry(2, 2, PARTITION))
    params = init_params(spec, 18, spatial=(4, 4))
    x = rand((1, 4, 4, 4), 18)
    op = local_attention_dense_operator(x, spec, params)
    assert np.max(np.abs(apply_to_map(op, x) - layer_forward(x, spec, params))) < 1e-10


def test_attention_operator_rejects_conv_kind():
    spec = LayerSpec(DEPTHWISE_CONV, 2)
    with pytest.raises(ConfigurationError):
        local_attention_dense_operator(rand((1, 3, 3, 2)), spec, init_params(spec, 0))


def test_layer_dense_operator_rejects_affine_pointwise():
    spec = LayerSpec(POINTWISE_CONV, 2, 1, WindowGeometry(1, 1))
    params = init_params(spec, 0)
    with pytest.raises(ConfigurationError):
        layer_dense_operator(rand((1, 2, 2, 2)), spec, params)


def test_size_cap():
    with pytest.raises(ShapeError):
        sepmlp_channel_operator(np.eye(SIZE_CAP // 2 + 1), 2)


# -- low rank ------------------------------------------------------------------


def test_lowrank_full_rank_identity_left():
    w = rand((3, 3), 19)
    x = rand(3, 20)
    assert np.allclose(lowrank_apply(LowRankFactors(np.eye(3), w), x), w @ x, atol=1e-15)


def test_lowrank_rank_one_image():
    f = LowRankFactors(rand((4, 1), 21), rand((1, 5), 22))
    u = f.left[:, 0]
    for seed in range(5):
        y = lowrank_apply(f, rand(5, seed))
        # y is parallel to u
        assert abs(abs(y @ u) - np.linalg.norm(y) * np.linalg.norm(u)) < 1e-12


def test_lowrank_matches_explicit_product():
    f = LowRankFactors(rand((5, 2), 23), rand((2, 6), 24))
    x = rand(6, 25)
    assert np.max(np.abs(lowrank_apply(f, x) - lowrank_operator(f) @ x)) < 1e-12
    assert np.linalg.matrix_rank(lowrank_operator(f)) <= 2


def test_lowrank_validation():
    with pytest.raises(ShapeError):
        LowRankFactors(np.ones((2, 3)), np.ones((2, 2)))
    with pytest.raises(ShapeError):
        LowRankFactors(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        lowrank_apply(LowRankFactors(np.ones((2, 1)), np.ones((1, 3))), np.ones(4))


# -- dense_apply and layouts ----------------------------------------------------


def test_dense_apply_identity_and_zero():
    x = rand(6, 26)
    eye = DenseOperator(np.eye(6), CHANNEL_MAJOR, "identity", 3, 2, 2)
    zero = DenseOperator(np.zeros((6, 6)), CHANNEL_MAJOR, "zero", 3, 2, 2)
    assert np.array_equal(dense_apply(eye, x), x)
    assert np.all(dense_apply(zero, x) == 0)


def test_dense_apply_length_checked():
    with pytest.raises(ShapeError):
        dense_apply(DenseOperator(np.eye(4), CHANNEL_MAJOR, "identity", 4, 1, 1), np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 10**6))
def test_dense_apply_linear(alpha, beta, seed):
    op = conv_dense_operator(rand((2, 2, 3), seed), 5)
    x, y = rand(10, seed + 1), rand(10, seed + 2)
    lhs = dense_apply(op, alpha * x + beta * y)
    rhs = alpha * dense_apply(op, x) + beta * dense_apply(op, y)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_operator_shape_checked():
    with pytest.raises(ShapeError):
        DenseOperator(np.eye(5), CHANNEL_MAJOR, "bad", 2, 2, 2)
    with pytest.raises(ConfigurationError):
        DenseOperator(np.eye(4), "diagonal_major", "bad", 2, 2, 2)


def test_flatten_round_trip():
    x = rand((1, 2, 3, 4), 27)
    for layout in (CHANNEL_MAJOR, POSITION_MAJOR):
        assert np.array_equal(unflatten(flatten(x, layout), layout, 2, 3, 4), x)
    cm, pm = flatten(x, CHANNEL_MAJOR), flatten(x, POSITION_MAJOR)
    assert np.array_equal(pm[layout_permutation(6, 4)], cm)


def test_layouts_are_permutation_conjugate():
    op = depthwise_dense_operator(rand((3, 3), 28), 5)
    pm = to_layout(op, POSITION_MAJOR)
    p = np.eye(15)[layout_permutation(5, 3)]
    # channel-major = P position-major  =>  W_cm = P W_pm P^T
    assert np.max(np.abs(op.matrix - p @ pm.matrix @ p.T)) < 1e-15
    assert np.array_equal(to_layout(pm, CHANNEL_MAJOR).matrix, op.matrix)
    x = rand((1, 1, 5, 3), 29)
    assert np.max(np.abs(apply_to_map(pm, x) - apply_to_map(op, x))) < 1e-14


def test_compose_pointwise_after_depthwise():
    dw = LayerSpec(DEPTHWISE_CONV, 3, 1, WindowGeometry(3, 3, SLIDING, "circular"))
    pw = LayerSpec(POINTWISE_CONV, 3, 1, WindowGeometry(1, 1))
    pd, pp = init_params(dw, 30), init_params(pw, 31).replace(pw_bias=None)
    x = rand((1, 3, 4, 3), 32)
    op = compose(layer_dense_operator(x, pw, pp), layer_dense_operator(x, dw, pd))
    ref = layer_forward(layer_forward(x, dw, pd), pw, pp)
    assert np.max(np.abs(apply_to_map(op, x) - ref)) < 1e-12
