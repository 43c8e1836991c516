import numpy as np
import pytest

from uwpose import autodiff as ad
from uwpose import model as md
from uwpose.errors import InvalidConfigError, InvalidShapeError

import reference_impls as ref

SMALL = dict(input_size=8, conv_channels=(4, 6), lstm_hidden=3, regressor_hidden=10)


def _batch(seed, n, size):
    return np.random.default_rng(seed).normal(size=(n, 3, size, size))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_default_channels_by_input_size():
    assert md.ModelConfig(input_size=224).conv_channels == (16, 32, 32, 32, 32)
    assert md.ModelConfig(input_size=64).conv_channels == (16, 32, 32, 32)


def test_feature_grid_arithmetic():
    assert md.ModelConfig(input_size=224).feature_grid == (32, 7, 7)
    assert md.ModelConfig(input_size=64).feature_grid == (32, 4, 4)
    assert md.ModelConfig(**SMALL).feature_grid == (6, 2, 2)


def test_regressor_input_dim():
    cfg = md.ModelConfig(**SMALL)
    assert cfg.regressor_input_dim == 6 * 2 * 2
    lcfg = md.ModelConfig(use_lstm_reducer=True, **SMALL)
    assert lcfg.regressor_input_dim == 4 * 3


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(backbone="vgg"),
        dict(input_size=0),
        dict(conv_channels=(0,)),
        dict(lstm_hidden=0),
        dict(regressor_hidden=-1),
    ],
)
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(InvalidConfigError):
        md.ModelConfig(**kwargs)


def test_config_dict_round_trip():
    cfg = md.ModelConfig(backbone="residual", use_lstm_reducer=True, **SMALL)
    assert md.ModelConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------------------
# parameter init
# ---------------------------------------------------------------------------


def test_init_deterministic_by_seed():
    a = md.init_params(md.ModelConfig(seed=3, **SMALL))
    b = md.init_params(md.ModelConfig(seed=3, **SMALL))
    c = md.init_params(md.ModelConfig(seed=4, **SMALL))
    assert a.keys() == b.keys()
    for k in a:
        assert np.array_equal(a[k].data, b[k].data)
    assert any(not np.array_equal(a[k].data, c[k].data) for k in a)


def test_lstm_forget_gate_bias_is_one():
    cfg = md.ModelConfig(use_lstm_reducer=True, **SMALL)
    params = md.init_params(cfg)
    dh = cfg.lstm_hidden
    for d in range(4):
        b = params[f"lstm{d}.b"].data
        assert np.array_equal(b[dh : 2 * dh], np.ones(dh))
        assert np.all(b[:dh] == 0) and np.all(b[2 * dh :] == 0)


def test_param_count_examples():
    cfg = md.ModelConfig(input_size=8, conv_channels=(4,), lstm_hidden=3, regressor_hidden=10)
    net = md.PoseNet(cfg)
    # conv 3*4*9+4, fc 64*10+10, heads 10*3+3 and 10*4+4
    assert net.param_count == (108 + 4) + (640 + 10) + (30 + 3) + (40 + 4)


# ---------------------------------------------------------------------------
# forward behaviour
# ---------------------------------------------------------------------------


def test_forward_shapes_and_input_validation():
    net = md.PoseNet(md.ModelConfig(**SMALL))
    out = net.forward(_batch(0, 5, 8))
    assert out.p_hat.data.shape == (5, 3)
    assert out.q_hat.data.shape == (5, 4)
    with pytest.raises(InvalidShapeError):
        net.forward(_batch(0, 2, 9))
    with pytest.raises(InvalidShapeError):
        net.forward(np.zeros((3, 8, 8)))


def test_residual_with_zero_blocks_equals_plain():
    plain = md.PoseNet(md.ModelConfig(backbone="plain", seed=5, **SMALL))
    res = md.PoseNet(md.ModelConfig(backbone="residual", seed=5, **SMALL))
    for name, p in plain.params.items():
        np.copyto(res.params[name].data, p.data)
    for name, p in res.params.items():
        if ".c1." in name or ".c2." in name:
            p.data[...] = 0.0
    x = _batch(1, 3, 8)
    a, b = plain.forward(x), res.forward(x)
    assert np.array_equal(a.p_hat.data, b.p_hat.data)
    assert np.array_equal(a.q_hat.data, b.q_hat.data)


def test_residual_param_names_present():
    res = md.ModelConfig(backbone="residual", **SMALL)
    params = md.init_params(res)
    for i in range(len(res.conv_channels)):
        for part in ("c1.k", "c1.b", "c2.k", "c2.b"):
            assert f"res{i}.{part}" in params


def test_scan_orders_cover_all_cells():
    for h, w in ((1, 1), (2, 3), (4, 4)):
        orders = md.scan_orders(h, w)
        assert len(orders) == 4
        for o in orders:
            assert sorted(o.tolist()) == list(range(h * w))


def test_scan_orders_corners():
    orders = md.scan_orders(2, 2)
    assert orders[0].tolist() == [0, 1, 2, 3]
    assert orders[1].tolist() == [1, 0, 3, 2]
    assert orders[2].tolist() == [2, 0, 3, 1]
    assert orders[3].tolist() == [3, 2, 1, 0]


def test_single_cell_grid_scans_agree():
    orders = md.scan_orders(1, 1)
    assert all(o.tolist() == [0] for o in orders)


def test_lstm_reduce_matches_scan_oracle():
    cfg = md.ModelConfig(use_lstm_reducer=True, **SMALL)
    params = md.init_params(cfg)
    c, h, w = cfg.feature_grid
    feat = np.random.default_rng(6).normal(size=(2, c, h, w))
    got = md.lstm_reduce(ad.constant(feat), cfg, params).data
    assert got.shape == (2, 4 * cfg.lstm_hidden)
    for d, order in enumerate(md.scan_orders(h, w)):
        want = ref.lstm_scan_loops(
            feat, order,
            params[f"lstm{d}.wx"].data, params[f"lstm{d}.wh"].data, params[f"lstm{d}.b"].data,
        )
        lo = d * cfg.lstm_hidden
        assert np.max(np.abs(got[:, lo : lo + cfg.lstm_hidden] - want)) < 1e-12


def test_opposite_corner_scans_tie_on_symmetric_input():
    # rotating the image 180 degrees reverses the row-major scan, so with
    # shared weights scans 0 and 3 see identical sequences on inputs whose
    # feature grid is 180-degree symmetric (a constant grid is)
    cfg = md.ModelConfig(use_lstm_reducer=True, **SMALL)
    params = md.init_params(cfg)
    for d in range(1, 4):
        for part in ("wx", "wh", "b"):
            np.copyto(params[f"lstm{d}.{part}"].data, params[f"lstm0.{part}"].data)
    c, h, w = cfg.feature_grid
    feat = np.tile(np.random.default_rng(7).normal(size=(1, c, 1, 1)), (1, 1, h, w))
    out = md.lstm_reduce(ad.constant(feat), cfg, params).data[0]
    dh = cfg.lstm_hidden
    assert np.array_equal(out[0:dh], out[3 * dh : 4 * dh])
    assert np.array_equal(out[dh : 2 * dh], out[2 * dh : 3 * dh])


def test_forward_composes_backbone_reduce_regress():
    cfg = md.ModelConfig(use_lstm_reducer=True, **SMALL)
    net = md.PoseNet(cfg)
    x = _batch(8, 2, 8)
    feat = md.backbone_forward(ad.constant(x), cfg, net.params)
    reduced = md.lstm_reduce(feat, cfg, net.params)
    want = md.regress(reduced, cfg, net.params)
    got = net.forward(x)
    assert np.array_equal(got.p_hat.data, want.p_hat.data)
    assert np.array_equal(got.q_hat.data, want.q_hat.data)


def test_zero_input_zero_bias_gives_head_bias():
    net = md.PoseNet(md.ModelConfig(**SMALL))
    for name, p in net.params.items():
        if name.endswith(".b") or name.endswith(".k") or name.endswith(".w"):
            if not name.startswith("head"):
                p.data[...] = 0.0
    net.params["head_p.b"].data[...] = [1.0, 2.0, 3.0]
    net.params["head_q.b"].data[...] = [1.0, 0.0, 0.0, 0.0]
    out = net.forward(np.zeros((2, 3, 8, 8)))
    assert np.array_equal(out.p_hat.data, [[1.0, 2.0, 3.0]] * 2)
    assert np.array_equal(out.q_hat.data, [[1.0, 0.0, 0.0, 0.0]] * 2)


def test_gradients_flow_to_every_parameter():
    for kwargs in (dict(backbone="plain"), dict(backbone="residual"), dict(use_lstm_reducer=True)):
        net = md.PoseNet(md.ModelConfig(seed=9, **kwargs, **SMALL))
        out = net.forward(_batch(10, 2, 8))
        loss = ad.add(ad.sum_all(ad.mul(out.p_hat, out.p_hat)), ad.sum_all(ad.mul(out.q_hat, out.q_hat)))
        ad.backward(loss)
        for name, p in net.params.items():
            assert p.grad is not None, name
            assert p.grad.shape == p.data.shape


def test_backbone_grid_shape():
    cfg = md.ModelConfig(**SMALL)
    feat = md.backbone_forward(ad.constant(_batch(11, 2, 8)), cfg, md.init_params(cfg))
    assert feat.data.shape == (2,) + cfg.feature_grid
