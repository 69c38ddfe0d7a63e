import numpy as np
import pytest

from gyrodenoise import data, imu, network, so3


def test_param_count_matches_expected_total():
    params = network.ModelParams()
    assert network.count_params(params) == 77_052
    parts = network.count_breakdown(params)
    assert parts == {"conv": 76_563, "batchnorm": 480, "calibration": 9}
    assert sum(parts.values()) == 77_052


def test_param_count_scales_with_channels():
    cfg = network.NetConfig(channels=(6, 32, 64, 128, 256, 3))
    params = network.ModelParams(cfg)
    conv = sum(
        cfg.channels[i + 1] * cfg.channels[i] * cfg.kernel_sizes[i]
        + cfg.channels[i + 1]
        for i in range(5)
    )
    bn = 2 * sum(cfg.channels[1:5])
    assert network.count_params(params) == conv + bn + 9


def test_receptive_field_default():
    cfg = network.NetConfig()
    # causal stack consumes sum((K-1) d) past samples
    assert cfg.receptive_field == 6 * (1 + 4 + 16 + 64)


def test_untrained_forward_is_identity_on_gyro():
    rng = np.random.default_rng(0)
    params = network.ModelParams(seed=1)
    rf = params.config.receptive_field
    x = rng.normal(size=(2, 6, rf + 40))
    out = network.forward(params, x, training=False)
    np.testing.assert_array_equal(out.data, x[:, :3, rf:])


def test_zero_input_mode_is_constant_plus_linear():
    rng = np.random.default_rng(2)
    params = network.ModelParams(seed=3)
    # make the collapse nontrivial: random calibration and final layer bias
    params.c_omega.data = np.eye(3) + 0.05 * rng.normal(size=(3, 3))
    params.conv_b[-1].data = rng.normal(size=3)
    for s in params.bn_state:
        s.initialized = True
    rf = params.config.receptive_field
    x = rng.normal(size=(1, 6, rf + 30))
    out = network.forward(params, x, training=False, zero_input=True).data[0]
    gyro = x[0, :3, rf:]
    correction = out - params.c_omega.data @ gyro
    # the correction is constant in time
    assert np.max(np.abs(correction - correction[:, :1])) < 1e-12


def test_receptive_field_probe():
    rng = np.random.default_rng(4)
    params = network.ModelParams(seed=5)
    # nonzero final layer so outputs depend on the inputs
    params.conv_w[-1].data = rng.normal(size=params.conv_w[-1].data.shape)
    params.conv_b[-1].data = rng.normal(size=3)
    for s in params.bn_state:
        s.initialized = True
    rf = params.config.receptive_field
    t = rf + 10
    x = rng.normal(size=(1, 6, t))
    base = network.forward(params, x, training=False).data
    n = t - 1  # last output consumes inputs n-rf..n

    probe = x.copy()
    probe[0, :, n - rf - 5] += 1.0  # older than the window
    out = network.forward(params, probe, training=False).data
    np.testing.assert_array_equal(out[0, :, -1], base[0, :, -1])

    probe = x.copy()
    probe[0, 0, n - rf] += 1.0  # oldest sample inside the window
    out = network.forward(params, probe, training=False).data
    assert not np.array_equal(out[0, :, -1], base[0, :, -1])


def test_forward_rejects_short_window():
    params = network.ModelParams()
    with pytest.raises(ValueError, match="too short"):
        network.forward(params, np.zeros((1, 6, 100)))


def test_integrate_corrected_identity_params_matches_ground_truth():
    spec = imu.SyntheticScene(duration=10.0, rate=200.0)
    scene = imu.generate_scene(spec, imu.CalibParams(), seed=6)
    seq = data.ImuSequence(scene["imu_t_ns"], scene["gyro"], scene["acc"])
    params = network.ModelParams(seed=7)
    est = network.integrate_corrected(params, seq, scene["rot"][0])
    err = np.linalg.norm(est - scene["rot"], axis=(1, 2))
    assert np.max(err) < 1e-9


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    params = network.ModelParams(seed=9)
    params.c_omega.data = np.eye(3) + 0.01 * rng.normal(size=(3, 3))
    params.conv_b[-1].data = rng.normal(size=3)
    params.bn_state[0].mean = rng.normal(size=16)
    params.bn_state[0].initialized = True
    params.set_input_stats(rng.normal(size=6), np.abs(rng.normal(size=6)) + 1)
    path = tmp_path / "ckpt.json"
    network.save_checkpoint(path, params, extra={"epoch": 12})
    loaded, extra = network.load_checkpoint(path)
    assert extra["epoch"] == 12
    for (name, a), (_, b) in zip(params.trainable(), loaded.trainable()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=name)
    np.testing.assert_array_equal(loaded.bn_state[0].mean, params.bn_state[0].mean)
    assert loaded.bn_state[0].initialized
    np.testing.assert_array_equal(loaded.input_mean, params.input_mean)
