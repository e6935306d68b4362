import math

import HWAwareNAS.latency as latdev
import numpy as np
import pytest


def _small_set(n_devices=2, n=20, seed=0):
    pool = latdev.default_pool()[:n_devices]
    archs = latdev.select_training_architectures(n, seed)
    return latdev.build_training_set(latdev.collect_initial(pool, archs, "sim", seed=seed))


def test_parameter_count():
    m = latdev.init_model(latdev.ModelConfig())
    expected = (30 * 64 + 64) + (64 * 64 + 64) + (64 * 32 + 32) + (197 * 128 + 128) + (128 * 128 + 128) + (128 + 1)
    assert expected == 50209
    assert m.num_parameters() == 50209
    shapes = [m.params[f"arch.{i}.W"].shape for i in range(3)] + [m.params[f"joint.{i}.W"].shape for i in range(3)]
    assert shapes == [(30, 64), (64, 64), (64, 32), (197, 128), (128, 128), (128, 1)]


def test_counters_only_ablation():
    m = latdev.init_model(latdev.ModelConfig(descriptor_dim=150))
    assert m.params["joint.0.W"].shape == (182, 128)
    d = latdev.make_device(1)
    assert math.isfinite(latdev.forward(m, 5, latdev.sim_descriptor(d)))


def test_model_config_validation():
    with pytest.raises(latdev.ValidationError):
        latdev.ModelConfig(arch_projection_dim=16)
    with pytest.raises(latdev.ValidationError):
        latdev.ModelConfig(descriptor_dim=100)
    with pytest.raises(latdev.ValidationError):
        latdev.ModelConfig(joint_hidden=(128, 0))
    with pytest.raises(latdev.ValidationError):
        latdev.ModelConfig(target_transform="sqrt")
    with pytest.raises(latdev.ValidationError):
        latdev.ModelConfig(descriptor_dim=150, target_transform="calibrated")
    with pytest.raises(latdev.ValidationError):
        latdev.ModelConfig(final_lr_fraction=0.0)
    assert latdev.ModelConfig().target_transform == "calibrated"
    assert latdev.ModelConfig(descriptor_dim=150).target_transform == "log"


def test_init_deterministic():
    a = latdev.init_model(latdev.ModelConfig(seed=3))
    b = latdev.init_model(latdev.ModelConfig(seed=3))
    c = latdev.init_model(latdev.ModelConfig(seed=4))
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
    assert not np.array_equal(a.params["arch.0.W"], c.params["arch.0.W"])
    assert not a.params["joint.1.b"].any()


def test_zero_weights_predict_zero():
    m = latdev.init_model(latdev.ModelConfig(target_transform="raw"))
    for name in m.params:
        m.params[name] = np.zeros_like(m.params[name])
    desc = latdev.sim_descriptor(latdev.make_device(2))
    for arch in (0, 777, 15624):
        assert latdev.forward(m, arch, desc) == 0.0


def test_forward_repeatable_and_shape_checked():
    m = latdev.init_model(latdev.ModelConfig())
    desc = latdev.sim_descriptor(latdev.make_device(2))
    assert latdev.forward(m, 123, desc) == latdev.forward(m, 123, desc)
    assert latdev.forward(m, latdev.encode(123), desc) == latdev.forward(m, 123, desc)
    with pytest.raises(latdev.ShapeError):
        latdev.forward(m, 123, np.zeros(100))
    with pytest.raises(latdev.ShapeError):
        latdev.forward(m, np.zeros(29), desc)


def test_gradient_check_random_inits():
    rng = np.random.default_rng(0)
    for seed in range(20):
        m = latdev.init_model(latdev.ModelConfig(seed=seed))
        d = latdev.make_device(seed + 1)
        arch = int(rng.integers(15625))
        sample = (arch, latdev.sim_descriptor(d), latdev.sim_latency(d, arch))
        assert latdev.gradient_check(m, sample, seed=seed) < 1e-4


def test_gradient_check_deterministic():
    m = latdev.init_model(latdev.ModelConfig(seed=1))
    d = latdev.make_device(1)
    sample = (42, latdev.sim_descriptor(d), latdev.sim_latency(d, 42))
    assert latdev.gradient_check(m, sample) == latdev.gradient_check(m, sample)


def test_zero_loss_point_gradient():
    m = latdev.init_model(latdev.ModelConfig(seed=2))
    desc = latdev.sim_descriptor(latdev.make_device(3))
    A = latdev.encodings_matrix([99])
    Z = latdev.descriptor_features(m, desc)[None, :]
    target = np.array([latdev.forward_transformed(m, 99, desc)])
    loss, grads = latdev.loss_and_gradients(m, A, Z, target)
    assert loss == pytest.approx(1e-8)
    assert math.sqrt(sum(float((g ** 2).sum()) for g in grads.values())) < 1e-8


def test_train_overfits_ten_samples():
    T = _small_set(n_devices=1, n=10)
    cfg = latdev.ModelConfig(epochs=2000, seed=0)
    model, report = latdev.train(latdev.init_model(cfg), T, cfg)
    assert report.epochs == 2000
    assert len(report.losses) == 2001
    assert report.final_loss < 1e-2
    assert all(loss >= 0 for loss in report.losses)


def test_step_size_decays():
    cfg = latdev.ModelConfig(learning_rate=1e-3, final_lr_fraction=0.01)
    rates = [latdev.learning_rate_at(cfg, s, 500) for s in range(500)]
    assert rates[0] == pytest.approx(1e-3, rel=1e-12)
    assert rates[-1] == pytest.approx(1e-5)
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert latdev.learning_rate_at(cfg, 0, 1) == 1e-3


def test_calibration_recovers_additive_device():
    d = latdev.make_device(3, latdev.SimConfig(noise_cv=0.0, interaction_range=(0, 0)))
    archs = list(range(1, 15625, 97))
    T = latdev.build_training_set(latdev.collect_initial([d], archs, "sim"))
    model, _ = latdev.train(latdev.init_model(), T, latdev.ModelConfig(epochs=0))
    overhead, scale = model.calibration[d.device_id]
    assert overhead == pytest.approx(d.base_overhead_ms, rel=1e-6)
    assert scale == pytest.approx(1.0, rel=1e-6)
    desc = latdev.sim_descriptor(d)
    base = latdev.base_latency(model, latdev.encodings_matrix(archs), desc)
    assert np.allclose(base, latdev.sim_latencies(d, archs), rtol=1e-6)


def test_unknown_device_uses_fallback_calibration():
    T = _small_set(n_devices=3, n=40)
    model, _ = latdev.train(latdev.init_model(), T, latdev.ModelConfig(epochs=0))
    assert sorted(model.calibration) == ["sim-1", "sim-2", "sim-3"]
    assert model.overhead_ratio > 0 and model.fallback_scale > 0
    unseen = latdev.sim_descriptor(latdev.default_pool()[5])
    latency = unseen.op_latency_ms
    A = latdev.encodings_matrix([0, 4321])
    expected = model.overhead_ratio * latency.sum() + model.fallback_scale * latdev.lut_sums(A, latency)
    assert np.allclose(latdev.base_latency(model, A, unseen), expected, rtol=1e-12)
    raw = latdev.sim_descriptor(latdev.default_pool()[0]).flattened
    assert np.allclose(latdev.base_latency(model, A, raw),
                       model.overhead_ratio * raw[150:].sum() + model.fallback_scale * latdev.lut_sums(A, raw[150:]),
                       rtol=1e-12)


def test_epoch_zero_loss_is_initial_loss():
    T = _small_set()
    cfg = latdev.ModelConfig(seed=5)
    untouched, before = latdev.train(latdev.init_model(cfg), T, latdev.ModelConfig(seed=5, epochs=0))
    _, after = latdev.train(latdev.init_model(cfg), T, latdev.ModelConfig(seed=5, epochs=3))
    assert before.losses == [after.losses[0]]
    assert np.array_equal(untouched.params["joint.0.W"], latdev.init_model(cfg).params["joint.0.W"])


def test_train_deterministic():
    T = _small_set()
    cfg = latdev.ModelConfig(epochs=15, seed=7)
    a, report_a = latdev.train(latdev.init_model(cfg), T, cfg)
    b, report_b = latdev.train(latdev.init_model(cfg), T, cfg)
    assert report_a.losses == report_b.losses
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])


def test_train_does_not_modify_input_model():
    T = _small_set()
    cfg = latdev.ModelConfig(epochs=2)
    m = latdev.init_model(cfg)
    before = m.params["arch.0.W"].copy()
    latdev.train(m, T, cfg)
    assert np.array_equal(m.params["arch.0.W"], before)


def test_weight_rescaling_keeps_trajectory():
    T = _small_set()
    cfg = latdev.ModelConfig(epochs=10, seed=1)
    for factor in (4.0, 0.5):
        scaled = latdev.SampleSet([latdev.LatencySample(s.device_id, s.arch, s.latency_ms, s.weight * factor)
                                   for s in T.samples], T.descriptors)
        a, report_a = latdev.train(latdev.init_model(cfg), T, cfg)
        b, report_b = latdev.train(latdev.init_model(cfg), scaled, cfg)
        assert report_a.losses == report_b.losses
        for name in a.params:
            assert np.array_equal(a.params[name], b.params[name])


def test_adaptation_sample_pulls_prediction():
    pool = latdev.default_pool()
    archs = latdev.select_training_architectures(30, seed=1)
    initial = latdev.collect_initial(pool[:2], archs, "sim", seed=1)
    target = pool[2]
    desc = latdev.sim_descriptor(target)
    arch = 4321
    shifted = 3.0 * latdev.sim_latency(target, arch)
    adaptation = latdev.SampleSet([latdev.LatencySample(target.device_id, arch, shifted)],
                                  {target.device_id: desc})
    cfg = latdev.ModelConfig(epochs=200, seed=0)
    without, _ = latdev.train(latdev.init_model(cfg), latdev.build_training_set(initial), cfg)
    with_sample, _ = latdev.train(latdev.init_model(cfg), latdev.build_training_set(initial, adaptation), cfg)
    assert abs(latdev.forward(with_sample, arch, desc) - shifted) < abs(latdev.forward(without, arch, desc) - shifted)


def test_descriptor_stream_is_live():
    T = _small_set()
    cfg = latdev.ModelConfig(epochs=20)
    model, _ = latdev.train(latdev.init_model(cfg), T, cfg)
    desc = latdev.sim_descriptor(latdev.make_device(1))
    counters = desc.counters.copy()
    counters[9, 1] *= 10
    perturbed = latdev.HardwareDescriptor(desc.device_id, counters, desc.op_latency_ms)
    assert abs(latdev.forward(model, 500, desc) - latdev.forward(model, 500, perturbed)) > 0


def test_predict_batch():
    T = _small_set()
    cfg = latdev.ModelConfig(epochs=5)
    model, _ = latdev.train(latdev.init_model(cfg), T, cfg)
    d1, d2 = (latdev.sim_descriptor(d) for d in latdev.default_pool()[:2])
    pairs = [(latdev.encode(10), d1), (latdev.encode(2000), d2), (latdev.encode(15000), d1)]
    assert latdev.predict_batch(model, pairs[:1])[0] == pytest.approx(latdev.forward(model, 10, d1), rel=1e-12)
    forward_order = latdev.predict_batch(model, pairs)
    reverse_order = latdev.predict_batch(model, pairs[::-1])
    assert reverse_order == pytest.approx(forward_order[::-1], rel=1e-12)
    assert latdev.predict_batch(model, []) == []

    everything = latdev.predict_architectures(model, range(15625), d1)
    assert everything.shape == (15625,)
    assert np.all(np.isfinite(everything))


def test_divergence_reports_epoch():
    T = _small_set()
    m = latdev.init_model(latdev.ModelConfig(epochs=3))
    m.params["joint.2.b"] = np.array([np.nan])
    with pytest.raises(latdev.TrainingDivergenceError) as err:
        latdev.train(m, T)
    assert err.value.epoch == 1


def test_model_file_round_trip(tmp_path):
    T = _small_set()
    cfg = latdev.ModelConfig(epochs=3)
    model, _ = latdev.train(latdev.init_model(cfg), T, cfg)
    path = tmp_path / "model.json"
    latdev.save_model(model, path)
    loaded = latdev.load_model(path)
    assert loaded.config == model.config
    for name in model.params:
        assert np.array_equal(loaded.params[name], model.params[name])
    desc = latdev.sim_descriptor(latdev.make_device(1))
    assert latdev.forward(loaded, 77, desc) == latdev.forward(model, 77, desc)

    latdev.save_model(latdev.init_model(latdev.ModelConfig(descriptor_dim=150)), path)
    broken = path.read_text().replace('"descriptor_dim": 150', '"descriptor_dim": 165')
    path.write_text(broken)
    with pytest.raises(latdev.ValidationError):
        latdev.load_model(path)


if __name__ == "__main__":
    test_parameter_count()
    test_zero_weights_predict_zero()
    test_gradient_check_random_inits()
    test_train_deterministic()
