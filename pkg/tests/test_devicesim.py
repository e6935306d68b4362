import HWAwareNAS.latency as latdev
import numpy as np
import pytest


def test_make_device_deterministic():
    assert latdev.make_device(3) == latdev.make_device(3)
    assert latdev.make_device(3).device_id == "sim-3"
    gpu = latdev.SimConfig(kind="gpu")
    assert latdev.make_device(3, gpu) == latdev.make_device(3, gpu)
    assert latdev.make_device(3, gpu) != latdev.make_device(3)


def test_distinct_seeds_distinct_costs():
    tables = [latdev.make_device(s).op_cost_ms for s in range(1, 9)]
    assert len(set(tables)) == 8


def test_device_fields():
    d = latdev.make_device(1)
    assert len(d.op_cost_ms) == 15
    assert d.base_overhead_ms > 0
    assert 0.05 <= d.interaction_coeff <= 0.25
    for w, cost in zip(latdev.operator_workloads(), d.op_cost_ms):
        if w.kind == latdev.OpKind.NONE:
            assert cost == 0.0
        else:
            assert cost > 0
    with pytest.raises(latdev.ValidationError):
        latdev.SimConfig(kind="tpu")
    with pytest.raises(latdev.ValidationError):
        latdev.SimConfig(noise_cv=-0.1)


def test_default_pool():
    pool = latdev.default_pool()
    assert [d.seed for d in pool] == list(range(1, 9))
    assert [d.kind for d in pool] == ["cpu"] * 3 + ["gpu"] * 5
    assert pool[-1].proxy_cpu_seed == pool[-2].proxy_cpu_seed == 7
    assert pool[-1].counter_profile == pool[-2].counter_profile
    assert pool[-1].op_cost_ms != pool[-2].op_cost_ms
    assert min(d.base_overhead_ms for d in pool[3:]) > 0


def test_pool_seeds_name_one_device():
    pool = latdev.default_pool()
    assert [latdev.make_device(s) for s in latdev.DEFAULT_POOL_SEEDS] == pool
    assert latdev.make_device(8).kind == "gpu"
    assert latdev.make_device(8).proxy_cpu_seed == 7
    assert latdev.make_device(42) == latdev.make_device(42, latdev.SimConfig())


def test_all_none_latency_is_overhead():
    for d in latdev.default_pool():
        assert latdev.sim_latency(d, 0) == d.base_overhead_ms


def test_latency_formula():
    d = latdev.make_device(2)
    ops = [latdev.OpKind.CONV3X3, latdev.OpKind.NONE, latdev.OpKind.SKIP,
           latdev.OpKind.CONV1X1, latdev.OpKind.AVGPOOL3X3, latdev.OpKind.NONE]
    arch = latdev.ops_to_arch(ops)
    skel = latdev.NetworkSkeleton(cells_per_stage=2)
    cells = sum(d.op_cost_ms[latdev.workload_index(op, width)]
                for width in (16, 32, 64) for op in ops)
    expected = d.base_overhead_ms + 2 * cells * (1 + d.interaction_coeff * latdev.adjacent_conv_pairs(arch))
    assert latdev.sim_latency(d, arch, skel) == pytest.approx(expected, rel=1e-12)


def test_noiseless_latency_reproducible():
    d = latdev.make_device(4)
    assert latdev.sim_latency(d, 777) == latdev.sim_latency(d, 777)
    archs = list(range(0, 15625, 97))
    batch = latdev.sim_latencies(d, archs)
    assert [latdev.sim_latency(d, a) for a in archs] == list(batch)


def test_noisy_latency():
    d = latdev.make_device(4)
    archs = list(range(100, 600))
    truth = latdev.sim_latencies(d, archs)
    first = latdev.sim_latencies(d, archs, noisy=True, rng=np.random.default_rng(1))
    second = latdev.sim_latencies(d, archs, noisy=True, rng=np.random.default_rng(1))
    assert np.array_equal(first, second)
    assert not np.array_equal(first, truth)
    ratio = first / truth
    assert abs(ratio.mean() - 1.0) < 0.01
    assert 0.01 < ratio.std() < 0.03

    quiet = latdev.make_device(4, latdev.SimConfig(noise_cv=0.0))
    assert np.array_equal(latdev.sim_latencies(quiet, archs, noisy=True),
                          latdev.sim_latencies(quiet, archs))


def test_edge_upgrade_increases_latency():
    d = latdev.make_device(5)
    rng = np.random.default_rng(3)
    checked = 0
    for arch in rng.choice(15625, size=300, replace=False):
        ops = list(latdev.arch_to_ops(int(arch)))
        if latdev.OpKind.NONE not in ops:
            continue
        e = ops.index(latdev.OpKind.NONE)
        ops[e] = latdev.OpKind.CONV3X3
        assert latdev.sim_latency(d, latdev.ops_to_arch(ops)) > latdev.sim_latency(d, int(arch))
        checked += 1
        if checked == 100:
            break
    assert checked == 100


def test_sim_descriptor():
    d = latdev.make_device(6)
    desc = latdev.sim_descriptor(d)
    assert desc == latdev.sim_descriptor(d)
    assert desc.device_id == d.device_id
    assert np.all(desc.counters >= 0)
    assert np.array_equal(desc.op_latency_ms, np.array(d.op_cost_ms))
    scale, exponent = d.counter_profile[3]
    assert desc.counters[11, 3] == pytest.approx(scale * d.op_cost_ms[11] ** exponent)

    other = latdev.sim_descriptor(latdev.make_device(7))
    assert np.linalg.norm(desc.flattened - other.flattened) > 0


def test_sim_accuracy():
    table = latdev.accuracy_table()
    assert table.shape == (15625,)
    assert np.all((table >= 0) & (table <= 1))
    assert latdev.sim_accuracy(0) == table.min()
    assert latdev.sim_accuracy(1234) == latdev.sim_accuracy(1234)
    assert latdev.sim_accuracy(1234) == table[1234]
    # a cell with a live 0->3 path beats every disconnected cell
    skip = latdev.ops_to_arch([latdev.OpKind.SKIP] + [latdev.OpKind.NONE] * 5)
    direct = latdev.ops_to_arch([latdev.OpKind.NONE] * 2 + [latdev.OpKind.SKIP] + [latdev.OpKind.NONE] * 3)
    assert latdev.sim_accuracy(skip) == table[0]
    assert latdev.sim_accuracy(direct) > table[0]


def test_device_pool_file(tmp_path):
    pool = latdev.default_pool()
    path = tmp_path / "pool.json"
    latdev.save_device_pool(pool, path)
    assert latdev.load_device_pool(path) == pool

    path.write_text('[{"seed": 1}]')
    with pytest.raises(latdev.ParseError):
        latdev.load_device_pool(path)


if __name__ == "__main__":
    test_make_device_deterministic()
    test_default_pool()
    test_all_none_latency_is_overhead()
    test_sim_accuracy()
