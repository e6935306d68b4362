import json

import HWAwareNAS.latency as latdev
import numpy as np
import pandas as pd
import pytest
from HWAwareNAS.latency import cli


def _archs_file(tmp_path, archs=range(0, 15625, 250)):
    path = tmp_path / "archs.txt"
    latdev.save_architectures(list(archs), path)
    return str(path)


def _collect(tmp_path, name="samples.csv", devices="sim:1,2", n=30):
    out = tmp_path / name
    assert cli.main(["collect", "--devices", devices, "--n", str(n), "--out", str(out)]) == cli.EXIT_OK
    return out


def test_parse_seeds():
    assert cli.parse_seeds("1..3,7") == [1, 2, 3, 7]
    assert cli.parse_seeds("4") == [4]
    for bad in ("", "a..b", "1,,2"):
        with pytest.raises(latdev.UsageError):
            cli.parse_seeds(bad)


def test_parse_devices():
    devices, source = cli.parse_devices("sim:1..3")
    assert source == "sim"
    assert devices == latdev.default_pool()[:3]
    devices, _ = cli.parse_devices("sim:42")
    assert devices == [latdev.make_device(42)]
    devices, source = cli.parse_devices("host")
    assert source == "host"
    assert isinstance(devices[0], latdev.HostDevice)
    with pytest.raises(latdev.UsageError):
        cli.parse_devices("gpu:1")


def test_simgen(tmp_path):
    out = tmp_path / "pool.json"
    assert cli.main(["simgen", "--seeds", "1..4", "--out", str(out)]) == cli.EXIT_OK
    assert latdev.load_device_pool(out) == latdev.default_pool(range(1, 5))


def test_collect(tmp_path):
    first = _collect(tmp_path)
    samples = latdev.load_samples(first)
    assert len(samples) == 60
    assert samples.device_ids() == ["sim-1", "sim-2"]
    second = _collect(tmp_path, "again.csv")
    assert first.read_bytes() == second.read_bytes()


def test_collect_with_pool_and_archs(tmp_path):
    pool_path = tmp_path / "pool.json"
    quiet = latdev.default_pool(config=latdev.SimConfig(noise_cv=0.0))
    latdev.save_device_pool(quiet, pool_path)
    out = tmp_path / "samples.csv"
    archs = list(range(0, 15625, 1000))
    code = cli.main(["collect", "--devices", "sim:3", "--archs", _archs_file(tmp_path, archs),
                     "--pool", str(pool_path), "--out", str(out)])
    assert code == cli.EXIT_OK
    samples = latdev.load_samples(out)
    assert [s.latency_ms for s in samples.samples] == list(latdev.sim_latencies(quiet[2], archs))


def test_collect_rejects_oversized_n(tmp_path):
    assert cli.main(["collect", "--devices", "sim:1", "--n", "20000",
                     "--out", str(tmp_path / "s.csv")]) == cli.EXIT_VALIDATION


def test_characterize_sim(tmp_path):
    out = tmp_path / "descriptor.json"
    assert cli.main(["characterize", "--sim-device", "1", "--out", str(out)]) == cli.EXIT_OK
    assert latdev.load_descriptor(out) == latdev.sim_descriptor(latdev.make_device(1))


@pytest.mark.skipif(latdev.counters_available(), reason="host exposes performance counters")
def test_characterize_host_without_counters(tmp_path):
    assert cli.main(["characterize", "--out", str(tmp_path / "d.json")]) == cli.EXIT_ENVIRONMENT


def test_train_adapt_predict(tmp_path):
    samples = _collect(tmp_path)
    model_path = tmp_path / "model.json"
    assert cli.main(["train", "--samples", str(samples), "--epochs", "3",
                     "--out", str(model_path)]) == cli.EXIT_OK
    assert latdev.load_model(model_path).config.epochs == 3

    adapted = tmp_path / "adapted.json"
    adaptation = tmp_path / "adaptation.csv"
    code = cli.main(["adapt", "--initial", str(samples), "--device", "sim:8", "--k", "3",
                     "--epochs", "3", "--samples-out", str(adaptation), "--out", str(adapted)])
    assert code == cli.EXIT_OK
    assert len(latdev.load_samples(adaptation)) == 3

    predictions = tmp_path / "predictions.csv"
    archs = list(range(0, 15625, 250))
    code = cli.main(["predict", "--model", str(adapted), "--device", "sim:8",
                     "--archs", _archs_file(tmp_path, archs), "--out", str(predictions)])
    assert code == cli.EXIT_OK
    frame = pd.read_csv(predictions)
    assert list(frame.columns) == ["arch_id", "latency_ms"]
    assert list(frame["arch_id"]) == archs
    expected = latdev.predict_architectures(latdev.load_model(adapted), archs,
                                            latdev.sim_descriptor(latdev.make_device(8)))
    assert np.allclose(frame["latency_ms"], expected, rtol=1e-12)


def test_train_keeps_stored_weights(tmp_path, monkeypatch):
    pool = latdev.default_pool()
    initial = latdev.collect_initial(pool[:2], latdev.select_training_architectures(20), "sim")
    T = latdev.build_training_set(initial, latdev.collect_adaptation(pool[7], 3))
    path = tmp_path / "weighted.csv"
    latdev.save_samples(T, path)

    seen = []
    def capture(model, samples, cfg=None):
        seen.append([s.weight for s in samples.samples])
        return model, latdev.TrainReport(losses=[0.0], final_loss=0.0)
    monkeypatch.setattr(cli, "train", capture)

    out = str(tmp_path / "model.json")
    assert cli.main(["train", "--samples", str(path), "--out", out]) == cli.EXIT_OK
    assert seen[0] == [s.weight for s in T.samples]
    assert len(set(seen[0])) == 2
    assert cli.main(["train", "--samples", str(path), "--reweight", "--out", out]) == cli.EXIT_OK
    assert set(seen[1]) == {1 / np.sqrt(43)}


def test_pipeline_is_reproducible(tmp_path):
    def run(folder):
        folder.mkdir()
        pool = str(folder / "pool.json")
        samples = str(folder / "samples.csv")
        model = str(folder / "model.json")
        report = str(folder / "report.csv")
        archs = _archs_file(folder)
        assert cli.main(["simgen", "--seeds", "1..4", "--out", pool]) == cli.EXIT_OK
        assert cli.main(["collect", "--devices", "sim:1..3", "--pool", pool, "--n", "20",
                         "--out", samples]) == cli.EXIT_OK
        assert cli.main(["train", "--samples", samples, "--epochs", "3", "--out", model]) == cli.EXIT_OK
        assert cli.main(["loocv", "--pool", pool, "--devices", "sim:1..3", "--n", "20", "--k", "0,3",
                         "--epochs", "3", "--archs", archs, "--out", report]) == cli.EXIT_OK
        return [open(p, "rb").read() for p in (pool, samples, model, report)]

    assert run(tmp_path / "first") == run(tmp_path / "second")


def test_predict_needs_a_target(tmp_path):
    model_path = tmp_path / "model.json"
    latdev.save_model(latdev.init_model(latdev.ModelConfig()), model_path)
    assert cli.main(["predict", "--model", str(model_path)]) == cli.EXIT_VALIDATION


def test_loocv_json(tmp_path):
    out = tmp_path / "report.json"
    code = cli.main(["loocv", "--devices", "sim:1..3", "--n", "20", "--k", "0,3", "--epochs", "5",
                     "--archs", _archs_file(tmp_path), "--format", "json", "--out", str(out)])
    assert code == cli.EXIT_OK
    data = json.loads(out.read_text())
    assert len(data["rows"]) == 3 * 4 * 2
    assert sorted({r["k_adapt"] for r in data["rows"]}) == [0, 3]
    assert all(r["held_out_device"] == "mean" for r in data["mean"])


def test_loocv_unknown_format(tmp_path):
    assert cli.main(["loocv", "--devices", "sim:1,2", "--format", "xml",
                     "--out", str(tmp_path / "r.xml")]) == cli.EXIT_VALIDATION
    assert not (tmp_path / "r.xml").exists()


def test_distmap(tmp_path):
    out = tmp_path / "distances.csv"
    assert cli.main(["distmap", "--out", str(out)]) == cli.EXIT_OK
    frame = pd.read_csv(out, index_col="device_id", float_precision="round_trip")
    assert frame.shape == (8, 8)
    assert list(frame.index) == ["sim-%d" % s for s in range(1, 9)]
    assert np.array_equal(frame.values, frame.values.T)

    descriptor = tmp_path / "d.json"
    latdev.save_descriptor(latdev.sim_descriptor(latdev.make_device(3)), descriptor)
    raw = tmp_path / "raw.csv"
    assert cli.main(["distmap", "--descriptors", str(descriptor), str(descriptor),
                     "--raw", "--out", str(raw)]) == cli.EXIT_OK
    assert not pd.read_csv(raw, index_col="device_id").values.any()


def test_pareto(tmp_path):
    model_path = tmp_path / "model.json"
    model, _ = latdev.train(latdev.init_model(latdev.ModelConfig(epochs=3)),
                            latdev.load_samples(_collect(tmp_path)))
    latdev.save_model(model, model_path)
    out = tmp_path / "pareto.csv"
    code = cli.main(["pareto", "--model", str(model_path), "--device", "sim:2",
                     "--archs", _archs_file(tmp_path), "--out", str(out)])
    assert code == cli.EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == latdev.PARETO_COLUMNS
    assert len(frame) == 63
    assert frame["on_true_front"].any()
    assert frame["on_predicted_front"].any()


def test_lut(tmp_path):
    out = tmp_path / "lut.json"
    assert cli.main(["lut", "--device", "sim:5", "--out", str(out)]) == cli.EXIT_OK
    assert latdev.load_lut(out) == latdev.build_lut(latdev.default_pool()[4])


def test_exit_codes(tmp_path):
    missing = str(tmp_path / "missing.csv")
    assert cli.main(["train", "--samples", missing, "--out", str(tmp_path / "m.json")]) == cli.EXIT_ENVIRONMENT
    assert cli.main(["collect", "--devices", "gpu:1", "--out", str(tmp_path / "s.csv")]) == cli.EXIT_VALIDATION
    assert cli.main(["train", "--samples", "example_data/negative-latency.csv",
                     "--out", str(tmp_path / "m.json")]) == cli.EXIT_VALIDATION


if __name__ == "__main__":
    test_parse_seeds()
    test_parse_devices()
