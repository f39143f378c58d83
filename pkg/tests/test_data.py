"""Dataset container, binary format, synthetic generators, corruption, splits."""

import json

import numpy as np
import pytest

from maestro.data import (CORRUPTION_MODES, Dataset, ModalityInfo,
                          SampleRecord, SynthSpec, certify_xor_cross, corrupt,
                          generate_synthetic, load_dataset, read_series,
                          save_dataset, stratified_split,
                          unimodal_stump_accuracy, write_series)
from maestro.errors import ContractViolation, DataError


def _toy_dataset():
    mods = [ModalityInfo("acc", 32.0, 3, 16), ModalityInfo("temp", 4.0, 1, 8)]
    rng = np.random.default_rng(0)
    samples = [
        SampleRecord("a", 1, {"acc": rng.normal(size=(3, 16)),
                              "temp": rng.normal(size=(1, 8))}),
        SampleRecord("b", 2, {"acc": rng.normal(size=(3, 16)), "temp": None}),
    ]
    return Dataset(mods, 2, samples)


def _f32(array):
    # disk payload is little-endian float32
    return np.asarray(array).astype("<f4").astype(np.float64)


class TestSeriesFormat:
    def test_round_trip_quantizes_to_float32(self, tmp_path):
        array = np.random.default_rng(1).normal(size=(2, 7))
        path = tmp_path / "x.mmts"
        write_series(path, array)
        back = read_series(path)
        assert back.shape == (2, 7)
        assert np.array_equal(back, _f32(array))

    def test_one_dimensional_input_becomes_single_variate(self, tmp_path):
        path = tmp_path / "x.mmts"
        write_series(path, np.arange(5.0))
        assert read_series(path).shape == (1, 5)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.mmts"
        write_series(path, np.arange(4.0))
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataError):
            read_series(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "x.mmts"
        write_series(path, np.arange(8.0))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(DataError):
            read_series(path)


class TestManifestRoundTrip:
    def test_save_load_preserves_everything(self, tmp_path):
        ds = _toy_dataset()
        manifest = save_dataset(ds, tmp_path)
        back = load_dataset(manifest)
        assert [vars(m) for m in back.modalities] == [vars(m) for m in ds.modalities]
        assert back.n_classes == 2
        assert [s.sample_id for s in back.samples] == ["a", "b"]
        assert [s.label for s in back.samples] == [1, 2]
        assert np.array_equal(back.samples[0].arrays["acc"],
                              _f32(ds.samples[0].arrays["acc"]))
        assert back.samples[1].arrays["temp"] is None

    def test_empty_sample_list_is_valid(self, tmp_path):
        ds = Dataset([ModalityInfo("x", 1.0, 1, 4)], 2, [])
        back = load_dataset(save_dataset(ds, tmp_path))
        assert back.samples == []

    def test_wearable_shaped_table_round_trips(self, tmp_path):
        # ten channels at mixed rates, two-second windows, three classes
        table = [("chest_acc", 700.0, 3), ("chest_ecg", 700.0, 1),
                 ("chest_emg", 700.0, 1), ("chest_resp", 700.0, 1),
                 ("chest_eda", 700.0, 1), ("chest_temp", 700.0, 1),
                 ("wrist_acc", 32.0, 3), ("wrist_bvp", 64.0, 1),
                 ("wrist_eda", 4.0, 1), ("wrist_temp", 4.0, 1)]
        mods = [ModalityInfo(name, hz, d, int(2 * hz)) for name, hz, d in table]
        rng = np.random.default_rng(2)
        samples = [SampleRecord(f"w{i}", 1 + i % 3,
                                {m.name: rng.normal(size=(m.variates, m.length))
                                 for m in mods})
                   for i in range(3)]
        back = load_dataset(save_dataset(Dataset(mods, 3, samples), tmp_path))
        assert len(back.modalities) == 10
        assert back.n_classes == 3
        for m in back.modalities:
            assert m.length == int(2 * m.hz)
        assert back.samples[0].arrays["chest_acc"].shape == (3, 1400)
        assert back.samples[0].arrays["wrist_eda"].shape == (1, 8)


class TestManifestValidation:
    def _write(self, tmp_path, mutate):
        ds = _toy_dataset()
        manifest_path = save_dataset(ds, tmp_path)
        manifest = json.loads(manifest_path.read_text())
        mutate(manifest)
        manifest_path.write_text(json.dumps(manifest))
        return manifest_path

    def test_missing_top_level_key(self, tmp_path):
        path = self._write(tmp_path, lambda m: m.pop("classes"))
        with pytest.raises(DataError, match="classes"):
            load_dataset(path)

    def test_duplicate_sample_id(self, tmp_path):
        path = self._write(tmp_path,
                           lambda m: m["samples"].append(m["samples"][0]))
        with pytest.raises(DataError, match="duplicate sample id"):
            load_dataset(path)

    def test_duplicate_modality_name(self, tmp_path):
        path = self._write(tmp_path,
                           lambda m: m["modalities"].append(m["modalities"][0]))
        with pytest.raises(DataError, match="duplicate modality"):
            load_dataset(path)

    @pytest.mark.parametrize("label", [0, 3])
    def test_label_out_of_range(self, tmp_path, label):
        def mutate(m):
            m["samples"][0]["label"] = label
        with pytest.raises(DataError, match="label"):
            load_dataset(self._write(tmp_path, mutate))

    def test_unknown_path_key(self, tmp_path):
        def mutate(m):
            m["samples"][0]["paths"]["ghost"] = None
        with pytest.raises(DataError, match="unknown modality"):
            load_dataset(self._write(tmp_path, mutate))

    def test_dangling_path(self, tmp_path):
        def mutate(m):
            m["samples"][0]["paths"]["acc"] = "data/nowhere.mmts"
        with pytest.raises(DataError, match="missing file"):
            load_dataset(self._write(tmp_path, mutate))

    def test_shape_disagrees_with_manifest(self, tmp_path):
        ds = _toy_dataset()
        path = save_dataset(ds, tmp_path)
        write_series(tmp_path / "data" / "a__acc.mmts", np.zeros((3, 5)))
        with pytest.raises(DataError, match="shape"):
            load_dataset(path)

    def test_non_finite_values_name_the_sample(self, tmp_path):
        ds = _toy_dataset()
        path = save_dataset(ds, tmp_path)
        bad = np.zeros((3, 16))
        bad[1, 4] = np.nan
        write_series(tmp_path / "data" / "a__acc.mmts", bad)
        with pytest.raises(DataError, match="'a'"):
            load_dataset(path)

    def test_garbage_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{nope")
        with pytest.raises(DataError):
            load_dataset(path)


class TestSyntheticGeneration:
    def test_class_balance_within_one(self):
        for n, c in [(101, 2), (100, 3)]:
            ds = generate_synthetic(SynthSpec(mode="redundant", n_samples=n,
                                              n_classes=c, seed=0))
            counts = np.bincount(ds.labels(), minlength=c + 1)[1:]
            assert counts.max() - counts.min() <= 1

    def test_shapes_and_names(self):
        spec = SynthSpec(mode="unimodal", n_samples=4, n_modalities=3,
                         n_variates=2, length=24, seed=1)
        ds = generate_synthetic(spec)
        assert ds.modality_names == ["m1", "m2", "m3"]
        for s in ds.samples:
            for m in ds.modalities:
                assert s.arrays[m.name].shape == (2, 24)

    def test_same_seed_reproduces(self):
        spec = SynthSpec(mode="xor-cross", n_samples=12, seed=9)
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        for sa, sb in zip(a.samples, b.samples):
            assert sa.label == sb.label
            for name in a.modality_names:
                assert np.array_equal(sa.arrays[name], sb.arrays[name])

    def test_unimodal_only_first_modality_informative(self):
        ds = generate_synthetic(SynthSpec(mode="unimodal", n_samples=300,
                                          noise=0.3, seed=1))
        stumps = unimodal_stump_accuracy(ds)
        assert stumps["m1"] >= 0.9
        assert stumps["m2"] <= 0.65
        assert stumps["m3"] <= 0.65

    def test_redundant_signal_survives_losing_any_one_modality(self):
        ds = generate_synthetic(SynthSpec(mode="redundant", n_samples=300,
                                          noise=0.3, seed=3))
        stumps = unimodal_stump_accuracy(ds)
        # both signal modalities individually predictive, noise channel not
        assert stumps["m1"] >= 0.9
        assert stumps["m2"] >= 0.9
        assert stumps["m3"] <= 0.65

    def test_xor_cross_certification(self):
        ds = generate_synthetic(SynthSpec(mode="xor-cross", n_samples=2000,
                                          noise=0.3, seed=0))
        worst_stump, joint = certify_xor_cross(ds)
        assert worst_stump <= 0.55
        assert joint >= 0.95

    def test_rejects_bad_specs(self):
        with pytest.raises(ContractViolation):
            generate_synthetic(SynthSpec(mode="nope", n_samples=4))
        with pytest.raises(ContractViolation):
            generate_synthetic(SynthSpec(mode="xor-cross", n_samples=4,
                                         n_classes=3))
        with pytest.raises(ContractViolation):
            generate_synthetic(SynthSpec(mode="xor-cross", n_samples=4,
                                         n_modalities=2))
        with pytest.raises(ContractViolation):
            generate_synthetic(SynthSpec(mode="unimodal", n_samples=4,
                                         n_modalities=1))


class TestCorruption:
    def _dataset(self, n=3, length=1000):
        spec = SynthSpec(mode="redundant", n_samples=n, n_modalities=3,
                         length=length, seed=4)
        return generate_synthetic(spec)

    def test_untouched_modalities_share_arrays(self):
        ds = self._dataset()
        out = corrupt(ds, ["m1"], "additive_gaussian", seed=1)
        for before, after in zip(ds.samples, out.samples):
            assert after.arrays["m2"] is before.arrays["m2"]
            assert after.arrays["m3"] is before.arrays["m3"]
            assert not np.array_equal(after.arrays["m1"], before.arrays["m1"])

    def test_additive_sigma_zero_is_identity(self):
        ds = self._dataset()
        out = corrupt(ds, ["m1"], "additive_gaussian", seed=1, sigma=0.0)
        for before, after in zip(ds.samples, out.samples):
            assert np.array_equal(after.arrays["m1"], before.arrays["m1"])

    def test_drop_removes_the_modality(self):
        ds = self._dataset()
        out = corrupt(ds, ["m2"], "drop", seed=1)
        assert all(s.arrays["m2"] is None for s in out.samples)
        assert all(s.arrays["m1"] is not None for s in out.samples)

    def test_replace_gaussian_statistics(self):
        ds = self._dataset(n=3, length=1000)
        out = corrupt(ds, ["m1"], "replace_gaussian", seed=1, sigma=1.0)
        pooled = np.concatenate([s.arrays["m1"].ravel() for s in out.samples])
        assert abs(pooled.mean()) < 0.1
        assert 0.9 < pooled.std() < 1.1

    def test_spike_count_and_magnitude(self):
        # sigma 0 isolates the spikes: diff entries are exactly +/- magnitude
        ds = self._dataset(n=3, length=1000)
        out = corrupt(ds, ["m1"], "additive_spikes", seed=1, sigma=0.0,
                      p_spike=0.01, magnitude=5.0)
        diffs = np.concatenate([(a.arrays["m1"] - b.arrays["m1"]).ravel()
                                for a, b in zip(out.samples, ds.samples)])
        hit = diffs != 0.0
        # 3000 Bernoulli(0.01) trials: mean 30, 3 sigma ~ 16
        assert 14 <= hit.sum() <= 46
        assert np.all(np.isin(diffs[hit], [-5.0, 5.0]))

    def test_spikes_include_noise_floor(self):
        ds = self._dataset(n=1, length=1000)
        out = corrupt(ds, ["m1"], "additive_spikes", seed=1, sigma=0.5,
                      p_spike=0.0)
        diff = out.samples[0].arrays["m1"] - ds.samples[0].arrays["m1"]
        assert 0.4 < diff.std() < 0.6

    def test_deterministic_given_seed(self):
        ds = self._dataset()
        a = corrupt(ds, ["m1"], "additive_spikes", seed=7)
        b = corrupt(ds, ["m1"], "additive_spikes", seed=7)
        for sa, sb in zip(a.samples, b.samples):
            assert np.array_equal(sa.arrays["m1"], sb.arrays["m1"])

    def test_rejects_unknown_mode_and_modality(self):
        ds = self._dataset()
        with pytest.raises(ContractViolation):
            corrupt(ds, ["m1"], "melt", seed=0)
        with pytest.raises(ContractViolation):
            corrupt(ds, ["m9"], "drop", seed=0)
        assert "drop" in CORRUPTION_MODES


class TestStratifiedSplit:
    def test_eighty_ten_ten(self):
        ds = generate_synthetic(SynthSpec(mode="redundant", n_samples=100,
                                          seed=0))
        splits = stratified_split(ds, (0.8, 0.1, 0.1), seed=1)
        assert len(splits["train"].samples) == 80
        assert len(splits["val"].samples) == 10
        assert len(splits["test"].samples) == 10

    def test_per_class_counts_follow_fractions(self):
        ds = generate_synthetic(SynthSpec(mode="redundant", n_samples=100,
                                          seed=0))
        splits = stratified_split(ds, (0.8, 0.1, 0.1), seed=1)
        for name, frac in [("train", 0.8), ("val", 0.1), ("test", 0.1)]:
            counts = np.bincount(splits[name].labels(), minlength=3)[1:]
            assert np.all(counts == round(50 * frac))

    def test_partition_is_exact(self):
        ds = generate_synthetic(SynthSpec(mode="redundant", n_samples=60,
                                          seed=2))
        splits = stratified_split(ds, (0.8, 0.1, 0.1), seed=3)
        ids = [s.sample_id for part in splits.values() for s in part.samples]
        assert sorted(ids) == sorted(s.sample_id for s in ds.samples)

    def test_deterministic_and_seed_sensitive(self):
        ds = generate_synthetic(SynthSpec(mode="redundant", n_samples=100,
                                          seed=0))
        a = stratified_split(ds, (0.8, 0.1, 0.1), seed=1)
        b = stratified_split(ds, (0.8, 0.1, 0.1), seed=1)
        c = stratified_split(ds, (0.8, 0.1, 0.1), seed=2)
        ids = lambda sp: [s.sample_id for s in sp["test"].samples]
        assert ids(a) == ids(b)
        assert ids(a) != ids(c)

    def test_class_too_small_raises(self):
        mods = [ModalityInfo("x", 1.0, 1, 8)]
        samples = [SampleRecord(f"s{i}", 1 + (i < 3), {"x": np.zeros((1, 8))})
                   for i in range(30)]
        ds = Dataset(mods, 2, samples)
        with pytest.raises(DataError):
            stratified_split(ds, (0.8, 0.1, 0.1), seed=0)

    def test_bad_fractions_rejected(self):
        ds = generate_synthetic(SynthSpec(mode="redundant", n_samples=20,
                                          seed=0))
        with pytest.raises(ContractViolation):
            stratified_split(ds, (0.5, 0.2, 0.2), seed=0)
