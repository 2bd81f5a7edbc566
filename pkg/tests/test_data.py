"""Dataset module: chirp math, device impairments, container format, split."""

import math

import numpy as np
import pytest

from lora_advsec.data import (
    DEFAULT_DEVICE_PROFILES,
    DEFAULT_ROGUE_TRANSFORMS,
    Dataset,
    DeviceProfile,
    apply_device_profile,
    convert_raw_f32,
    generate_dataset,
    generate_legitimate,
    load_dataset,
    mean_signal_power,
    save_dataset,
    split,
    synth_chirp,
)
from lora_advsec.errors import ConfigError, FormatError
from lora_advsec.rng import make_rng


# ---------------------------------------------------------------- chirp

def test_chirp_starts_at_one():
    c = synth_chirp()
    assert c[0] == 1.0 + 0.0j


def test_chirp_unit_modulus():
    c = synth_chirp()
    assert np.abs(np.abs(c) - 1.0).max() < 1e-12


def test_chirp_instantaneous_frequency_increases_linearly():
    n = 32
    t = np.arange(n, dtype=float)
    phase = math.pi * (t * t / n - t)
    steps = np.diff(phase)
    increments = np.diff(steps)
    assert (steps[1:] > steps[:-1]).all()
    assert np.allclose(increments, 2.0 * math.pi / n, atol=1e-12)


# ---------------------------------------------------------------- device profile

def test_identity_profile_reproduces_chirp():
    chirp = synth_chirp()
    out = apply_device_profile(chirp, DeviceProfile(), make_rng(0))
    assert np.array_equal(out[0], chirp.real)
    assert np.array_equal(out[1], chirp.imag)


def test_gain_scales_power():
    chirp = synth_chirp()
    base = apply_device_profile(chirp, DeviceProfile(), make_rng(0))
    boosted = apply_device_profile(chirp, DeviceProfile(gain_db=6.0206), make_rng(0))
    ratio = np.mean(boosted ** 2) / np.mean(base ** 2)
    expected = 10.0 ** (6.0206 / 10.0)
    assert math.isclose(ratio, expected, rel_tol=1e-9)


def test_cfo_advances_phase_per_sample():
    chirp = synth_chirp()
    cfo = 0.01
    out = apply_device_profile(chirp, DeviceProfile(cfo_norm=cfo), make_rng(0))
    rotated = out[0] + 1j * out[1]
    extra = np.angle(rotated / chirp)
    t = np.arange(len(chirp))
    assert np.allclose(extra, cfo * t, atol=1e-12)


def test_phase_offset_is_static_rotation():
    chirp = synth_chirp()
    out = apply_device_profile(chirp, DeviceProfile(phase_offset_rad=0.3), make_rng(0))
    rotated = out[0] + 1j * out[1]
    assert np.allclose(np.angle(rotated / chirp), 0.3, atol=1e-12)


def test_iq_imbalance_scales_q_row_only():
    chirp = synth_chirp()
    base = apply_device_profile(chirp, DeviceProfile(), make_rng(0))
    skew = apply_device_profile(chirp, DeviceProfile(iq_gain_imbalance=1.05), make_rng(0))
    assert np.array_equal(skew[0], base[0])
    assert np.allclose(skew[1], 1.05 * base[1], atol=1e-15)


def test_noise_matches_requested_snr():
    chirp = synth_chirp()
    profile = DeviceProfile(snr_db=20.0)
    rng = make_rng(123)
    clean = apply_device_profile(chirp, DeviceProfile(), make_rng(0))
    noise_power = []
    for _ in range(400):
        noisy = apply_device_profile(chirp, profile, rng)
        noise_power.append(np.mean((noisy - clean) ** 2))
    realized_snr = 10.0 * math.log10(np.mean(clean ** 2) / np.mean(noise_power))
    assert abs(realized_snr - 20.0) < 0.5


def test_profile_validation():
    with pytest.raises(ConfigError):
        DeviceProfile(iq_gain_imbalance=0.0)
    with pytest.raises(ConfigError):
        DeviceProfile(snr_db=math.inf)


# ---------------------------------------------------------------- generation

def test_generate_dataset_cell_counts():
    ds = generate_dataset(n_total=400, seed=1)
    assert len(ds) == 400
    assert ds.cell_counts() == {
        "device0_legit": 100,
        "device0_rogue": 100,
        "device1_legit": 100,
        "device1_rogue": 100,
    }


def test_generate_dataset_requires_multiple_of_four():
    with pytest.raises(ConfigError):
        generate_dataset(n_total=402)


def test_generate_dataset_is_deterministic():
    a = generate_dataset(n_total=200, seed=9)
    b = generate_dataset(n_total=200, seed=9)
    assert a == b
    c = generate_dataset(n_total=200, seed=10)
    assert not (a == c)


def test_generated_values_are_float32_representable():
    ds = generate_dataset(n_total=200, seed=3)
    assert np.array_equal(ds.iq, ds.iq.astype(np.float32).astype(np.float64))


def test_rogue_cells_carry_gain_offset():
    ds = generate_dataset(n_total=800, seed=7)
    legit0 = mean_signal_power(ds.iq[(ds.device == 0) & (ds.authenticity == 0)])
    rogue0 = mean_signal_power(ds.iq[(ds.device == 0) & (ds.authenticity == 1)])
    expected = 10.0 ** (DEFAULT_ROGUE_TRANSFORMS[0].gain_offset_db / 10.0)
    assert abs(rogue0 / legit0 - expected) < 0.05 * expected


def test_mean_signal_power_of_unit_chirps():
    profiles = (DeviceProfile(), DeviceProfile())
    ds = generate_legitimate(profiles, n_per_device=10, seed=0)
    assert abs(mean_signal_power(ds) - 0.5) < 1e-6


def test_mean_signal_power_rejects_empty():
    with pytest.raises(ConfigError):
        mean_signal_power(np.zeros((0, 2, 32)))


# ---------------------------------------------------------------- split

def test_split_is_stratified_and_exact_on_divisible_cells():
    ds = generate_dataset(n_total=400, seed=5)
    train, test = split(ds, train_fraction=0.8, seed=5)
    assert len(train) == 320 and len(test) == 80
    for part, per_cell in ((train, 80), (test, 20)):
        for count in part.cell_counts().values():
            assert count == per_cell


def test_split_partitions_without_overlap():
    ds = generate_dataset(n_total=200, seed=6)
    train, test = split(ds, 0.8, seed=6)
    pooled = np.concatenate([train.iq, test.iq]).reshape(len(ds), -1)
    original = np.sort(ds.iq.reshape(len(ds), -1), axis=0)
    assert np.array_equal(np.sort(pooled, axis=0), original)


def test_split_determinism_and_fraction_validation():
    ds = generate_dataset(n_total=200, seed=2)
    a1, b1 = split(ds, 0.8, seed=11)
    a2, b2 = split(ds, 0.8, seed=11)
    assert a1 == a2 and b1 == b2
    with pytest.raises(ConfigError):
        split(ds, 1.0)
    with pytest.raises(ConfigError):
        split(ds, 0.0)


# ---------------------------------------------------------------- container format

def test_save_load_roundtrip(tmp_path):
    ds = generate_dataset(n_total=200, seed=4)
    path = tmp_path / "data.iq"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded == ds


def test_file_size_formula(tmp_path):
    ds = generate_dataset(n_total=200, seed=4)
    path = tmp_path / "data.iq"
    save_dataset(ds, path)
    assert path.stat().st_size == 16 + 8 + 200 * (64 * 4 + 2)


def test_save_load_save_is_byte_identical(tmp_path):
    ds = generate_dataset(n_total=120, seed=8)
    p1, p2 = tmp_path / "a.iq", tmp_path / "b.iq"
    save_dataset(ds, p1)
    save_dataset(load_dataset(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.iq"
    path.write_bytes(b"NOTLORA!" + b"\x00" * 40)
    with pytest.raises(FormatError):
        load_dataset(path)


def test_load_rejects_truncation(tmp_path):
    ds = generate_dataset(n_total=120, seed=8)
    path = tmp_path / "data.iq"
    save_dataset(ds, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(FormatError):
        load_dataset(path)


def test_load_rejects_unknown_version(tmp_path):
    ds = generate_dataset(n_total=120, seed=8)
    path = tmp_path / "data.iq"
    save_dataset(ds, path)
    blob = bytearray(path.read_bytes())
    blob[8] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load_dataset(path)


def test_convert_raw_f32(tmp_path):
    rng = make_rng(15)
    records = rng.normal(0.0, 1.0, (5, 2, 32)).astype(np.float32)
    interleaved = records.transpose(0, 2, 1).reshape(-1)  # I0 Q0 I1 Q1 ...
    raw = tmp_path / "capture.f32"
    interleaved.tofile(raw)
    ds = convert_raw_f32(raw, device=1, authenticity=0)
    assert len(ds) == 5
    assert np.array_equal(ds.iq, records.astype(np.float64))
    assert (ds.device == 1).all() and (ds.authenticity == 0).all()


def test_convert_raw_f32_rejects_ragged_stream(tmp_path):
    raw = tmp_path / "bad.f32"
    np.zeros(63, dtype=np.float32).tofile(raw)
    with pytest.raises(FormatError):
        convert_raw_f32(raw)


# ---------------------------------------------------------------- dataset container

def test_dataset_rejects_bad_labels():
    iq = np.zeros((4, 2, 32))
    with pytest.raises(ConfigError):
        Dataset(iq, np.array([0, 1, 2, 0]), np.zeros(4))
    with pytest.raises(ConfigError):
        Dataset(iq, np.zeros(3), np.zeros(4))


def test_dataset_meta_counts_match_contents():
    ds = generate_dataset(n_total=200, seed=4)
    assert ds.meta["cells"] == ds.cell_counts()
    sub = ds.subset(ds.authenticity == 0)
    assert sub.meta["cells"] == sub.cell_counts()
    assert sub.meta["cells"]["device0_rogue"] == 0


def test_dataset_task_labels():
    ds = generate_dataset(n_total=200, seed=4)
    assert np.array_equal(ds.labels("device"), ds.device.astype(np.int64))
    assert np.array_equal(ds.labels("authenticity"), ds.authenticity.astype(np.int64))
    with pytest.raises(ConfigError):
        ds.labels("nope")
