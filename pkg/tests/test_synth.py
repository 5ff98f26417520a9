import hashlib
import struct

import numpy as np
import pytest

from gsmnet.synth import (
    DatasetFormatError,
    SyntheticTaskSpec,
    decode_sample,
    encode_sample,
    generate,
    read_dataset,
    write_dataset,
)


def small(task="direction", **kw):
    return SyntheticTaskSpec(task=task, frames=6, size=16, object_size=6, per_class=10, **kw)


@pytest.mark.parametrize("task", ["direction", "grow_shrink"])
def test_counts_and_balance(task):
    ds = generate(small(task))
    assert len(ds) == 20
    assert np.sum(ds.labels == 0) == np.sum(ds.labels == 1) == 10
    assert ds.clips.shape == (20, 3, 6, 16, 16) and ds.clips.dtype == np.float32


@pytest.mark.parametrize("task", ["direction", "grow_shrink"])
@pytest.mark.parametrize("noise", [0.0, 0.1])
def test_twins_are_exact_time_reversals(task, noise):
    ds = generate(small(task, noise=noise))
    for p in range(10):
        a, b = np.flatnonzero(ds.pair_ids == p)
        assert ds.labels[a] != ds.labels[b]
        np.testing.assert_array_equal(ds.clips[a], ds.clips[b][:, ::-1])


def test_class_frame_multisets_identical():
    ds = generate(small(noise=0.05))

    def hashes(label):
        return sorted(
            hashlib.sha256(np.ascontiguousarray(clip[:, f]).tobytes()).hexdigest()
            for clip in ds.clips[ds.labels == label] for f in range(clip.shape[1])
        )

    assert hashes(0) == hashes(1)


def test_direction_class_zero_moves_right():
    ds = generate(small())
    clip = ds.clips[np.flatnonzero(ds.labels == 0)[0]]
    cols = [np.flatnonzero(clip[0, f].any(axis=0)).min() for f in range(clip.shape[1])]
    assert all(b > a for a, b in zip(cols, cols[1:]))


def test_split_keeps_pairs_together_and_is_80_20():
    ds = generate(SyntheticTaskSpec(frames=4, size=8, object_size=2, per_class=50))
    assert ds.is_train.sum() == 80
    for p in range(50):
        assert len(set(ds.is_train[ds.pair_ids == p])) == 1


def test_stats_from_train_split():
    ds = generate(small())
    train = ds.clips[ds.is_train]
    np.testing.assert_allclose(ds.mean, train.mean(axis=(0, 2, 3, 4)), rtol=1e-6)
    norm = ds.normalize(train)
    np.testing.assert_allclose(norm.mean(axis=(0, 2, 3, 4)), 0, atol=1e-5)


def test_generation_is_deterministic():
    a, b = generate(small(seed=3)), generate(small(seed=3))
    assert a.clips.tobytes() == b.clips.tobytes()
    assert np.array_equal(a.is_train, b.is_train)
    assert generate(small(seed=4)).clips.tobytes() != a.clips.tobytes()


@pytest.mark.parametrize(
    "kw",
    [dict(size=4), dict(frames=1), dict(object_size=20), dict(size=10, object_size=6, frames=8),
     dict(task="spin"), dict(noise=-1.0), dict(per_class=0), dict(task="grow_shrink", object_size=3)],
)
def test_infeasible_specs_rejected(kw):
    base = dict(frames=6, size=16, object_size=4, per_class=2)
    base.update(kw)
    with pytest.raises(ValueError):
        generate(SyntheticTaskSpec(**base))


def test_dataset_round_trip(tmp_path):
    ds = generate(small(noise=0.1))
    write_dataset(ds, tmp_path / "d")
    back = read_dataset(tmp_path / "d")
    assert back.clips.tobytes() == ds.clips.tobytes()
    for field in ("labels", "pair_ids", "is_train", "mean", "std"):
        assert np.array_equal(getattr(back, field), getattr(ds, field))
    lines = (tmp_path / "d" / "manifest.tsv").read_text().splitlines()
    assert len(lines) - 1 == len(ds)
    assert lines[0].startswith("#mean\t")


def test_sample_format_layout():
    buf = encode_sample(np.ones((2, 3), dtype=np.float32))
    assert buf[:4] == b"GSMV"
    assert struct.unpack_from("<3I", buf, 4) == (2, 2, 3)
    assert len(buf) == 16 + 24


def test_corrupt_magic_rejected(tmp_path):
    ds = generate(small())
    write_dataset(ds, tmp_path)
    f = tmp_path / "00000.gsmv"
    raw = bytearray(f.read_bytes())
    raw[1] = ord("X")
    f.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="offset 0"):
        read_dataset(tmp_path)


def test_truncated_and_overflowing_samples():
    buf = encode_sample(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(DatasetFormatError) as err:
        decode_sample(buf[:-1])
    assert err.value.offset == 16
    huge = b"GSMV" + struct.pack("<3I", 2, 2**32 - 1, 2**32 - 1)
    with pytest.raises(DatasetFormatError, match="need"):
        decode_sample(huge)
    with pytest.raises(DatasetFormatError, match="truncated"):
        decode_sample(b"GSMV\x02\x00")


def test_malformed_manifest(tmp_path):
    ds = generate(small())
    write_dataset(ds, tmp_path)
    m = tmp_path / "manifest.tsv"
    lines = m.read_text().splitlines()
    m.write_text("\n".join(lines[:1] + ["00000.gsmv\tzero\t0\ttrain"]) + "\n")
    with pytest.raises(DatasetFormatError):
        read_dataset(tmp_path)
    m.write_text("\n".join(lines[1:]) + "\n")
    with pytest.raises(DatasetFormatError, match="header"):
        read_dataset(tmp_path)
