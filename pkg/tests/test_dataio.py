import json

import numpy as np
import pytest

from wsvos.dataio import (SyntheticConfig, compute_presence_stats, generate_synthetic, load_dataset,
                          read_frame_labels_csv, save_dataset, split_clips)


def small_cfg(**kw):
    base = dict(num_classes=3, clip_length=6, frame_size=(32, 32), size_range=(6, 10), seed=1)
    base.update(kw)
    return SyntheticConfig(**base)


def test_split_counts_and_remainder():
    labels = np.ones((90, 2), dtype=int)
    assert len(split_clips(None, labels, 30)) == 3
    assert len(split_clips(None, np.ones((95, 2), dtype=int), 30)) == 3


def test_split_or_merge():
    labels = np.zeros((90, 3), dtype=int)
    labels[:, 0] = 1
    labels[31:34, 2] = 1  # frames 31..33 lie in the second clip
    ds = split_clips(None, labels, 30)
    assert [c.label.tolist() for c in ds.clips] == [[1, 0, 0], [1, 0, 1], [1, 0, 0]]


def test_split_drops_all_zero_clips_and_keeps_consistency():
    rng = np.random.default_rng(0)
    labels = (rng.random((100, 3)) > 0.97).astype(int)
    ds = split_clips(np.zeros((100, 4, 4, 1), np.float32), labels, 10)
    assert all(c.label.any() for c in ds.clips)
    retained = labels[:100 - 100 % 10]
    merged = np.max([c.label for c in ds.clips], axis=0)
    assert merged.tolist() == retained.max(axis=0).tolist()


def test_split_rejects_bad_input():
    with pytest.raises(ValueError):
        split_clips(None, np.ones((10, 1)), 0)
    with pytest.raises(ValueError):
        split_clips(np.zeros((9, 2, 2, 1)), np.ones((10, 1)), 5)


def test_presence_stats_simple_cases():
    labels = np.zeros((40, 2), dtype=int)
    labels[:, 0] = 1
    labels[0:5, 1] = 1
    labels[10:15, 1] = 1
    labels[20:25, 1] = 1
    labels[30:35, 1] = 1
    ds = split_clips(None, labels, 10)
    stats = compute_presence_stats(ds)
    assert stats["class_0"] == {"clips": 4, "frames": 40, "fpc": 100.0}
    assert stats["class_1"] == {"clips": 4, "frames": 20, "fpc": 50.0}


def test_hook_frame_presence_mock():
    # two 125-frame clips showing the hook in 100 and 102 frames: (80% + 81.6%) / 2 = 80.8%
    labels = np.zeros((250, 1), dtype=int)
    labels[:100, 0] = 1
    labels[125:227, 0] = 1
    ds = split_clips(None, labels, 125, class_names=["Hook"])
    assert ds.stats["Hook"]["clips"] == 2
    assert ds.stats["Hook"]["frames"] == 202
    assert ds.stats["Hook"]["fpc"] == pytest.approx(80.8, abs=1e-9)


def test_synthetic_label_soundness():
    ds = generate_synthetic(small_cfg(fpc_range=(0.3, 0.7), distractors=1), 20)
    for clip in ds.clips:
        present = clip.masks.any(axis=(0, 1, 2))
        assert clip.label.tolist() == present.astype(int).tolist()
        assert clip.label.any()
        assert clip.frames.min() >= 0 and clip.frames.max() <= 1


def test_synthetic_contiguous_presence():
    ds = generate_synthetic(small_cfg(fpc_range=(0.3, 0.7)), 20)
    for clip in ds.clips:
        for n in np.nonzero(clip.label)[0]:
            idx = np.nonzero(clip.frame_labels[:, n])[0]
            # an occluded object could only shorten presence, never split it here (one object per class)
            assert idx.max() - idx.min() + 1 == len(idx)


def test_synthetic_mean_fpc_in_band():
    cfg = SyntheticConfig(fpc_range=(0.4, 0.6), clip_length=20, frame_size=(32, 32), size_range=(6, 10),
                          objects_per_clip_range=(1, 1), seed=0)
    ds = generate_synthetic(cfg, 200)
    fpcs = [c.frame_labels[:, np.argmax(c.label)].mean() for c in ds.clips]
    assert 0.45 <= np.mean(fpcs) <= 0.55


def test_synthetic_cop_regime_full_presence():
    ds = generate_synthetic(small_cfg(), 10)
    for clip in ds.clips:
        for n in np.nonzero(clip.label)[0]:
            assert clip.frame_labels[:, n].all()


def test_synthetic_is_deterministic():
    a = generate_synthetic(small_cfg(camera_jitter=True), 5)
    b = generate_synthetic(small_cfg(camera_jitter=True), 5)
    for x, y in zip(a.clips, b.clips):
        assert np.array_equal(x.frames, y.frames) and np.array_equal(x.masks, y.masks)
    c = generate_synthetic(small_cfg(seed=2), 5)
    assert not np.array_equal(a.clips[0].frames, c.clips[0].frames)


def test_synthetic_multi_interval_and_validation():
    ds = generate_synthetic(small_cfg(clip_length=12, fpc_range=(0.5, 0.5), multi_interval=True), 10)
    assert all(c.frame_labels[:, n].sum() == 6 for c in ds.clips for n in np.nonzero(c.label)[0])
    assert len(SyntheticConfig(fpc_range=(0.8, 0.2), motion="teleport").validate()) == 2
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticConfig(fpc_range=(0, 1)), 1)


def test_save_load_round_trip(tmp_path):
    ds = generate_synthetic(small_cfg(fpc_range=(0.3, 0.7)), 4)
    ds.clips[0].boxes = [[[[1, 2, 3, 4]], [], []]] * ds.clips[0].num_frames
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.class_names == ds.class_names
    assert back.stats == json.loads(json.dumps(ds.stats))
    for x, y in zip(ds.clips, back.clips):
        assert x.clip_id == y.clip_id
        assert np.array_equal(x.frames, y.frames)
        assert np.array_equal(x.label, y.label)
        assert np.array_equal(x.masks, y.masks)
        assert np.array_equal(x.frame_labels, y.frame_labels)
    assert back.clips[0].boxes == ds.clips[0].boxes


def test_save_load_single_channel(tmp_path):
    labels = np.ones((4, 1), dtype=int)
    frames = np.random.default_rng(0).integers(0, 256, (4, 4, 4, 1)) / 255.0
    ds = split_clips(frames.astype(np.float32), labels, 2)
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert np.array_equal(back.clips[1].frames, ds.clips[1].frames)


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ValueError, match="corrupt"):
        load_dataset(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"schema_version": 7, "class_names": [], "clips": []}))
    with pytest.raises(ValueError, match="7"):
        load_dataset(tmp_path)


def test_read_frame_labels_csv(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("frame,Grasper,Hook\n0,1,0\n1,1,1\n")
    labels, names = read_frame_labels_csv(path)
    assert names == ["Grasper", "Hook"]
    assert labels.tolist() == [[1, 0], [1, 1]]
