"""Annotation parsing, feature files, embeddings, synthesis, batching."""

import logging
import struct

import numpy as np
import pytest

import lpnet.ndtensor as nd
from lpnet.data import (FEATURE_MAGIC, EmbeddingTable, LPDataError, PAD_NEG,
                        Sample, SynthSpec, attach_features, attach_queries,
                        embed, feature_file_read, feature_store_read,
                        feature_store_write, load_annotations_activitynet,
                        load_annotations_charades, load_dataset,
                        load_durations, pad_batch, subsample_frames,
                        synth_generate, synth_materialize,
                        synth_spec_from_dict)


# ----------------------------------------------------------------- charades

def test_charades_golden_line(tmp_path):
    path = tmp_path / "ann.txt"
    path.write_text("vid01 2.5 7.0##Person Opens the Door\n")
    stubs = load_annotations_charades(str(path))
    assert len(stubs) == 1
    s = stubs[0]
    assert s.video_id == "vid01"
    assert s.gt_seconds == (2.5, 7.0)
    assert s.tokens == ["person", "opens", "the", "door"]
    assert s.duration == 7.0  # falls back to the moment's own end
    assert np.allclose(s.gt_norm, (2.5 / 7.0, 1.0))


def test_charades_uses_duration_table(tmp_path):
    ann = tmp_path / "ann.txt"
    ann.write_text("vid01 2.0 8.0##a person runs\n")
    dur = tmp_path / "dur.txt"
    dur.write_text("vid01 16.0\n")
    stubs = load_annotations_charades(str(ann), durations=load_durations(str(dur)))
    assert stubs[0].duration == 16.0
    assert np.allclose(stubs[0].gt_norm, (0.125, 0.5))


def test_charades_missing_separator_names_line(tmp_path):
    path = tmp_path / "ann.txt"
    path.write_text("vid01 2.5 7.0##ok line\nvid02 1.0 2.0 broken line\n")
    with pytest.raises(LPDataError, match=r"ann\.txt:2"):
        load_annotations_charades(str(path))


def test_charades_malformed_fields(tmp_path):
    path = tmp_path / "a.txt"
    path.write_text("vid01 2.5##too few fields\n")
    with pytest.raises(LPDataError, match=r"a\.txt:1"):
        load_annotations_charades(str(path))
    path.write_text("vid01 x 7.0##bad number\n")
    with pytest.raises(LPDataError, match="non-numeric"):
        load_annotations_charades(str(path))
    path.write_text("vid01 2.5 7.0##   \n")
    with pytest.raises(LPDataError, match="empty sentence"):
        load_annotations_charades(str(path))


def test_charades_inverted_interval_skipped_with_warning(tmp_path, caplog):
    path = tmp_path / "ann.txt"
    path.write_text("vid01 7.0 2.5##inverted\nvid02 1.0 2.0##fine line\n")
    with caplog.at_level(logging.WARNING, logger="lpnet.data"):
        stubs = load_annotations_charades(str(path))
    assert [s.video_id for s in stubs] == ["vid02"]
    assert any("skipped" in rec.message for rec in caplog.records)


def test_charades_clamps_end_beyond_duration(tmp_path, caplog):
    ann = tmp_path / "ann.txt"
    ann.write_text("vid01 2.0 30.0##runs long\n")
    dur = tmp_path / "dur.txt"
    dur.write_text("vid01 10.0\n")
    with caplog.at_level(logging.WARNING, logger="lpnet.data"):
        stubs = load_annotations_charades(str(ann), durations=load_durations(str(dur)))
    assert stubs[0].gt_seconds == (2.0, 10.0)
    assert any("clamped" in rec.message for rec in caplog.records)


def test_charades_empty_file(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("")
    assert load_annotations_charades(str(path)) == []


def test_durations_malformed(tmp_path):
    path = tmp_path / "dur.txt"
    path.write_text("vid01 10.0\nvid02\n")
    with pytest.raises(LPDataError, match=r"dur\.txt:2"):
        load_durations(str(path))


# -------------------------------------------------------------- activitynet

def test_activitynet_two_pairs(tmp_path):
    path = tmp_path / "ann.json"
    path.write_text('{"v1": {"duration": 20.0, '
                    '"timestamps": [[0.0, 5.0], [10.0, 15.0]], '
                    '"sentences": ["first thing", "second thing"]}}')
    stubs = load_annotations_activitynet(str(path))
    assert len(stubs) == 2
    assert stubs[0].gt_seconds == (0.0, 5.0)
    assert stubs[1].tokens == ["second", "thing"]


def test_activitynet_mismatch_names_video(tmp_path):
    path = tmp_path / "ann.json"
    path.write_text('{"vbad": {"duration": 20.0, "timestamps": [[0, 5]], '
                    '"sentences": ["one", "two"]}}')
    with pytest.raises(LPDataError, match="vbad"):
        load_annotations_activitynet(str(path))


def test_activitynet_clamps_to_duration(tmp_path, caplog):
    path = tmp_path / "ann.json"
    path.write_text('{"v1": {"duration": 10.0, "timestamps": [[2.0, 25.0]], '
                    '"sentences": ["goes past the end"]}}')
    with caplog.at_level(logging.WARNING, logger="lpnet.data"):
        stubs = load_annotations_activitynet(str(path))
    assert stubs[0].gt_seconds == (2.0, 10.0)
    assert any("clamped" in rec.message for rec in caplog.records)


def test_activitynet_empty_mapping(tmp_path):
    path = tmp_path / "ann.json"
    path.write_text("{}")
    assert load_annotations_activitynet(str(path)) == []


# ------------------------------------------------------------ feature files

def test_feature_file_known_bytes(tmp_path):
    feats = np.array([[1.0, 2.0], [3.5, -1.0]], dtype=np.float32)
    path = feature_store_write(str(tmp_path), "vid", feats)
    expect = FEATURE_MAGIC + struct.pack("<II", 2, 2) + feats.astype("<f4").tobytes()
    with open(path, "rb") as fh:
        assert fh.read() == expect
    back = feature_store_read(str(tmp_path), "vid")
    assert np.array_equal(back, feats.astype(np.float64))


def test_feature_file_roundtrip_wide(tmp_path, rng):
    feats = rng.normal(size=(8, 500)).astype(np.float32)
    feature_store_write(str(tmp_path), "wide", feats)
    back = feature_store_read(str(tmp_path), "wide")
    assert back.shape == (8, 500)
    assert np.array_equal(back, feats.astype(np.float64))


def test_feature_file_errors(tmp_path):
    bad = tmp_path / "x.lpft"
    bad.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(LPDataError, match="magic"):
        feature_file_read(str(bad))
    trunc = tmp_path / "y.lpft"
    trunc.write_bytes(FEATURE_MAGIC + struct.pack("<II", 4, 4) + b"\x00" * 8)
    with pytest.raises(LPDataError, match="bytes"):
        feature_file_read(str(trunc))
    header_only = tmp_path / "z.lpft"
    header_only.write_bytes(FEATURE_MAGIC + b"\x00\x00")
    with pytest.raises(LPDataError):
        feature_file_read(str(header_only))
    with pytest.raises(FileNotFoundError, match="ghost"):
        feature_store_read(str(tmp_path), "ghost")
    with pytest.raises(LPDataError, match="2-D"):
        feature_store_write(str(tmp_path), "flat", np.zeros(8))


def test_subsample_frames():
    feats = np.arange(100.0)[:, None]
    assert subsample_frames(feats, 200) is feats
    sub = subsample_frames(feats, 10)
    assert sub.shape == (10, 1)
    assert sub[0, 0] == 0.0 and sub[-1, 0] == 99.0
    assert np.all(np.diff(sub[:, 0]) > 0)  # order preserved, uniform spread


# --------------------------------------------------------------- embeddings

def test_hash_embeddings_deterministic():
    table = EmbeddingTable(mode="hash", dim=16)
    a = table.lookup("person")
    b = table.lookup("person")
    assert np.array_equal(a, b)
    assert np.isclose(np.linalg.norm(a), 1.0)
    assert not np.allclose(a, table.lookup("door"))


def test_embed_shape_default_dim():
    out = embed(["a", "b", "c"], EmbeddingTable(mode="hash"))
    assert out.shape == (3, 300)


def test_embed_rejects_empty():
    with pytest.raises(LPDataError):
        embed([], EmbeddingTable(mode="hash", dim=4))


def test_file_embeddings(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("person 1.0 0.0 0.5\ndoor 0.0 2.0 0.0\n")
    table = EmbeddingTable.from_file(str(path))
    assert table.dim == 3
    assert np.array_equal(table.lookup("person"), [1.0, 0.0, 0.5])
    assert np.array_equal(table.lookup("unseen"), np.zeros(3))  # OOV -> zero


def test_file_embeddings_errors(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("person 1.0 0.0\ndoor 0.0 2.0 1.0\n")
    with pytest.raises(LPDataError, match="dim"):
        EmbeddingTable.from_file(str(path))
    with pytest.raises(LPDataError):
        EmbeddingTable.from_file(str(tmp_path / "missing.txt"))
    with pytest.raises(ValueError):
        EmbeddingTable(mode="sparkle")


# ---------------------------------------------------------------- synthesis

def test_synth_deterministic():
    spec = SynthSpec(num_samples=6, T=10, d_v=4, seed=5)
    a = synth_generate(spec)
    b = synth_generate(SynthSpec(num_samples=6, T=10, d_v=4, seed=5))
    for sa, sb in zip(a, b):
        assert sa.tokens == sb.tokens
        assert sa.gt_norm == sb.gt_norm
        assert np.array_equal(sa.features, sb.features)


def test_synth_signal_confined_to_span():
    quiet = synth_generate(SynthSpec(num_samples=4, T=20, d_v=6, seed=9,
                                     signal_strength=0.0))
    loud = synth_generate(SynthSpec(num_samples=4, T=20, d_v=6, seed=9,
                                    signal_strength=3.0))
    for sq, sl in zip(quiet, loud):
        assert sq.gt_norm == sl.gt_norm
        s, e = sq.gt_norm
        t0 = int(np.floor(s * 19))
        t1 = int(np.ceil(e * 19))
        diff = np.abs(sl.features - sq.features).max(axis=1)
        assert np.all(diff[t0:t1 + 1] > 0.0)
        outside = np.r_[diff[:t0], diff[t1 + 1:]]
        if outside.size:
            assert np.all(outside == 0.0)


def test_synth_interval_statistics():
    spec = SynthSpec(num_samples=400, T=30, d_v=4, seed=1,
                     modes=[(0.5, 0.27, 0.05, 0.02, 1.0)])
    samples = synth_generate(spec)
    widths = np.array([s.gt_norm[1] - s.gt_norm[0] for s in samples])
    gts = np.array([s.gt_norm for s in samples])
    assert np.all(gts >= 0.0) and np.all(gts <= 1.0)
    assert np.all(widths >= 0.02 - 1e-12)
    assert abs(widths.mean() - 0.27) < 0.02  # moment/video ratio preset


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(modes=[(0.5, 0.3, 0.0, 0.0, 0.7)]).validate()  # weights != 1
    with pytest.raises(ValueError):
        SynthSpec(T=1).validate()
    with pytest.raises(ValueError):
        SynthSpec(min_tokens=4, max_tokens=2).validate()


def test_synth_materialize_loads_back(tmp_path):
    spec = SynthSpec(num_samples=5, T=12, d_v=6, seed=2)
    originals = synth_generate(spec)
    ann, dur, feat_dir = synth_materialize(spec, str(tmp_path))
    stubs = load_annotations_charades(ann, durations=load_durations(dur))
    samples = attach_features(stubs, feat_dir, max_frames=12)
    assert len(samples) == 5
    for orig, back in zip(originals, samples):
        assert back.video_id == orig.video_id
        assert back.tokens == orig.tokens
        assert np.allclose(back.gt_seconds, orig.gt_seconds, atol=1e-3)
        assert np.allclose(back.features, orig.features, atol=1e-6)  # f32 store


def test_spec_from_dict_modes_grammar():
    spec = synth_spec_from_dict({"modes": "0.25:0.2:0.02:0.02:0.5,"
                                          "0.75:0.2:0.02:0.02:0.5",
                                 "num_samples": 10})
    assert len(spec.modes) == 2
    assert spec.modes[1][0] == 0.75
    with pytest.raises(ValueError, match="5 fields"):
        synth_spec_from_dict({"modes": "0.25:0.2"})
    with pytest.raises(ValueError, match="unknown"):
        synth_spec_from_dict({"bogus_key": 3})


# ------------------------------------------------------------------ batching

def test_pad_batch_uniform_lengths(tiny_dataset):
    batches = pad_batch(tiny_dataset[:4], batch_size=2)
    assert len(batches) == 2
    b = batches[0]
    assert b.video.shape[0] == 2
    assert np.all(b.video_mask == 0.0)  # all frames real


def test_pad_batch_mixed_lengths(rng):
    def mk(T, M, i):
        return Sample(video_id=f"v{i}", tokens=["x"] * M, gt_seconds=(0.0, 1.0),
                      duration=2.0, gt_norm=(0.0, 0.5),
                      features=rng.normal(size=(T, 4)),
                      query_feats=rng.normal(size=(M, 6)))

    batches = pad_batch([mk(3, 2, 0), mk(5, 4, 1)], batch_size=2)
    b = batches[0]
    assert b.video.shape == (2, 5, 4) and b.query.shape == (2, 4, 6)
    assert np.all(b.video_mask[0, 3:] == PAD_NEG)
    assert np.all(b.video_mask[0, :3] == 0.0)
    assert np.all(b.query_mask[0, 2:] == PAD_NEG)
    assert b.video_lengths == [3, 5] and b.query_lengths == [2, 4]
    assert np.all(b.video[0, 3:] == 0.0)  # zero padding

    probs = nd.softmax(nd.astensor(rng.normal(size=5)), mask=b.video_mask[0]).data
    assert np.all(probs[3:] < 1e-30)


def test_pad_batch_chunking(tiny_dataset):
    batches = pad_batch(tiny_dataset[:7], batch_size=3)
    assert [len(b.samples) for b in batches] == [3, 3, 1]


# -------------------------------------------------------------- load_dataset

def test_load_dataset_synth():
    samples, table = load_dataset({"format": "synth", "num_samples": 4,
                                   "T": 10, "d_v": 6, "seed": 1,
                                   "embed_dim": 12})
    assert len(samples) == 4
    assert samples[0].features.shape == (10, 6)
    assert samples[0].query_feats.shape[1] == 12
    assert table.dim == 12


def test_load_dataset_charades_roundtrip(tmp_path):
    spec = SynthSpec(num_samples=3, T=10, d_v=5, seed=4)
    ann, dur, feat_dir = synth_materialize(spec, str(tmp_path))
    samples, _ = load_dataset({"format": "charades", "annotations": ann,
                               "features": feat_dir, "durations": dur,
                               "embed_dim": 8}, max_frames=10)
    assert len(samples) == 3
    assert samples[0].query_feats.shape[1] == 8


def test_load_dataset_errors(tmp_path):
    with pytest.raises(ValueError, match="unknown dataset format"):
        load_dataset({"format": "parquet"})
    with pytest.raises(ValueError, match="needs"):
        load_dataset({"format": "charades"})
    spec = SynthSpec(num_samples=2, T=8, d_v=4, seed=0)
    ann, dur, feat_dir = synth_materialize(spec, str(tmp_path))
    with pytest.raises(ValueError, match="unknown dataset keys"):
        load_dataset({"format": "charades", "annotations": ann,
                      "features": feat_dir, "bogus": "1"})


def test_sample_validation():
    with pytest.raises(LPDataError):
        Sample(video_id="v", tokens=["a"], gt_seconds=(5.0, 2.0),
               duration=10.0, gt_norm=(0.5, 0.2)).validate()
    with pytest.raises(LPDataError):
        Sample(video_id="v", tokens=[], gt_seconds=(1.0, 2.0),
               duration=10.0, gt_norm=(0.1, 0.2)).validate()


def test_attach_queries(tiny_dataset):
    table = EmbeddingTable(mode="hash", dim=8)
    out = attach_queries(tiny_dataset[:2], table)
    assert out[0].query_feats.shape == (len(out[0].tokens), 8)
