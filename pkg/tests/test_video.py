"""Visual front-end tests: segment container round trips and the
audio-video correlation of the synthetic generator."""

import numpy as np
import pytest

from avse import audio, video
from avse.errors import DataError, FormatError


def test_segment_container_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    segs = [rng.uniform(0, 1, (5, 80, 80)) for _ in range(3)]
    path = tmp_path / "segs.avsg"
    video.save_segments(path, segs)
    loaded = video.load_segments(path)
    assert len(loaded) == 3
    for orig, back in zip(segs, loaded):
        assert back.min() >= 0.0 and back.max() <= 1.0
        assert np.max(np.abs(orig - back)) <= 0.5 / 255.0 + 1e-12
    # write(load(x)) is byte-identical: quantization is idempotent
    path2 = tmp_path / "segs2.avsg"
    video.save_segments(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_all_zero_payload_gives_black_segments(tmp_path):
    path = tmp_path / "black.avsg"
    video.save_segments(path, [np.zeros((5, 80, 80))])
    (seg,) = video.load_segments(path)
    assert np.all(seg == 0.0)


def test_loader_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.avsg"
    path.write_bytes(b"NOPE!" + b"\x00" * 10)
    with pytest.raises(FormatError, match="magic"):
        video.load_segments(path)
    good = video._MAGIC + (2).to_bytes(4, "little") + b"\x00" * 100
    path.write_bytes(good)
    with pytest.raises(FormatError, match="expected"):
        video.load_segments(path)


def test_synth_is_deterministic_per_seed():
    a = video.synth_av_pair(7, duration_s=0.4, snr_db=0.0)
    b = video.synth_av_pair(7, duration_s=0.4, snr_db=0.0)
    assert len(a) == len(b) == 2
    for ea, eb in zip(a, b):
        assert np.array_equal(ea.mixture_chunk.matrix, eb.mixture_chunk.matrix)
        assert np.array_equal(ea.clean_chunk.matrix, eb.clean_chunk.matrix)
        assert np.array_equal(ea.video, eb.video)
    c = video.synth_av_pair(8, duration_s=0.4, snr_db=0.0)
    assert not np.array_equal(a[0].video, c[0].video)


def test_synth_alignment_durations():
    for dur, units in ((0.2, 1), (1.0, 5), (0.45, 2)):
        utt = video.synth_utterance(3, duration_s=dur)
        assert len(utt.segments) == units
        assert len(utt.clean) == units * video.UNIT_SAMPLES
        examples = video.utterance_examples(
            utt.utterance_id, utt.clean, utt.mixture, utt.segments, utt.snr_db)
        assert len(examples) == units
        assert examples[-1].clean_chunk.valid_frames == 17  # stft loses the tail


def test_synth_duration_too_short_rejected():
    with pytest.raises(DataError, match=">= 0.2"):
        video.synth_utterance(0, duration_s=0.1)


def test_audio_rms_tracks_mouth_brightness():
    # Ellipse area is linear in its vertical aperture, so mean frame
    # brightness is a clean proxy for the generator's aperture series.
    rng = np.random.default_rng(1)
    cors = []
    for _ in range(100):
        seed = int(rng.integers(0, 2 ** 31))
        utt = video.synth_utterance(seed, duration_s=1.0, snr_db=0.0)
        frames = np.concatenate(utt.segments, axis=0)
        brightness = frames.mean(axis=(1, 2))
        spf = video.SAMPLES_PER_VIDEO_FRAME
        rms = np.sqrt(np.mean(
            utt.clean[:len(brightness) * spf].reshape(-1, spf) ** 2, axis=1))
        c = np.corrcoef(rms, brightness)[0, 1]
        cors.append(c)
    assert np.mean(cors) > 0.9


def test_high_snr_mixture_chunk_close_to_clean():
    examples = video.synth_av_pair(11, duration_s=1.0, snr_db=30.0)
    for ex in examples:
        v = ex.clean_chunk.valid_frames
        diff = np.abs(ex.mixture_chunk.matrix[:, :v] - ex.clean_chunk.matrix[:, :v])
        assert np.max(diff) < 0.5


def test_examples_share_duration_metadata():
    examples = video.synth_av_pair(13, duration_s=0.6, snr_db=5.0)
    for ex in examples:
        assert ex.video.shape == (5, 80, 80)
        assert ex.mixture_chunk.matrix.shape == (80, 20)
        assert ex.clean_chunk.matrix.shape == (80, 20)
        assert ex.snr_db == 5.0
