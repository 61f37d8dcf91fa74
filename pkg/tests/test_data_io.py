import struct

import numpy as np
import pytest
from PIL import Image

from stdan.config import ModelConfig
from stdan.data_io import (
    FrameSequence,
    SyntheticScene,
    WeightFileError,
    bicubic_downscale,
    degrade,
    load_weights,
    parse_motion,
    quantize,
    read_png,
    read_sequence,
    resize_matrix,
    save_weights,
    scan_manifest,
    synth_sequence,
    write_png,
    write_sequence,
)
from stdan.reconstruct import init_params, model_specs


def test_synth_is_deterministic_and_in_range():
    a = synth_sequence(0, 7, 32)
    b = synth_sequence(0, 7, 32)
    assert len(a) == 7
    for fa, fb in zip(a.frames, b.frames):
        assert fa.shape == (3, 32, 32)
        np.testing.assert_array_equal(fa, fb)
        assert fa.min() >= 0 and fa.max() <= 1
    assert not np.array_equal(a.frames[0], synth_sequence(1, 7, 32).frames[0])


def test_synth_without_motion_is_static():
    seq = synth_sequence(3, 5, 32, motion=(0, 0, 0))
    for f in seq.frames[1:]:
        np.testing.assert_array_equal(f, seq.frames[0])


def test_synth_rejects_even_frame_count():
    with pytest.raises(ValueError, match="odd"):
        synth_sequence(0, 6, 32)


def test_shape_centroid_moves_by_motion():
    scene = SyntheticScene.from_seed(5, 64, (2.0, 1.0, 0.0), 7)
    ys, xs = np.mgrid[0:64, 0:64]
    cents = []
    for t in range(7):
        cov = scene.coverage(t, 0)
        cents.append(((cov * xs).sum() / cov.sum(), (cov * ys).sum() / cov.sum()))
    steps = np.diff(np.array(cents), axis=0)
    np.testing.assert_allclose(steps[:, 0], 2.0, atol=1e-6)
    np.testing.assert_allclose(steps[:, 1], 1.0, atol=1e-6)


def test_parse_motion():
    assert parse_motion("2,1") == (2.0, 1.0, 0.0)
    assert parse_motion("0.5,-1,3") == (0.5, -1.0, 3.0)
    with pytest.raises(ValueError):
        parse_motion("1")


def test_resize_rows_are_partitions_of_unity():
    m = resize_matrix(32, 8)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)


def test_degrade_keeps_odd_frames():
    gt = synth_sequence(0, 7, 32)
    lr = degrade(gt)
    assert lr.times == [1, 3, 5, 7]
    for f, i in zip(lr.frames, (0, 2, 4, 6)):
        np.testing.assert_array_equal(f, bicubic_downscale(gt.frames[i]))
        assert f.shape == (3, 8, 8)


def test_degrade_errors():
    with pytest.raises(ValueError, match="odd"):
        degrade(FrameSequence([np.zeros((3, 8, 8))] * 2))
    with pytest.raises(ValueError, match="divisible"):
        bicubic_downscale(np.zeros((3, 10, 8)))


def test_degrade_constant_and_flip():
    const = np.full((3, 16, 16), 0.3)
    np.testing.assert_allclose(bicubic_downscale(const), 0.3, atol=1e-12)
    img = synth_sequence(2, 1, 32).frames[0]
    np.testing.assert_allclose(bicubic_downscale(img[:, :, ::-1]), bicubic_downscale(img)[:, :, ::-1], atol=1e-12)


def test_checkerboard_downscale_is_antialiased():
    ys, xs = np.mgrid[0:32, 0:32]
    board = np.broadcast_to(((ys + xs) % 2).astype(float), (3, 32, 32))
    out = bicubic_downscale(board)
    assert np.abs(out - 0.5).max() < 0.02


def test_quantize_rule():
    np.testing.assert_array_equal(quantize(np.array([0.0, 1.0, 0.5, -0.2, 1.3])), [0, 255, 128, 0, 255])


def test_png_round_trip(tmp_path, rng):
    frame = rng.random((3, 5, 7))
    path = tmp_path / "f.png"
    write_png(path, frame)
    back = read_png(path)
    np.testing.assert_array_equal(back, quantize(frame) / 255.0)
    write_png(path, back)
    np.testing.assert_array_equal(read_png(path), back)


def test_png_rejects_non_rgb(tmp_path):
    path = tmp_path / "g.png"
    Image.fromarray(np.zeros((4, 4), np.uint8), mode="L").save(path)
    with pytest.raises(ValueError, match="RGB"):
        read_png(path)


def test_sequence_round_trip_and_manifest(tmp_path):
    seq = synth_sequence(0, 3, 16)
    manifest = write_sequence(tmp_path / "gt", seq)
    assert [p.name for p in manifest.paths()] == ["frame_001.png", "frame_002.png", "frame_003.png"]
    scanned = scan_manifest(tmp_path / "gt")
    assert scanned.frame_count == 3 and scanned.resolution == (16, 16)
    back = read_sequence(tmp_path / "gt")
    assert len(back) == 3 and back.times == [1, 2, 3]


def test_manifest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        scan_manifest(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        scan_manifest(tmp_path / "empty")
    gap = tmp_path / "gap"
    gap.mkdir()
    write_png(gap / "frame_001.png", np.zeros((3, 4, 4)))
    write_png(gap / "frame_003.png", np.zeros((3, 4, 4)))
    with pytest.raises(ValueError, match="contiguous"):
        scan_manifest(gap)
    mixed = tmp_path / "mixed"
    mixed.mkdir()
    write_png(mixed / "frame_001.png", np.zeros((3, 4, 4)))
    write_png(mixed / "frame_002.png", np.zeros((3, 4, 5)))
    with pytest.raises(ValueError, match="resolution"):
        read_sequence(mixed)


def _micro_params():
    cfg = ModelConfig.micro()
    return cfg, init_params(cfg, 0)


def test_weight_round_trip_float32(tmp_path):
    cfg, params = _micro_params()
    path = tmp_path / "w.stdw"
    save_weights(path, params)
    back = load_weights(path, model_specs(cfg))
    assert list(back) == list(params)
    for name in params:
        np.testing.assert_array_equal(back[name], params[name].astype(np.float32))


def test_weight_file_layout(tmp_path):
    path = tmp_path / "w.stdw"
    save_weights(path, {"a": np.arange(6.0).reshape(2, 3)})
    data = path.read_bytes()
    assert data[:4] == b"STDW"
    assert struct.unpack_from("<HI", data, 4) == (1, 1)
    assert struct.unpack_from("<H", data, 10) == (1,)
    assert data[12:13] == b"a"
    assert struct.unpack_from("<B2I", data, 13) == (2, 2, 3)
    np.testing.assert_array_equal(np.frombuffer(data[22:], "<f4"), np.arange(6.0))


def test_weight_errors_name_the_tensor(tmp_path):
    cfg, params = _micro_params()
    specs = model_specs(cfg)
    path = tmp_path / "w.stdw"

    path.write_bytes(b"XXXX" + b"\0" * 6)
    with pytest.raises(WeightFileError, match="magic"):
        load_weights(path, specs)

    broken = dict(params)
    broken["shallow.weight"] = np.zeros((1, 2, 3))
    save_weights(path, broken)
    with pytest.raises(WeightFileError, match="shallow.weight"):
        load_weights(path, specs)

    missing = {k: v for k, v in params.items() if k != "shallow.bias"}
    save_weights(path, missing)
    with pytest.raises(WeightFileError, match="shallow.bias"):
        load_weights(path, specs)

    save_weights(path, {**params, "stray": np.zeros(2)})
    with pytest.raises(WeightFileError, match="stray"):
        load_weights(path, specs)
    assert "stray" not in load_weights(path, specs, allow_extra=True)

    save_weights(path, params)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(WeightFileError, match="truncated"):
        load_weights(path, specs)
