import dataclasses

import numpy as np
import pytest

from hypnrsfm.dataio import (
    Frame,
    SynthConfig,
    center_frames,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from hypnrsfm.errors import ConfigError, MetricUnavailableError, ParseError, SchemaError
from hypnrsfm.metrics import mpjpe

SMALL = SynthConfig(n_f=40, n_p=8, k_b=3, k_d=5, seed=3)


def frames_equal(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert np.array_equal(x.w, y.w)
        for field in ("s_gt", "r_gt"):
            u, v = getattr(x, field), getattr(y, field)
            assert (u is None and v is None) or np.array_equal(u, v)


def test_config_validation():
    with pytest.raises(ConfigError) as info:
        SynthConfig(deformation_scale=1.0)
    assert info.value.field == "deformation_scale"
    with pytest.raises(ConfigError):
        SynthConfig(n_f=0)


def test_pure_low_rank():
    frames = generate_synthetic(dataclasses.replace(SMALL, deformation_scale=0.0))
    stacked = np.stack([f.s_gt.ravel() for f in frames])
    sv = np.linalg.svd(stacked, compute_uv=False)
    assert np.all(sv[SMALL.k_b :] < 1e-9)


def test_construction_identity():
    for f in generate_synthetic(SMALL):
        np.testing.assert_array_equal(f.w, (f.r_gt @ f.s_gt)[:2])
        np.testing.assert_allclose(f.s_gt.mean(axis=1), 0.0, atol=1e-14)
        assert np.linalg.matrix_rank(f.s_gt) == 3


def test_deformation_ratio():
    cfg = dataclasses.replace(SMALL, deformation_scale=0.2)
    zero = generate_synthetic(dataclasses.replace(cfg, deformation_scale=0.0))
    full = generate_synthetic(cfg)
    for a, b in zip(zero, full):
        ratio = np.linalg.norm(b.s_gt - a.s_gt) / np.linalg.norm(a.s_gt)
        assert ratio == pytest.approx(0.2, rel=1e-9)


def test_generation_reproducible():
    cfg = SynthConfig(n_f=500, n_p=15, k_b=4, k_d=8, deformation_scale=0.2, seed=7)
    frames_equal(generate_synthetic(cfg), generate_synthetic(cfg))


def test_centering():
    frames = generate_synthetic(SMALL)[:5]
    for a, b in zip(center_frames(frames), frames):
        np.testing.assert_allclose(a.w, b.w, atol=1e-14)
        np.testing.assert_allclose(a.s_gt, b.s_gt, atol=1e-14)
    shifted = [dataclasses.replace(f, w=f.w + np.array([[3.0], [-1.5]])) for f in frames]
    for a, b in zip(center_frames(shifted), frames):
        np.testing.assert_allclose(a.w, b.w, atol=1e-14)


def test_round_trip(tmp_path):
    frames = generate_synthetic(SMALL)
    path = tmp_path / "d.ds"
    save_dataset(frames, path)
    frames_equal(load_dataset(path), frames)
    save_dataset(load_dataset(path), tmp_path / "again.ds")
    assert path.read_bytes() == (tmp_path / "again.ds").read_bytes()


def test_without_ground_truth(tmp_path):
    frames = [Frame(f.w) for f in generate_synthetic(SMALL)[:3]]
    save_dataset(frames, tmp_path / "d.ds")
    loaded = load_dataset(tmp_path / "d.ds")
    assert not any(f.has_gt for f in loaded)
    with pytest.raises(MetricUnavailableError):
        mpjpe(np.zeros((3, SMALL.n_p)), loaded[0].s_gt)


def test_point_count_mismatch_names_frame(tmp_path):
    path = tmp_path / "bad.ds"
    path.write_text("nrsfm-dataset v1 n_p=3 n_f=2 has_gt=0\nframe 0\n1 2 3\n4 5 6\nframe 1\n1 2\n3 4\n")
    with pytest.raises(SchemaError, match="frame 1") as info:
        load_dataset(path)
    assert info.value.line == 6


def test_malformed_files(tmp_path):
    cases = {
        "header": "not-a-dataset\n",
        "number": "nrsfm-dataset v1 n_p=2 n_f=1 has_gt=0\nframe 0\n1 x\n3 4\n",
        "truncated": "nrsfm-dataset v1 n_p=2 n_f=2 has_gt=0\nframe 0\n1 2\n3 4\n",
        "trailing": "nrsfm-dataset v1 n_p=2 n_f=1 has_gt=0\nframe 0\n1 2\n3 4\nextra\n",
    }
    for name, text in cases.items():
        path = tmp_path / f"{name}.ds"
        path.write_text(text)
        with pytest.raises(ParseError) as info:
            load_dataset(path)
        assert info.value.line >= 1


def test_save_rejects_mixed_ground_truth(tmp_path):
    frames = generate_synthetic(SMALL)[:2]
    mixed = [frames[0], Frame(frames[1].w)]
    with pytest.raises(SchemaError):
        save_dataset(mixed, tmp_path / "m.ds")
