import json

import numpy as np
import pytest
import torch
from PIL import Image

from mdsam.data import (DatasetManifest, ManifestError, SampleReadError, augment_samples, batch, load_dataset,
                        load_saliency, make_synthetic_samples, read_mask, save_saliency, write_synthetic_dataset)


@pytest.fixture
def dataset(tmp_path):
    return write_synthetic_dataset(tmp_path / "ds", n=5, size=48, seed=1)


def test_manifest_round_trip(dataset, tmp_path):
    m = DatasetManifest.load(dataset)
    assert m.split == "train" and m.image_dir.is_dir()
    pairs = m.pairs()
    assert [p[0] for p in pairs] == [f"synth_{i:03d}" for i in range(5)]
    m.save(tmp_path / "copy.json")
    assert DatasetManifest.load(tmp_path / "copy.json").pairs() == pairs


def test_manifest_errors(dataset, tmp_path):
    with pytest.raises(ManifestError, match="not found"):
        DatasetManifest(tmp_path / "ds" / "images", tmp_path / "missing").pairs()
    (tmp_path / "ds" / "masks" / "synth_000.png").unlink()
    with pytest.raises(ManifestError, match="unpaired"):
        DatasetManifest.load(dataset).pairs()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"image_dir": "x"}))
    with pytest.raises(ManifestError, match="mask_dir"):
        DatasetManifest.load(bad)


def test_load_dataset_resizes(dataset):
    samples = load_dataset(DatasetManifest.load(dataset), 64)
    assert len(samples) == 5
    for s in samples:
        assert s.image.shape == (3, 64, 64)
        assert s.mask.shape == (1, 64, 64)
        assert set(torch.unique(s.mask).tolist()) <= {0.0, 1.0}
    with pytest.raises(ValueError):
        load_dataset(DatasetManifest.load(dataset), 50)


def test_unreadable_sample(dataset):
    (dataset.parent / "images" / "synth_002.png").write_bytes(b"not an image")
    with pytest.raises(SampleReadError, match="synth_002"):
        load_dataset(DatasetManifest.load(dataset), 48)


def test_mask_binarisation(tmp_path):
    arr = np.array([[0, 100, 128, 200]], dtype=np.uint8)
    Image.fromarray(arr, mode="L").save(tmp_path / "m.png")
    assert read_mask(tmp_path / "m.png")[0, 0].tolist() == [0.0, 0.0, 1.0, 1.0]


def test_augmentation_is_seeded_and_flips_pairs():
    samples = make_synthetic_samples(6, 32, seed=0)
    a = augment_samples(samples, np.random.default_rng(3))
    b = augment_samples(samples, np.random.default_rng(3))
    for s, x, y in zip(samples, a, b):
        assert torch.equal(x.image, y.image)
        flipped = not torch.equal(x.image, s.image)
        if flipped:
            assert torch.equal(x.image, s.image.flip(-1)) and torch.equal(x.mask, s.mask.flip(-1))


def test_batching():
    samples = make_synthetic_samples(5, 32, seed=0)
    batches = list(batch(samples, 2, seed=4))
    assert [len(b.ids) for b in batches] == [2, 2, 1]
    assert sorted(i for b in batches for i in b.ids) == sorted(s.id for s in samples)
    assert [b.ids for b in batch(samples, 2, seed=4)] == [b.ids for b in batches]
    ordered = [i for b in batch(samples, 2, seed=None) for i in b.ids]
    assert ordered == [s.id for s in samples]
    with pytest.raises(ValueError):
        next(batch(samples, 0))


def test_saliency_file_round_trip(tmp_path):
    sal = np.linspace(-0.2, 1.2, 64).reshape(8, 8)
    path = save_saliency(torch.from_numpy(sal)[None], tmp_path / "out" / "x.png")
    back = load_saliency(path)
    assert back.shape == (8, 8)
    assert np.abs(back - np.clip(sal, 0, 1)).max() <= 0.5 / 255 + 1e-12
    with pytest.raises(ValueError):
        save_saliency(np.zeros((2, 3, 4)), tmp_path / "bad.png")


def test_synthetic_samples_are_deterministic():
    a = make_synthetic_samples(3, 32, seed=9)
    b = make_synthetic_samples(3, 32, seed=9)
    assert all(torch.equal(x.image, y.image) and torch.equal(x.mask, y.mask) for x, y in zip(a, b))
    assert all(0 < float(s.mask.mean()) < 1 for s in a)
