import struct

import numpy as np
import pytest

from s2hprune.data import (
    Dataset,
    FormatError,
    batch_iter,
    gen_synthetic,
    load_csv,
    load_idx,
    write_idx,
)


def test_synthetic_deterministic():
    for kind in ("blobs", "spirals"):
        a = gen_synthetic(kind, 200, 3, 0.2, seed=4)
        b = gen_synthetic(kind, 200, 3, 0.2, seed=4)
        for x, y in zip(a, b):
            assert x.features.tobytes() == y.features.tobytes()
            assert x.labels.tobytes() == y.labels.tobytes()
    c = gen_synthetic("blobs", 200, 3, 0.2, seed=5)
    assert c.train.features.tobytes() != a.train.features.tobytes()


def test_noise_free_blobs_on_centers():
    s = gen_synthetic("blobs", 300, 3, 0.0, seed=0)
    x = np.concatenate([s.train.features, s.val.features])
    y = np.concatenate([s.train.labels, s.val.labels])
    for k in range(3):
        pts = np.unique(x[y == k], axis=0)
        assert len(pts) == 1
    # separable by nearest centre, hence linearly
    centers = np.array([x[y == k][0] for k in range(3)])
    pred = np.argmin(((x[:, None] - centers[None]) ** 2).sum(-1), axis=1)
    assert np.array_equal(pred, y)


def test_balanced_and_split():
    s = gen_synthetic("blobs", 300, 3, 0.3, seed=0)
    y = np.concatenate([s.train.labels, s.val.labels])
    assert np.bincount(y).tolist() == [100, 100, 100]
    assert len(s.train) == 240 and len(s.val) == 60


def test_train_val_disjoint():
    s = gen_synthetic("blobs", 500, 4, 0.5, seed=2)
    tr = {r.tobytes() for r in s.train.features}
    assert not any(r.tobytes() in tr for r in s.val.features)


def test_synthetic_errors():
    with pytest.raises(ValueError):
        gen_synthetic("blobs", 2, 3, 0.1, 0)
    with pytest.raises(ValueError):
        gen_synthetic("moons", 10, 2, 0.1, 0)


def make_ds(n):
    return Dataset(np.arange(n, dtype=float)[:, None], np.zeros(n, dtype=int), 2)


def test_batch_iter():
    ds = make_ds(10)
    sizes = [len(x) for x, _ in batch_iter(ds, 4, seed=0, epoch=0)]
    assert sizes == [4, 4, 2]
    seen = np.concatenate([x[:, 0] for x, _ in batch_iter(ds, 4, 0, 0)])
    assert sorted(seen.tolist()) == list(range(10))
    again = np.concatenate([x[:, 0] for x, _ in batch_iter(ds, 4, 0, 0)])
    assert np.array_equal(seen, again)
    other = np.concatenate([x[:, 0] for x, _ in batch_iter(ds, 4, 0, 1)])
    assert not np.array_equal(seen, other)
    with pytest.raises(ValueError):
        list(batch_iter(ds, 0, 0, 0))


def write_pair(tmp_path, pixels, labels, img_magic=0x803, lab_magic=0x801, n_lab=None):
    n, h, w = pixels.shape
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    ip.write_bytes(struct.pack(">IIII", img_magic, n, h, w) + pixels.astype(np.uint8).tobytes())
    nl = len(labels) if n_lab is None else n_lab
    lp.write_bytes(struct.pack(">II", lab_magic, nl) + bytes(labels))
    return ip, lp


def test_idx_hand_built(tmp_path):
    pix = np.array([[[0, 255], [128, 64]], [[255, 255], [0, 0]]])
    ip, lp = write_pair(tmp_path, pix, [1, 0])
    ds = load_idx(ip, lp)
    assert ds.features.shape == (2, 1, 2, 2) and ds.labels.tolist() == [1, 0]
    assert ds.features[0, 0, 0, 1] == 1.0 and ds.features[0, 0, 0, 0] == 0.0


def test_idx_wrong_magic(tmp_path):
    pix = np.zeros((2, 2, 2))
    ip, lp = write_pair(tmp_path, pix, [0, 1])
    with pytest.raises(FormatError, match="0x00000801"):
        load_idx(lp, lp)


def test_idx_count_mismatch(tmp_path):
    pix = np.zeros((2, 2, 2))
    ip, lp = write_pair(tmp_path, pix, [0, 1, 1])
    with pytest.raises(FormatError, match="count mismatch"):
        load_idx(ip, lp)


def test_idx_truncated(tmp_path):
    pix = np.zeros((2, 2, 2))
    ip, lp = write_pair(tmp_path, pix, [0, 1])
    ip.write_bytes(ip.read_bytes()[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_idx(ip, lp)


def test_idx_round_trip(tmp_path, rng):
    pix = rng.integers(0, 256, (5, 3, 4)).astype(np.uint8)
    ds = Dataset(pix[:, None].astype(float) / 255.0, rng.integers(0, 3, 5), 3)
    write_idx(ds, tmp_path / "i", tmp_path / "l")
    back = load_idx(tmp_path / "i", tmp_path / "l", num_classes=3)
    assert back.features.tobytes() == ds.features.tobytes()
    assert back.labels.tobytes() == ds.labels.tobytes()


def test_csv_loader(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x1,label,x2\n0.5,1,2\n-1,0,3.25\n")
    ds = load_csv(p)
    assert ds.features.tolist() == [[0.5, 2.0], [-1.0, 3.25]]
    assert ds.labels.tolist() == [1, 0] and ds.num_classes == 2


@pytest.mark.parametrize("text,msg", [
    ("", "empty"), ("a,b\n1,2\n", "label"), ("x,label\n1\n", "fields"), ("x,label\nz,1\n", "d.csv:2"),
])
def test_csv_errors(tmp_path, text, msg):
    p = tmp_path / "d.csv"
    p.write_text(text)
    with pytest.raises(FormatError, match=msg):
        load_csv(p)
