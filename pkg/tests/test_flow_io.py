import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowbundle import flow_io, patch_core
from flowbundle.errors import (
    BadDims,
    BadMagic,
    EmptyResult,
    InsufficientValidArea,
    TooFew,
    TruncatedFile,
)

from oracles import nearest_rank_top


def field_from(arr):
    return flow_io.FlowField(np.asarray(arr, dtype=np.float32))


def test_flo_roundtrip_1x1():
    f = field_from([[[0.5, -0.25]]])
    back = flow_io.read_flo(flow_io.write_flo(f))
    assert back.data.tobytes() == f.data.tobytes()
    assert (back.width, back.height) == (1, 1)


def test_flo_bad_magic():
    with pytest.raises(BadMagic):
        flow_io.read_flo(struct.pack("<f", 0.0) + struct.pack("<ii", 1, 1) + b"\0" * 8)


def test_flo_truncated():
    data = flow_io.write_flo(field_from(np.zeros((10, 10, 2))))
    with pytest.raises(TruncatedFile):
        flow_io.read_flo(data[:12 + 5 * 8])


def test_flo_bad_dims():
    head = np.float32(202021.25).tobytes()
    with pytest.raises(BadDims):
        flow_io.read_flo(head + struct.pack("<ii", -3, 4) + b"\0" * 64)
    with pytest.raises(BadDims):
        flow_io.read_flo(head + struct.pack("<ii", 200_000, 1) + b"\0" * 64)


def test_flo_roundtrip_random(rng):
    f = field_from(rng.normal(size=(5, 7, 2)).astype(np.float32))
    data = flow_io.write_flo(f)
    assert len(data) == 12 + 8 * 7 * 5
    back = flow_io.read_flo(data)
    assert back.data.tobytes() == f.data.tobytes()


def test_flo_golden_bytes_2x2():
    # hand-assembled little-endian payload: magic, w=2, h=2, then row-major
    # (u, v) float32 pairs 1..8
    vals = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
    golden = struct.pack("<f", 202021.25) + struct.pack("<ii", 2, 2)
    golden += struct.pack("<8f", *vals)
    f = field_from(np.array(vals, dtype=np.float32).reshape(2, 2, 2))
    assert flow_io.write_flo(f) == golden
    back = flow_io.read_flo(golden)
    assert back.data[0, 1, 0] == 3.0 and back.data[1, 0, 1] == 6.0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_flo_roundtrip_property(w, h, seed):
    rng = np.random.default_rng(seed)
    f = field_from(rng.normal(size=(h, w, 2)).astype(np.float32) * 100)
    assert flow_io.read_flo(flow_io.write_flo(f)).data.tobytes() == f.data.tobytes()


def make_frames(rng, n_frames=3, h=12, w=15):
    return [field_from(rng.normal(size=(h, w, 2)).astype(np.float32))
            for _ in range(n_frames)]


def test_sample_patches_counts_and_determinism(rng):
    frames = make_frames(rng)
    ds1 = flow_io.sample_patches(frames, per_frame=5, seed=9)
    ds2 = flow_io.sample_patches(frames, per_frame=5, seed=9)
    assert len(ds1) == 15
    assert np.array_equal(ds1.patches, ds2.patches)
    assert np.array_equal(ds1.rows, ds2.rows)
    # paper-scale arithmetic: 1041 frames x 4000 patches
    assert 1041 * 4000 == 4_164_000


def test_sample_patches_layout(rng):
    # field with pixel value u = 100*row + col, v = -(100*row + col)
    h, w = 6, 8
    rowv, colv = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    arr = np.stack([100.0 * rowv + colv, -(100.0 * rowv + colv)], axis=2)
    ds = flow_io.sample_patches([field_from(arr)], per_frame=4, seed=1)
    for i in range(len(ds)):
        r, c = int(ds.rows[i]), int(ds.cols[i])
        want_u = 100.0 * (r + patch_core.GRID_ROWS) + (c + patch_core.GRID_COLS)
        assert np.allclose(ds.patches[i, :9], want_u)
        assert np.allclose(ds.patches[i, 9:], -want_u)


def test_sample_patches_constant_field():
    f = field_from(np.ones((4, 4, 2)))
    ds = flow_io.sample_patches([f], per_frame=1, seed=0)
    assert ds.contrast[0] == 0.0


def test_sample_patches_avoids_invalid(rng):
    arr = rng.normal(size=(8, 8, 2)).astype(np.float32)
    arr[3, 3] = 2e9  # unknown-flow sentinel
    f = field_from(arr)
    ds = flow_io.sample_patches([f], per_frame=10, seed=4)
    for i in range(len(ds)):
        r, c = int(ds.rows[i]), int(ds.cols[i])
        assert not (r <= 3 <= r + 2 and c <= 3 <= c + 2)


def test_sample_patches_insufficient_area():
    arr = np.full((5, 5, 2), 2e9, dtype=np.float32)
    with pytest.raises(InsufficientValidArea):
        flow_io.sample_patches([field_from(arr)], per_frame=2, seed=0)
    with pytest.raises(InsufficientValidArea):
        flow_io.sample_patches([field_from(np.zeros((2, 9, 2)))], per_frame=1, seed=0)


def dataset_with_contrasts(contrasts, rng):
    basis = patch_core.dct_basis()
    patches = np.stack([c * basis.flow_u[0] + 0.1 * c * basis.flow_v[1]
                        for c in contrasts])
    patches /= np.sqrt(1 + 0.01)  # contrast back to the nominal values
    return flow_io.make_dataset(patches)


def test_top_contrast_filter_examples(rng):
    ds = dataset_with_contrasts(np.arange(1.0, 11.0), rng)
    kept = flow_io.top_contrast_filter(ds, 20.0)
    assert sorted(np.round(kept.contrast).astype(int).tolist()) == [9, 10]
    all_kept = flow_io.top_contrast_filter(ds, 100.0)
    assert len(all_kept) == 10
    assert all_kept.normalized
    assert np.allclose(patch_core.contrast_norm(all_kept.patches), 1.0, atol=1e-9)
    assert np.allclose(patch_core.mean_flow(all_kept.patches), 0.0, atol=1e-12)


def test_top_contrast_filter_matches_nearest_rank_oracle(rng):
    vals = rng.uniform(0.5, 4.0, 137)
    ds = dataset_with_contrasts(vals, rng)
    for percent in (7.0, 20.0, 33.3, 64.0):
        kept = flow_io.top_contrast_filter(ds, percent)
        want = nearest_rank_top(vals, percent)
        got = {int(np.argmin(np.abs(vals - c))) for c in kept.contrast}
        assert got == want


def test_top_contrast_composition(rng):
    vals = rng.uniform(0.1, 9.0, 1000)
    ds = dataset_with_contrasts(vals, rng)
    one_shot = flow_io.top_contrast_filter(ds, 1.0)
    composed = flow_io.top_contrast_filter(flow_io.top_contrast_filter(ds, 20.0), 5.0)
    assert sorted(one_shot.contrast.tolist()) == sorted(composed.contrast.tolist())


def test_top_contrast_reconstruction(rng):
    frames = make_frames(rng, n_frames=1)
    raw = flow_io.sample_patches(frames, per_frame=20, seed=2)
    raw_patches = raw.patches.copy()
    filtered = flow_io.top_contrast_filter(raw, 50.0)
    for i in range(len(filtered)):
        recon = filtered.contrast[i] * filtered.patches[i] + np.repeat(
            filtered.means[i], 9)
        src = raw_patches[np.nonzero(raw.contrast == filtered.contrast[i])[0][0]]
        assert np.allclose(recon, src, atol=1e-6)


def test_top_contrast_empty():
    with pytest.raises(EmptyResult):
        flow_io.top_contrast_filter(flow_io.make_dataset(np.zeros((0, 18))), 50.0)


def test_downsample(rng):
    ds = dataset_with_contrasts(rng.uniform(1, 2, 30), rng)
    same = flow_io.downsample(ds, 30, seed=5)
    assert np.array_equal(same.patches, ds.patches)
    empty = flow_io.downsample(ds, 0, seed=5)
    assert len(empty) == 0
    a = flow_io.downsample(ds, 10, seed=5)
    b = flow_io.downsample(ds, 10, seed=5)
    assert np.array_equal(a.patches, b.patches)
    with pytest.raises(TooFew):
        flow_io.downsample(ds, 31, seed=5)


def test_dataset_binary_roundtrip(rng):
    frames = make_frames(rng, n_frames=2)
    ds = flow_io.sample_patches(frames, per_frame=7, seed=11)
    data = flow_io.dataset_to_bytes(ds)
    back = flow_io.dataset_from_bytes(data)
    assert flow_io.dataset_to_bytes(back) == data
    assert np.array_equal(back.patches, ds.patches)
    assert np.array_equal(back.frames, ds.frames)
    assert data[:4] == b"OFPD"


def test_dataset_csv_header(rng):
    ds = dataset_with_contrasts([1.0, 2.0], rng)
    csv = flow_io.dataset_to_csv(ds)
    assert csv.splitlines()[0] == ("frame,row,col,contrast,mean_u,mean_v,"
                                   "u1,u2,u3,u4,u5,u6,u7,u8,u9,"
                                   "v1,v2,v3,v4,v5,v6,v7,v8,v9")


def test_record_accessor(rng):
    frames = make_frames(rng, n_frames=1)
    ds = flow_io.sample_patches(frames, per_frame=3, seed=6)
    rec = ds.record(1)
    assert rec.frame == 0
    assert rec.pixel == (int(ds.rows[1]), int(ds.cols[1]))
    assert np.array_equal(rec.patch, ds.patches[1])
    assert rec.contrast == ds.contrast[1]


def test_provenance_appends(rng):
    ds = dataset_with_contrasts(rng.uniform(1, 2, 40), rng)
    out = flow_io.downsample(flow_io.top_contrast_filter(ds, 50.0), 10, seed=1)
    assert any("top_contrast_filter" in s for s in out.provenance)
    assert any("downsample" in s for s in out.provenance)
