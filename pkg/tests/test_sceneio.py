import numpy as np
import pytest

from scenediff.errors import SceneFormatError
from scenediff.grids import VoxelGrid
from scenediff.sceneio import export_ply, export_slices, load_scene, rle_decode, rle_encode, save_scene
from scenediff.toydata import driving_class_table, toy_class_table


def test_round_trip_raw_and_rle(tmp_path):
    rng = np.random.default_rng(0)
    table = toy_class_table(5)
    for trial in range(20):
        g = VoxelGrid(rng.integers(0, 5, size=(7, 5, 3)))
        for rle in (False, True):
            path = tmp_path / f"s{trial}_{rle}.vxsc"
            save_scene(g, table, path, rle=rle)
            loaded, lt = load_scene(path)
            assert loaded == g
            assert lt.names == table.names
            assert lt.colors == table.colors


def test_rle_and_raw_load_identically(tmp_path):
    rng = np.random.default_rng(1)
    table = toy_class_table(4)
    g = VoxelGrid(rng.integers(0, 4, size=(8, 8, 4)))
    save_scene(g, table, tmp_path / "raw.vxsc", rle=False)
    save_scene(g, table, tmp_path / "rle.vxsc", rle=True)
    a, _ = load_scene(tmp_path / "raw.vxsc")
    b, _ = load_scene(tmp_path / "rle.vxsc")
    assert a == b


def test_rle_codec_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        flat = rng.integers(0, 3, size=rng.integers(1, 200)).astype(np.uint8)
        assert np.array_equal(rle_decode(rle_encode(flat), flat.size), flat)


def test_bad_magic(tmp_path):
    table = toy_class_table(4)
    path = tmp_path / "x.vxsc"
    save_scene(VoxelGrid(np.zeros((2, 2, 2), dtype=int)), table, path)
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    path.write_bytes(bytes(data))
    with pytest.raises(SceneFormatError, match="magic"):
        load_scene(path)


def test_truncated_payload(tmp_path):
    table = toy_class_table(4)
    path = tmp_path / "x.vxsc"
    save_scene(VoxelGrid(np.arange(8).reshape(2, 2, 2) % 4), table, path, rle=False)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(SceneFormatError):
        load_scene(path)


def test_label_out_of_table_range(tmp_path):
    path = tmp_path / "x.vxsc"
    save_scene(VoxelGrid(np.zeros((2, 2, 2), dtype=int)), toy_class_table(2), path)
    data = bytearray(path.read_bytes())
    data[-1] = 3  # last byte of the single RLE pair is the run label
    path.write_bytes(bytes(data))
    with pytest.raises(SceneFormatError):
        load_scene(path)


def test_export_ply_counts_and_palette(tmp_path):
    table = driving_class_table()
    empty = VoxelGrid(np.zeros((3, 3, 2), dtype=int))
    export_ply(empty, table, tmp_path / "empty.ply")
    text = (tmp_path / "empty.ply").read_text()
    assert "element vertex 0" in text

    labels = np.zeros((3, 3, 2), dtype=int)
    labels[0, 0, 0] = 10  # Vehicles
    labels[1, 1, 1] = 1
    export_ply(VoxelGrid(labels), table, tmp_path / "two.ply")
    lines = (tmp_path / "two.ply").read_text().splitlines()
    assert "element vertex 2" in lines[2]
    body = lines[lines.index("end_header") + 1:]
    assert len(body) == 2
    assert body[0].endswith("100 150 245")  # Vehicles palette entry


def test_export_slices_ppm(tmp_path):
    table = toy_class_table(4)
    g = VoxelGrid(np.zeros((4, 5, 3), dtype=int))
    paths = export_slices(g, table, tmp_path / "slices")
    assert len(paths) == 3
    data = paths[0].read_bytes()
    assert data.startswith(b"P6\n5 4\n255\n")
    assert len(data) - len(b"P6\n5 4\n255\n") == 4 * 5 * 3
