import numpy as np

from cgmkit.checkpoint import load_tensors, save_tensors


def test_round_trip(tmp_path):
    tensors = {
        "enc.weight": np.arange(12.0).reshape(3, 4),
        "enc.bias": np.array([1.0, -2.0, 3.5]),
        "scalar": np.array(7.25),
    }
    path = tmp_path / "model.cgmt"
    save_tensors(path, tensors)
    back = load_tensors(path)
    assert list(back) == list(tensors)
    for name in tensors:
        assert back[name].shape == np.asarray(tensors[name]).shape
        assert np.array_equal(back[name], tensors[name])


def test_byte_identical_rewrites(tmp_path):
    tensors = {"a": np.linspace(0, 1, 17), "b": np.eye(3)}
    p1, p2 = tmp_path / "one.cgmt", tmp_path / "two.cgmt"
    save_tensors(p1, tensors)
    save_tensors(p2, tensors)
    assert p1.read_bytes() == p2.read_bytes()


def test_header_is_text(tmp_path):
    path = tmp_path / "m.cgmt"
    save_tensors(path, {"w": np.zeros((2, 2))})
    head = path.read_bytes().split(b"\nend\n")[0].decode("utf-8")
    assert head.startswith("CGMTENSORS 1")
    assert "tensor w 2 2 2 0" in head
