import struct

import numpy as np
import pytest

from malgray.errors import BadMagic, DescriptorError, FeatureDimMismatch, NameMismatch, NotATransferModel, ShapeMismatch
from malgray.models import (
    BackboneDescriptor,
    ClassifierHead,
    build_scratch_cnn,
    build_transfer_model,
    describe,
    graph_from_description,
    load_ntc,
    save_ntc,
    set_frozen,
    tiny_backbone,
)
from malgray.ntc import TruncatedNtc, decode_ntc, encode_ntc, read_ntc
from malgray.optimizer import AdamState, adam_step
from malgray.tensor import loss_and_grad
from malgray.tensor.graph import Conv2d, Dense, MaxPool2d, ReLU, Softmax

import oracles

VGG = ((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512))


def test_transfer_head_layout():
    g = build_transfer_model(tiny_backbone())
    names = [type(s).__name__ for s in g.layers[-4:]]
    assert names == ["Dense", "ReLU", "Dense", "Softmax"]
    assert (g.layers[-4].in_features, g.layers[-4].out_features) == (64, 1024)
    assert g.layers[-2].out_features == 9
    assert g.output_shape == (9,)


def test_feature_dim_mismatch():
    with pytest.raises(FeatureDimMismatch):
        build_transfer_model(tiny_backbone(), ClassifierHead(128))


def test_head_must_have_nine_outputs():
    with pytest.raises(ValueError):
        ClassifierHead(64, num_classes=10)


def test_same_seed_same_init():
    a, b = build_transfer_model(tiny_backbone(), seed=5), build_transfer_model(tiny_backbone(), seed=5)
    for (ka, pa), (kb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert ka == kb and pa.value.tobytes() == pb.value.tobytes()
    c = build_transfer_model(tiny_backbone(), seed=6)
    assert c.state()["head.0.weight"].tobytes() != a.state()["head.0.weight"].tobytes()


def test_he_uniform_bounds():
    g = build_transfer_model(tiny_backbone())
    w = g.state()["head.0.weight"]
    bound = np.sqrt(6 / 64)
    assert np.abs(w).max() <= bound and np.abs(w).max() > 0.9 * bound
    assert (g.state()["head.0.bias"] == 0).all()


def test_paper_scratch_structure_and_count():
    g = build_scratch_cnn("paper")
    assert sum(isinstance(s, Conv2d) for s in g.layers) == 13
    assert sum(isinstance(s, MaxPool2d) for s in g.layers) == 5
    dense = [s for s in g.layers if isinstance(s, Dense)]
    assert len(dense) == 2 and isinstance(g.layers[-1], Softmax)
    param_layers = [s for s in g.layers if isinstance(s, (Conv2d, Dense))]
    assert all(isinstance(s, Dense) for s in param_layers[-2:])
    assert g.input_shape == (1, 256, 256)
    assert g.parameter_count() == oracles.vgg_param_count(VGG, 1, 256)
    assert g.parameter_count() == 48_278_217


def test_tiny_scratch_forward_softmax():
    g = build_scratch_cnn("tiny")
    assert g.parameter_count() == oracles.vgg_param_count(((4, 4), (8, 8), (8, 8, 8), (8, 8, 8), (8, 8, 8)), 1, 32)
    from malgray.tensor import forward

    out, _ = forward(g, np.random.default_rng(0).random((4, 1, 32, 32)))
    assert out.shape == (4, 9) and np.allclose(out.sum(axis=1), 1, atol=1e-6)


def _one_step(g, seed=0):
    rng = np.random.default_rng(seed)
    g.zero_grad()
    loss_and_grad(g, rng.random((4,) + g.input_shape).astype(np.float32), rng.integers(0, 9, 4))
    adam_step(g, AdamState())


def test_freeze_unfreeze():
    g = build_transfer_model(tiny_backbone(input_hw=16))
    before = {k: v.tobytes() for k, v in g.state().items()}
    _one_step(g)
    after = g.state()
    assert all(after[k].tobytes() == before[k] for k in before if k.startswith("backbone"))
    assert any(after[k].tobytes() != before[k] for k in before if k.startswith("head"))
    set_frozen(g, False)
    snap = {k: v.tobytes() for k, v in g.state().items()}
    _one_step(g, 1)
    assert any(g.state()[k].tobytes() != snap[k] for k in snap if k.startswith("backbone"))


def test_freeze_idempotent():
    g = build_transfer_model(tiny_backbone())
    flags = [p.trainable for _, p in g.named_parameters()]
    set_frozen(set_frozen(g, True), True)
    assert [p.trainable for _, p in g.named_parameters()] == flags
    set_frozen(g, False)
    set_frozen(g, False)
    assert all(p.trainable for _, p in g.named_parameters())
    assert g.parameter_count(trainable_only=False) == 99_369


def test_scratch_is_not_transfer():
    with pytest.raises(NotATransferModel):
        set_frozen(build_scratch_cnn("tiny"), True)


def test_descriptor_parse_and_errors(tmp_path):
    text = "# toy\nname toy\ninput 1 8 8\nconv 1 4 3 3 1 1 1\nbn 4 1e-5\nrelu\nresadd 1\nmaxpool 2 2\nflatten\n"
    d = BackboneDescriptor.parse(text)
    assert d.feature_dim() == 64 and d.name == "toy"
    p = tmp_path / "toy.desc"
    p.write_text(text)
    assert BackboneDescriptor.load(p).expected_shapes()["backbone.1.var"] == (4,)
    for bad in ["input 1 8 8\nconv 1 4 3\ngap\n", "input 1 8 8\nrelu\n", "input 1 8 8\ngap\nsoftmax\n",
                "input 1 8 8\nwibble\ngap\n", "relu\ngap\n"]:
        with pytest.raises(DescriptorError):
            BackboneDescriptor.parse(bad)


def test_depthwise_descriptor():
    d = BackboneDescriptor.parse("input 4 8 8\nconv 4 4 3 3 1 1 4\nrelu\ngap\n")
    g = build_transfer_model(d)
    assert g.state()["backbone.0.weight"].shape == (4, 1, 3, 3)


def test_describe_round_trip():
    for g in (build_transfer_model(tiny_backbone()), build_scratch_cnn("tiny")):
        h = graph_from_description(describe(g))
        assert describe(h) == describe(g)
        assert [k for k, _ in h.named_parameters()] == [k for k, _ in g.named_parameters()]


# -- NTC ---------------------------------------------------------------------------

def test_ntc_layout_by_hand():
    arr = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
    expected = (b"NTC1" + struct.pack("<I", 1) + struct.pack("<H", 3) + b"w.x" + bytes([0, 2])
                + struct.pack("<2I", 1, 3) + struct.pack("<3f", 1.0, 2.0, 3.0))
    assert encode_ntc({"w.x": arr}) == expected
    assert decode_ntc(expected)["w.x"].tolist() == [[1.0, 2.0, 3.0]]


def test_ntc_graph_round_trip(tmp_path):
    g = build_transfer_model(tiny_backbone(), seed=3)
    save_ntc(g, tmp_path / "w.ntc")
    back = load_ntc(tmp_path / "w.ntc", g)
    for k, v in g.state().items():
        assert back[k].dtype == v.dtype and back[k].tobytes() == v.tobytes()
    assert encode_ntc(read_ntc(tmp_path / "w.ntc")) == (tmp_path / "w.ntc").read_bytes()


def test_ntc_float64_and_empty_rank():
    t = {"a": np.arange(3.0), "s": np.array(2.5, dtype=np.float32)}
    back = decode_ntc(encode_ntc(t))
    assert back["a"].dtype == np.float64 and back["s"].shape == ()


def test_ntc_name_mismatch(tmp_path):
    bb = tiny_backbone()
    g = build_transfer_model(bb)
    state = {k: v for k, v in g.state().items() if k.startswith("backbone")}
    state["backbone.99.weight"] = np.zeros(2, np.float32)
    p = tmp_path / "x.ntc"
    p.write_bytes(encode_ntc(state))
    with pytest.raises(NameMismatch) as info:
        load_ntc(p, bb)
    assert "backbone.99.weight" in str(info.value)
    p.write_bytes(encode_ntc({}))
    with pytest.raises(NameMismatch) as info:
        load_ntc(p, bb)
    assert set(info.value.missing) == set(bb.expected_shapes())


def test_ntc_shape_mismatch(tmp_path):
    bb = tiny_backbone()
    state = {k: np.zeros(s, np.float32) for k, s in bb.expected_shapes().items()}
    state["backbone.0.bias"] = np.zeros(5, np.float32)
    p = tmp_path / "x.ntc"
    p.write_bytes(encode_ntc(state))
    with pytest.raises(ShapeMismatch):
        load_ntc(p, bb)


def test_ntc_truncation_and_magic():
    buf = encode_ntc({"a": np.zeros((2, 2), np.float32)})
    for cut in (len(buf) - 1, 12, 6):
        with pytest.raises(TruncatedNtc):
            decode_ntc(buf[:cut])
    with pytest.raises(TruncatedNtc):
        decode_ntc(buf + b"\x00")
    with pytest.raises(BadMagic):
        decode_ntc(b"NTC2" + buf[4:])


def test_pretrained_weights_loaded(tmp_path):
    bb = tiny_backbone()
    src = build_transfer_model(bb, seed=11)
    save_ntc(src, tmp_path / "bb.ntc", prefix="backbone")
    bb.pretrained_weights = str(tmp_path / "bb.ntc")
    g = build_transfer_model(bb, seed=0)
    assert g.state()["backbone.3.weight"].tobytes() == \
        src.state()["backbone.3.weight"].tobytes()
    assert g.state()["head.0.weight"].tobytes() != src.state()["head.0.weight"].tobytes()


def test_bundled_descriptor_file_matches_builtin():
    import os

    import malgray
    from malgray.models import describe, resolve_backbone

    path = os.path.join(os.path.dirname(malgray.__file__), "data", "tiny.desc")
    a = build_transfer_model(resolve_backbone(path))
    b = build_transfer_model(resolve_backbone("tiny"))
    assert describe(a) == describe(b)
