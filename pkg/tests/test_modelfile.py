import numpy as np
import pytest

from mpciot import modelfile, rss
from mpciot import algebra as A
from mpciot.errors import FormatError
from mpciot.infer import REFERENCE_DIMS


def _model(rng, dims=(4, 3, 2)):
    return modelfile.random_plain(rng, dims)


def test_share_files_reconstruct_model(rng):
    w, b, acts = _model(rng)
    files = modelfile.share_model(w, b, acts, rng)
    models = [modelfile.load_shares(f, party=p) for p, f in zip((1, 2, 3), files)]
    assert models[0].dims == (4, 3, 2) and models[0].activations == ("relu", "linear")
    for j in range(2):
        assert np.array_equal(rss.reconstruct([m.weights[j] for m in models]), A.fp_encode(w[j]))
        assert np.array_equal(rss.reconstruct([m.biases[j] for m in models]), A.fp_encode(b[j]))


def test_dump_load_roundtrip(rng):
    blob = modelfile.share_model(*_model(rng), rng)[1]
    assert modelfile.dump_shares(modelfile.load_shares(blob), 2) == blob


def test_checksum_and_owner_checks(rng):
    blob = bytearray(modelfile.share_model(*_model(rng), rng)[0])
    with pytest.raises(FormatError, match="party"):
        modelfile.load_shares(bytes(blob), party=2)
    blob[30] ^= 1
    with pytest.raises(FormatError, match="checksum"):
        modelfile.load_shares(bytes(blob))
    with pytest.raises(FormatError):
        modelfile.load_shares(b"garbage")


def test_zero_model_shares_are_not_zero(rng):
    w = [np.zeros((3, 2))]
    files = modelfile.share_model(w, [np.zeros(2)], ("linear",), rng)
    m = modelfile.load_shares(files[0])
    assert np.any(m.weights[0].own != 0)
    assert not np.any(rss.reconstruct([modelfile.load_shares(f).weights[0] for f in files]))


def test_dims_mismatch(rng):
    w, b, acts = _model(rng)
    with pytest.raises(FormatError, match="declared"):
        modelfile.share_model(w, b, acts, rng, expected_dims=REFERENCE_DIMS)
    with pytest.raises(FormatError, match="chain"):
        modelfile.share_model([w[0], w[0]], b, acts, rng)
    with pytest.raises(FormatError, match="activation"):
        modelfile.share_model(w, b, ("relu", "tanh"), rng)


def test_plain_roundtrip(tmp_path, rng):
    w, b, acts = _model(rng)
    modelfile.save_plain(tmp_path / "m.npz", w, b, acts)
    w2, b2, acts2 = modelfile.load_plain(tmp_path / "m.npz")
    assert acts2 == acts
    assert all(np.array_equal(x, y) for x, y in zip(w + b, w2 + b2))


def test_random_plain_scales(rng):
    w, _, acts = modelfile.random_plain(rng)
    assert acts == ("relu",) * 4 + ("linear",)
    assert np.abs(w[0]).max() <= 1 / 187
    ws, _, _ = modelfile.random_plain(rng, scale="sqrt")
    assert np.abs(ws[0]).max() > 1 / 187


def test_write_share_files(tmp_path, rng):
    paths = modelfile.write_share_files(modelfile.share_model(*_model(rng), rng), tmp_path)
    assert [p.name for p in paths] == ["model.p1.bin", "model.p2.bin", "model.p3.bin"]


def test_random_plain_he_scale(rng):
    w, _, _ = modelfile.random_plain(rng, scale="he")
    assert np.abs(w[1]).max() <= np.sqrt(6 / 50)
    with pytest.raises(ValueError):
        modelfile.random_plain(rng, scale="xavier")
