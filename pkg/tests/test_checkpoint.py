import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from cpdss.checkpoint import CheckpointError, dump_container, parse_container
from cpdss.config import Config, load_config, full_preset


def test_container_layout_by_hand():
    blob = dump_container('{"a":1}', {"w": np.array([[1.0, 2.0]], dtype=np.float32)})
    expected = (b"CPDS" + struct.pack("<II", 1, 7) + b'{"a":1}' + struct.pack("<I", 1) + b"w"
                + struct.pack("<I", 2) + struct.pack("<2Q", 1, 2) + struct.pack("<2f", 1.0, 2.0))
    assert blob == expected


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=8),
                       arrays(np.float32, array_shapes(min_dims=0, max_dims=3, max_side=4),
                              elements=st.floats(-1e6, 1e6, width=32)),
                       max_size=5))
def test_load_save_byte_identical(arrays_):
    blob = dump_container({"x": [1, 2]}, arrays_)
    text, back = parse_container(blob)
    assert dump_container(text, back) == blob
    for k, v in arrays_.items():
        assert np.array_equal(back[k], v)


def test_container_errors():
    blob = dump_container("{}", {"a": np.zeros(3)})
    with pytest.raises(CheckpointError):
        parse_container(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        parse_container(blob[:-2])
    dup = blob + blob[4 + 8 + 2:]
    with pytest.raises(CheckpointError, match="duplicate"):
        parse_container(dup)


def test_config_round_trip_and_hash():
    c = Config(seed=3)
    assert Config.from_json(c.to_json()) == c
    assert c.hash() == Config(seed=3).hash() != Config(seed=4).hash()
    assert c.diff(c.replace(lr=1e-3)) == {"lr": (5e-4, 1e-3)}
    with pytest.raises(ValueError):
        Config.from_dict({"nope": 1})


def test_full_preset_values():
    p = full_preset()
    assert (p.lr, p.k, p.egnn_layers, p.schedule, p.n_samples) == (5e-4, 3, 4, "sqrt", 200)


def test_load_config_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"preset": "full", "T": 50}))
    c = load_config(path, seed=9)
    assert (c.preset, c.d, c.T, c.seed) == ("full", 1280, 50, 9)
