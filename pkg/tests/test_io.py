import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pathlimit.action import EUCLIDEAN, SystemSpec, TimeGrid
from pathlimit.classical import least_action_path
from pathlimit.io import (
    format_number,
    kernel_to_csv,
    path_to_csv,
    read_binary,
    read_csv,
    wavefunction_to_csv,
    write_binary,
    write_csv,
    write_json,
)
from pathlimit.propagator import GridWaveFunction, SpatialGrid, build_kernel

finite = st.floats(allow_nan=False, allow_infinity=False)


@given(finite)
def test_number_format_round_trips(x):
    assert float(format_number(x)) == x


def test_number_format_types():
    assert format_number(np.int64(3)) == "3"
    assert format_number(True) == "1" and format_number(np.bool_(False)) == "0"
    assert format_number("label") == "label"


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)), elements=finite))
def test_csv_round_trip(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    header = [f"c{i}" for i in range(data.shape[1])]
    write_csv(path, header, data)
    h, back = read_csv(path)
    assert h == header
    assert np.array_equal(back, data)


@given(st.one_of(
    hnp.arrays(np.float64, hnp.array_shapes(max_dims=4, max_side=5), elements=finite),
    hnp.arrays(np.complex128, hnp.array_shapes(max_dims=4, max_side=5),
               elements=st.complex_numbers(allow_nan=False, allow_infinity=False, max_magnitude=1e300)),
))
def test_binary_round_trip(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("bin") / "a.plk"
    write_binary(path, data)
    back = read_binary(path)
    assert back.dtype.kind == data.dtype.kind and back.shape == data.shape
    assert np.array_equal(back, data)


def test_binary_header_layout(tmp_path):
    path = write_binary(tmp_path / "a.plk", np.arange(6.0).reshape(2, 3))
    raw = path.read_bytes()
    assert raw[:4] == b"PLK1"
    assert int.from_bytes(raw[4:8], "little") == 2
    assert int.from_bytes(raw[8:12], "little") == 0
    assert len(raw) == 12 + 16 + 48
    (tmp_path / "bad").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ValueError):
        read_binary(tmp_path / "bad")


def test_kernel_wavefunction_and_path_exports(tmp_path):
    grid = SpatialGrid(-4, 4, 9)
    kernel = build_kernel(SystemSpec.single(1.0), TimeGrid(0, 0.5, 4, EUCLIDEAN), grid)
    header, data = read_csv(kernel_to_csv(kernel, tmp_path / "k.csv"))
    assert header == ["x", "x_in", "re", "im"] and data.shape == (81, 4)
    assert np.array_equal(data[:, 2].reshape(9, 9), kernel.entries.real)

    psi = GridWaveFunction.gaussian(grid, 0.3, 0.5, wavenumber=1.0)
    _, data = read_csv(wavefunction_to_csv(psi, tmp_path / "psi.csv"))
    assert np.array_equal(data[:, 1] + 1j * data[:, 2], psi.amplitudes)

    tg = TimeGrid(0, 1, 5, EUCLIDEAN)
    (res,) = least_action_path(SystemSpec.single(1.0), 0.0, 1.0, tg)
    header, data = read_csv(path_to_csv(res, tmp_path / "path.csv"))
    assert header == ["tau", "X"]
    assert np.array_equal(data[:, 0], tg.times) and np.array_equal(data[:, 1], res.positions)


def test_json_writes_nan_as_null_and_numpy_scalars(tmp_path):
    path = write_json(tmp_path / "r.json", {"a": math.nan, "b": [np.float64(1.5), np.inf], "c": np.bool_(True),
                                            "d": np.arange(2)})
    back = json.loads(path.read_text())
    assert back == {"a": None, "b": [1.5, None], "c": True, "d": [0, 1]}
    with pytest.raises(TypeError):
        write_json(tmp_path / "x.json", {"a": object()})
