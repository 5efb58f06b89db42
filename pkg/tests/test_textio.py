import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from onebit_radar import textio

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(re=arrays(np.float64, st.integers(1, 20), elements=finite))
def test_vector_round_trip_is_exact(re):
    z = re + 1j * re[::-1]
    back = textio.parse_vector(textio.format_vector(z))
    np.testing.assert_array_equal(back, z)


def test_stack_and_matrix_round_trip(tmp_path, rng):
    S = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    textio.write_stack(tmp_path / "s.txt", S)
    np.testing.assert_array_equal(textio.read_stack(tmp_path / "s.txt"), S)
    M = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    textio.write_matrix(tmp_path / "m.csv", M)
    np.testing.assert_array_equal(textio.read_matrix(tmp_path / "m.csv"), M)
    assert b"\r" not in (tmp_path / "m.csv").read_bytes()


def test_parse_accepts_comments_and_real_only():
    np.testing.assert_array_equal(textio.parse_vector("# header\n1.5\n\n2 -1\n"), [1.5, 2 - 1j])


@pytest.mark.parametrize("text", ["", "1 2 3\n", "a b\n"])
def test_parse_rejects_bad_input(text):
    with pytest.raises(ValueError):
        textio.parse_vector(text)


def test_stack_lengths_must_agree(tmp_path):
    (tmp_path / "s.txt").write_text("1 0\n2 0\n\n3 0\n", encoding="utf-8")
    with pytest.raises(ValueError):
        textio.read_stack(tmp_path / "s.txt")


def test_matrix_must_be_square(tmp_path):
    (tmp_path / "m.csv").write_text("1 0;2 0\n", encoding="utf-8")
    with pytest.raises(ValueError):
        textio.read_matrix(tmp_path / "m.csv")
