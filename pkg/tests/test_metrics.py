import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ufo.metrics import (
    MatrixError,
    RunReport,
    accuracy_avg,
    emit_matrix,
    forgetting_avg,
    matrix_to_csv,
    matrix_to_svg,
    parse_matrix_csv,
)

NAN = np.nan
HAND = np.array([[0.9, NAN], [0.6, 0.8]])


def test_accuracy_examples():
    assert accuracy_avg([[0.9]]) == 0.9
    assert accuracy_avg(HAND) == 0.7
    assert accuracy_avg(np.full((4, 4), 0.37)) == pytest.approx(0.37, abs=1e-15)


def test_forgetting_examples():
    # -0.3 up to the representation error of the decimal inputs
    assert abs(forgetting_avg(HAND) - (-0.3)) <= 1e-15
    assert forgetting_avg(np.array([[0.5, NAN], [0.5, 0.9]])) == 0.0
    assert abs(forgetting_avg(np.array([[0.7, NAN], [0.75, 0.1]])) - 0.05) <= 1e-15
    assert forgetting_avg([[0.9]]) is None


def test_incomplete_matrix_rejected():
    with pytest.raises(MatrixError):
        accuracy_avg(np.array([[0.9, NAN], [NAN, 0.8]]))


def test_single_cell_csv():
    assert matrix_to_csv([[0.25]]) == "i,j,accuracy\n1,1,0.25\n"


lower = st.integers(1, 6).flatmap(
    lambda n: st.lists(st.floats(0, 1), min_size=n * (n + 1) // 2, max_size=n * (n + 1) // 2).map(lambda v: (n, v))
)


@settings(max_examples=50, deadline=None)
@given(lower)
def test_csv_round_trip_is_exact(case):
    n, values = case
    m = np.full((n, n), NAN)
    m[np.tril_indices(n)] = values
    back = parse_matrix_csv(matrix_to_csv(m))
    np.testing.assert_array_equal(back, m)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_svg_cell_count(n):
    m = np.full((n, n), NAN)
    m[np.tril_indices(n)] = np.linspace(0, 1, n * (n + 1) // 2)
    assert matrix_to_svg(m).count('class="cell"') == n * (n + 1) // 2


def test_svg_shade_is_linear():
    svg = matrix_to_svg(np.array([[0.0, NAN], [1.0, 0.5]]))
    assert "rgb(255,255,255)" in svg and "rgb(31,78,161)" in svg and "rgb(143,166,208)" in svg


def test_emit_matrix_writes_both_files(tmp_path):
    csv_path, svg_path = emit_matrix(HAND, tmp_path / "out" / "m")
    np.testing.assert_array_equal(parse_matrix_csv(csv_path.read_text()), HAND)
    assert svg_path.read_text().startswith("<svg")


def test_emit_matrix_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_matrix(HAND, blocker / "m")


def test_parse_rejects_upper_triangle_and_junk():
    with pytest.raises(MatrixError):
        parse_matrix_csv("i,j,accuracy\n1,2,0.5\n")
    with pytest.raises(MatrixError):
        parse_matrix_csv("i,j,accuracy\n1,x,0.5\n")


def test_run_report_round_trip_and_consistency():
    report = RunReport.build("ufo", 3, {"lr": 0.005}, HAND, flips=[10, 11], score_clean=[1.2, 1.1], score_noisy=[0.4, 0.5])
    text = report.to_text()
    back = RunReport.from_text(text)
    assert back.to_text() == text
    assert abs(back.accuracy - accuracy_avg(back.matrix)) <= 1e-12
    assert back.flips == [10, 11]


def test_run_report_tampering_detected():
    text = RunReport.build("bare", 1, {}, HAND).to_text().replace("accuracy=0.7", "accuracy=0.71")
    with pytest.raises(MatrixError):
        RunReport.from_text(text)
