import csv
import io

import pytest

from teecontrol.bench import CSV_COLUMNS, ROWS, InfeasibleLoop, TimingReport, TimingRow, run_benchmark

TABLE_ROWS = ("Enclave creation", "Dynamic output feedback controller", "AES-GCM encryption",
              "AES-GCM decryption", "Delta t", "Total secure loop", "Total plaintext loop")


@pytest.fixture(scope="module")
def report():
    return run_benchmark(reps=100, rounds=3, crossing_us=50.0)


def test_row_set(report):
    assert ROWS == TABLE_ROWS
    assert set(report.rows) == set(TABLE_ROWS)
    assert report.reps == 100 and all(r.n > 0 for r in report.rows.values())


def test_orderings(report):
    assert report.feasible
    assert report.secure_slower_than_plaintext
    assert report.rows["Total secure loop"].mean_us >= report.rows["Dynamic output feedback controller"].mean_us
    assert report.rows["Delta t"].mean_us >= 2 * 50.0


def test_text_and_csv(report):
    text = report.to_text()
    for name in TABLE_ROWS:
        assert name in text
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert rows[0] == CSV_COLUMNS
    assert [r[0] for r in rows[1:]] == list(TABLE_ROWS)


def test_strict_infeasible():
    # a crossing cost far above Ts makes the secure loop miss its deadline
    with pytest.raises(InfeasibleLoop):
        run_benchmark(reps=10, rounds=1, crossing_us=60_000.0, strict=True)


def test_reps_validation():
    with pytest.raises(ValueError):
        run_benchmark(reps=0)


def test_feasibility_property():
    row = TimingRow("x", 1, 1.0, 1.0, 1.0, 0.0, None, "")
    rows = {n: row for n in TABLE_ROWS}
    assert TimingReport(rows, 1, 1, 0.0, 2, 0.1).feasible
    rows["Total secure loop"] = TimingRow("x", 1, 2e5, 2e5, 2e5, 0.0, None, "")
    assert not TimingReport(rows, 1, 1, 0.0, 2, 0.1).feasible
