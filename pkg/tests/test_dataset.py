import hashlib

import pytest

from conjmoments.dataset import HEADER, DatasetError, embedded_csv_text, get_row, load_dataset


def test_embedded_dataset_has_22_unique_rows():
    rows = load_dataset()
    assert len(rows) == 22
    assert [r.id for r in rows] == list(range(1, 23))
    assert all(0.0 < r.miss_m <= 1000.0 for r in rows)


def test_golden_values():
    r6 = get_row(6)
    assert r6.miss_m == 169.69422900919537
    assert r6.speed_mps == 0.5163147984061247
    assert get_row(18).elements_a.a == 14447.097916907036
    r1 = get_row(1)
    assert r1.miss_m == pytest.approx(5.832, abs=1e-3)
    assert r1.speed_mps == pytest.approx(2104.77, abs=1e-2)


def test_raw_fields_round_trip_bit_identical():
    text = embedded_csv_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    assert tuple(lines[0].split(",")) == HEADER
    for line, row in zip(lines[1:], load_dataset()):
        assert tuple(line.split(",")) == row.raw
        assert float(row.raw[13]) == row.miss_m


def test_embedded_file_is_stable():
    # any edit to the embedded table shows up here
    digest = hashlib.sha256(embedded_csv_text().encode()).hexdigest()
    assert digest == "be9a8802fca69a847c354c9fe72342f96a9d010b251554fd86eee37719ec6963"
    assert len(embedded_csv_text().splitlines()) == 23


def test_malformed_row_names_line(tmp_path):
    lines = embedded_csv_text().splitlines()
    lines[4] = lines[4].replace(",", ";", 1)
    p = tmp_path / "bad.csv"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=r"bad.csv:5"):
        load_dataset(p)


def test_non_numeric_field_names_line(tmp_path):
    lines = embedded_csv_text().splitlines()
    fields = lines[2].split(",")
    fields[3] = "abc"
    lines[2] = ",".join(fields)
    p = tmp_path / "bad.csv"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=r":3:"):
        load_dataset(p)


def test_header_and_row_count_checks(tmp_path):
    lines = embedded_csv_text().splitlines()
    p = tmp_path / "short.csv"
    p.write_text("\n".join(lines[:5]) + "\n")
    with pytest.raises(DatasetError, match="expected 22 rows"):
        load_dataset(p)
    assert len(load_dataset(p, expect_rows=None)) == 4
    p.write_text("a,b\n")
    with pytest.raises(DatasetError, match="header"):
        load_dataset(p)


def test_unknown_row():
    with pytest.raises(KeyError):
        get_row(99)
