import datetime as dt

import numpy as np
import pandas as pd
import pytest

from conftest import dpc_frame
from phasepinn.data import (
    CENSUS_2020,
    WINDOW_DAYS,
    WINDOW_END,
    WINDOW_START,
    DataError,
    RegionSeries,
    SplitSpec,
    generate_synthetic,
    ingest_dpc_csv,
    read_dataset,
    region_slug,
    single_phase_wave,
    split,
    to_dpc_csv,
    two_phase_wave,
    write_dataset,
)


def write_frame(tmp_path, frame, name="dpc.csv"):
    path = tmp_path / name
    frame.to_csv(path, index=False)
    return path


def test_ingest_crops_to_window(tmp_path):
    frame = dpc_frame(["Lombardia", "Veneto"])
    series = ingest_dpc_csv(write_frame(tmp_path, frame))
    assert sorted(series) == ["lombardia", "veneto"]
    lom = series["lombardia"]
    assert len(lom) == WINDOW_DAYS
    assert lom.dates[0] == WINDOW_START and lom.dates[-1] == WINDOW_END
    assert lom.census_population == CENSUS_2020["Lombardia"]
    rows = frame[frame.denominazione_regione == "Lombardia"].reset_index(drop=True)
    first = (WINDOW_START - dt.date(2020, 2, 24)).days
    assert lom.infected[0] == rows.totale_positivi[first]
    assert lom.recovered_removed[5] == rows.dimessi_guariti[first + 5] + rows.deceduti[first + 5]


def test_ingest_all_regions(tmp_path, all_regions):
    series = ingest_dpc_csv(write_frame(tmp_path, dpc_frame(all_regions)))
    assert len(series) == 21
    assert all(len(s) == WINDOW_DAYS for s in series.values())
    assert "valle_daosta" in series and "p_a_bolzano" in series


def test_missing_column(tmp_path):
    frame = dpc_frame(["Molise"]).drop(columns=["deceduti"])
    with pytest.raises(DataError, match="deceduti"):
        ingest_dpc_csv(write_frame(tmp_path, frame))


def test_missing_day_is_named(tmp_path):
    frame = dpc_frame(["Molise"])
    frame = frame[~frame.data.str.startswith("2020-04-01")]
    with pytest.raises(DataError, match="2020-04-01"):
        ingest_dpc_csv(write_frame(tmp_path, frame))


def test_negative_positives_rejected(tmp_path):
    frame = dpc_frame(["Umbria"])
    frame.loc[frame.data.str.startswith("2020-05-02"), "totale_positivi"] = -3
    with pytest.raises(DataError, match="2020-05-02"):
        ingest_dpc_csv(write_frame(tmp_path, frame))


def test_duplicate_day_rejected(tmp_path):
    frame = dpc_frame(["Umbria"])
    frame = pd.concat([frame, frame.iloc[[20]]])
    with pytest.raises(DataError, match="duplicate"):
        ingest_dpc_csv(write_frame(tmp_path, frame))


def test_region_slug():
    assert region_slug("Valle d'Aosta") == "valle_daosta"
    assert region_slug("Friuli Venezia Giulia") == "friuli_venezia_giulia"
    assert region_slug("Emilia-Romagna") == "emilia_romagna"


def test_split_lengths():
    series, _ = generate_synthetic(single_phase_wave())
    train, test = split(series)
    assert len(train) == 35 and len(test) == 97
    assert test.dates[0] == train.dates[-1] + dt.timedelta(days=1)
    np.testing.assert_array_equal(np.concatenate([train.infected, test.infected]), series.infected)


def test_split_needs_enough_days():
    series, _ = generate_synthetic(single_phase_wave())
    with pytest.raises(DataError, match="100 days"):
        split(series.slice(0, 100), SplitSpec())


def test_series_validation():
    dates = [WINDOW_START + dt.timedelta(days=k) for k in range(3)]
    with pytest.raises(DataError, match="negative"):
        RegionSeries("x", "x", dates, [1, -1, 2], [0, 0, 0], 10)
    with pytest.raises(DataError, match="lengths"):
        RegionSeries("x", "x", dates, [1, 2], [0, 0, 0], 10)
    with pytest.raises(DataError, match="contiguous"):
        RegionSeries("x", "x", [dates[0], dates[2]], [1, 2], [0, 0], 10)


def test_dpc_round_trip(tmp_path, all_regions):
    original = ingest_dpc_csv(write_frame(tmp_path, dpc_frame(all_regions[:4])))
    path = tmp_path / "again.csv"
    to_dpc_csv(original, path)
    again = ingest_dpc_csv(path)
    assert sorted(again) == sorted(original)
    for rid in original:
        assert original[rid].equals(again[rid])


def test_dataset_round_trip_is_exact(tmp_path):
    series, _ = generate_synthetic(single_phase_wave(noise=0.1))
    raw = RegionSeries(
        "odd", "Odd", series.dates, series.infected + 1 / 3, series.recovered_removed + 0.1, 123456.789
    )
    write_dataset(tmp_path / "d", {"odd": raw, series.region_id: series})
    back = read_dataset(tmp_path / "d")
    assert back["odd"].equals(raw)
    assert back[series.region_id].equals(series)


def test_read_dataset_needs_manifest(tmp_path):
    with pytest.raises(DataError, match="manifest"):
        read_dataset(tmp_path)


def test_noiseless_synthetic_matches_truth():
    series, truth = generate_synthetic(single_phase_wave())
    np.testing.assert_array_equal(series.infected, np.round(truth.states[:, 1]))
    np.testing.assert_array_equal(series.recovered_removed, np.round(truth.states[:, 2]))
    assert series.census_population == 1e6


def test_truth_conserves_population():
    _, truth = generate_synthetic(two_phase_wave())
    np.testing.assert_allclose(truth.states.sum(axis=1), 1e5, rtol=1e-12)


def test_second_phase_decays_faster():
    _, single = generate_synthetic(single_phase_wave())
    _, double = generate_synthetic(two_phase_wave())
    np.testing.assert_array_equal(single.states[:64], double.states[:64])
    assert np.all(double.states[70:, 1] < single.states[70:, 1])


def test_phase_switch_is_continuous():
    _, truth = generate_synthetic(two_phase_wave())
    steps = np.abs(np.diff(truth.states[:, 1]))
    # the jump in recovery rate bends the curve but does not make it jump
    assert steps[63] < 3 * steps[62] + 1e3


def test_noise_is_seeded():
    a, _ = generate_synthetic(single_phase_wave(seed=3, noise=0.05))
    b, _ = generate_synthetic(single_phase_wave(seed=3, noise=0.05))
    c, _ = generate_synthetic(single_phase_wave(seed=4, noise=0.05))
    assert a.equals(b)
    assert not np.array_equal(a.infected, c.infected)


def test_synthetic_spec_validation():
    spec = two_phase_wave()
    with pytest.raises(ValueError):
        type(spec)(phases=((2, spec.phases[0][1]),), i0=1.0)
    with pytest.raises(ValueError):
        type(spec)(phases=(spec.phases[1], spec.phases[0]), i0=1.0)
