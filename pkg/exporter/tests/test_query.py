import dataclasses
import datetime

import pytest

from gee_exporter import COLLECTION_ID, DW_BANDS, ExportTask, build_query
from gee_exporter.errors import ValidationError
from gee_exporter.query import COLLECTION, COMPOSITE


def make_task(year=2016, bbox=(31.0, -104.0, 31.01, -103.99)):
    return ExportTask(
        batch_id=0,
        year=year,
        bbox=bbox,
        date_start=datetime.date(year, 6, 1),
        date_end=datetime.date(year, 10, 1),
        bands=DW_BANDS,
        width_px=40,
        height_px=40,
        destination=f"batch_0_{year}_0601-1001.lras",
    )


def test_descriptor_fields():
    task = make_task()
    q = build_query(task)
    assert q.collection == COLLECTION_ID == "GOOGLE/DYNAMICWORLD/V1"
    assert q.bbox == task.bbox
    # end date is exclusive: the filter covers [06-01, 10-01)
    assert (q.date_start, q.date_end) == ("2016-06-01", "2016-10-01")
    assert q.bands == DW_BANDS
    assert q.scale_m == 10.0
    assert q.mode == COMPOSITE


def test_year_changes_only_the_date_filter():
    a = build_query(make_task(2016)).to_dict()
    b = build_query(make_task(2017)).to_dict()
    differing = {k for k in a if a[k] != b[k]}
    assert differing == {"date_start", "date_end"}
    assert b["date_start"] == "2017-06-01" and b["date_end"] == "2017-10-01"


def test_collection_mode():
    q = build_query(make_task(), mode=COLLECTION)
    assert q.mode == COLLECTION
    with pytest.raises(ValidationError):
        build_query(make_task(), mode="mosaic")


def test_antimeridian_is_rejected():
    task = make_task(bbox=(10.0, 179.9, 10.5, -179.9))
    with pytest.raises(ValidationError, match="antimeridian"):
        build_query(task)


def test_dates_before_availability_are_rejected():
    task = make_task(year=2014)
    with pytest.raises(ValidationError, match="availability"):
        build_query(task)
    # first season fully inside the archive
    build_query(make_task(year=2016))


def test_scale_must_be_positive():
    with pytest.raises(ValidationError):
        build_query(make_task(), scale_m=0.0)


def test_descriptor_is_immutable():
    q = build_query(make_task())
    with pytest.raises(dataclasses.FrozenInstanceError):
        q.scale_m = 30.0
