import datetime
import json

import numpy as np
import pytz

from kernel_bounds.statistics import Statistics


def read_records(path):
    with open(path) as f:
        return [json.loads(line) for line in f]


def test_records_carry_message_and_token(tmp_path):
    path = str(tmp_path / "stats.jsonl")
    with Statistics(path) as stats:
        stats.log("solved primal", dict(value=np.float64(0.25)), iterations=np.int64(12), theta=np.arange(3.0))
        stats.log("done")

    records = read_records(path)
    assert [r["message"] for r in records] == ["solved primal", "done"]
    assert records[0]["value"] == 0.25 and records[0]["iterations"] == 12
    assert records[0]["theta"] == [0.0, 1.0, 2.0]
    assert records[0]["token"] == records[1]["token"] == stats.token
    assert records[0]["log_timestamp"].endswith("+00:00")


def test_unserializable_payload_is_recorded(tmp_path):
    path = str(tmp_path / "stats.jsonl")
    with Statistics(path) as stats:
        stats.log("config", problem=object())

    record, = read_records(path)
    assert record["message"] == "serialization_error"
    assert "config" in record["payload"]


def test_date_in_filename(tmp_path):
    with Statistics(str(tmp_path / "run-<date>.jsonl")) as stats:
        stats.log("starting execution")
    today = datetime.datetime.now(pytz.UTC).date().isoformat()
    assert len(read_records(str(tmp_path / "run-{}.jsonl".format(today)))) == 1
    assert stats.records_written == 1
