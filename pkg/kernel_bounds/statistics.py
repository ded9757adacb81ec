import datetime
import json
import queue
import secrets
import threading

import numpy as np
import pytz


def to_json_native(value):
    if isinstance(value, (datetime.datetime, datetime.date)):
        return value.isoformat()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError("Object of type {} is not JSON serializable".format(type(value).__name__))


class Statistics:
    """Appends one JSON object per logged record to a file, from a background thread.

    Records carry the message, a UTC time stamp and the run token. "<date>" in the file name
    is replaced by the current UTC date when the record is written.
    """

    def __init__(self, filename):

        self.filename = filename
        self.queue = queue.Queue()
        self.token = secrets.token_urlsafe()
        self.records_written = 0

        self.thread = threading.Thread(target=self.run, args=())
        self.thread.daemon = False  # Keep writing until close() drained the queue.
        self.thread.start()

    def log(self, message, payload=None, **kwargs):

        record = dict(payload) if payload is not None else dict()
        record.update(kwargs)

        record["message"] = message
        record["log_timestamp"] = pytz.UTC.localize(datetime.datetime.utcnow())
        record["token"] = self.token

        self.queue.put(record)

    def close(self):
        self.queue.put(None)
        self.thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()

    def current_filename(self):
        if "<date>" not in self.filename:
            return self.filename
        return self.filename.replace("<date>", datetime.datetime.now(pytz.UTC).date().isoformat())

    def run(self):
        while True:
            record = self.queue.get()

            if record is None:
                break

            try:
                buffer = json.dumps(record, default=to_json_native)
            except (TypeError, ValueError) as e:
                buffer = json.dumps({"message": "serialization_error", "what": str(e), "payload": str(record),
                                     "token": self.token})

            with open(self.current_filename(), "a") as f:
                f.write(buffer + "\n")
            self.records_written += 1
