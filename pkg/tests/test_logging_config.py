from __future__ import annotations

import json
import logging

from boxnorm.logging_config import JSONFormatter, TextFormatter, setup_logging


def _record(**extra: object) -> logging.LogRecord:
    record = logging.LogRecord("boxnorm.solver", logging.INFO, __file__, 1, "fista finished", None, None)
    for key, value in extra.items():
        setattr(record, key, value)
    return record


def test_json_formatter_carries_extra_fields() -> None:
    payload = json.loads(JSONFormatter().format(_record(iteration=12, objective=0.5)))
    assert payload["message"] == "fista finished"
    assert payload["level"] == "INFO"
    assert payload["iteration"] == 12
    assert payload["objective"] == 0.5


def test_text_formatter_appends_extra_fields() -> None:
    line = TextFormatter().format(_record(penalty="box"))
    assert "fista finished" in line
    assert line.endswith("penalty=box")


def test_formatted_time_is_not_an_extra_field() -> None:
    record = _record()
    line = TextFormatter().format(record)
    assert "asctime=" not in line
    assert line.endswith("fista finished")
    # the text formatter leaves asctime on the record for later handlers
    assert "asctime" not in json.loads(JSONFormatter().format(record))


def test_setup_logging_installs_one_handler() -> None:
    root = logging.getLogger()
    saved_handlers, saved_level = root.handlers[:], root.level
    try:
        setup_logging(log_format="json", log_level="debug")
        setup_logging(log_format="json", log_level="info")
        assert root.level == logging.INFO
        assert len(root.handlers) == 1
        assert isinstance(root.handlers[0].formatter, JSONFormatter)
    finally:
        root.handlers[:] = saved_handlers
        root.setLevel(saved_level)
