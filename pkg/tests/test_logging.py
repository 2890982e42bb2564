import logging

import pytest

from app.utils.logging import (
    DEBUG,
    INFO,
    TRACE,
    WARNING,
    configure_logging,
    get_logger,
    level_from_name,
    parse_module_levels,
)


def test_level_from_name():
    assert level_from_name("trace") == TRACE
    assert level_from_name("Debug") == DEBUG
    assert level_from_name(None) == INFO
    assert level_from_name("loud", WARNING) == WARNING


def test_parse_module_levels():
    levels = parse_module_levels(["rbd_kernels=trace, app.cli=WARNING", "hw_model=DEBUG", ""])
    assert levels == {
        "app.services.rbd_kernels": TRACE,
        "app.cli": WARNING,
        "app.services.hw_model": DEBUG,
    }


@pytest.mark.parametrize("entry", ["rbd_kernels", "=DEBUG", "hw_model=LOUD"])
def test_parse_module_levels_rejects_bad_entries(entry):
    with pytest.raises(ValueError):
        parse_module_levels([entry])


def test_module_override_opens_one_logger(tmp_path):
    log_file = tmp_path / "run.log"
    configure_logging(INFO, str(log_file), {"app.services.rbd_kernels": TRACE})
    get_logger("app.services.rbd_kernels.detail").trace("kernel trace")
    get_logger("app.services.hw_model").debug("hidden debug")
    get_logger("app.services.hw_model").info("plan info")
    logging.getLogger("matplotlib").info("font cache")
    for handler in logging.getLogger().handlers:
        handler.flush()
    text = log_file.read_text()
    assert "kernel trace" in text
    assert "plan info" in text
    assert "hidden debug" not in text
    assert "font cache" not in text
    configure_logging()
