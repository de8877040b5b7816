"""Config parser tests: value typing, comments, and error line numbers."""

import pytest

from nlosid.config import ConfigError, parse_config, parse_config_text


def test_scalar_types_are_inferred():
    cfg = parse_config_text(
        "a.int = 7\n"
        "a.float = 2.5\n"
        "a.exp = 1e-3\n"
        "a.flag = true\n"
        "a.off = False\n"
        "a.name = hello\n"
    )
    assert cfg["a.int"] == 7 and isinstance(cfg["a.int"], int)
    assert cfg["a.float"] == 2.5
    assert cfg["a.exp"] == 1e-3
    assert cfg["a.flag"] is True
    assert cfg["a.off"] is False
    assert cfg["a.name"] == "hello"


def test_vectors_parse_to_float_tuples():
    cfg = parse_config_text("a.v = 1 2.5 -3\n")
    assert cfg["a.v"] == (1.0, 2.5, -3.0)


def test_multiword_strings_stay_strings():
    cfg = parse_config_text("a.names = A B C\n")
    assert cfg["a.names"] == "A B C"


def test_comments_and_blank_lines_are_ignored():
    cfg = parse_config_text("# header\n\na.k = 1  # trailing\n")
    assert cfg == {"a.k": 1}


def test_error_carries_line_number():
    with pytest.raises(ConfigError) as err:
        parse_config_text("a.k = 1\nnot a setting\n", origin="demo.cfg")
    assert err.value.lineno == 2
    assert "demo.cfg:2" in str(err.value)


def test_undotted_key_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("plain = 1\n")


def test_missing_value_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("a.k =\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config_text("a.k = 1\na.k = 2\n")
    assert err.value.lineno == 2


def test_parse_config_reads_files(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("sim.seed = 42\n")
    assert parse_config(p) == {"sim.seed": 42}


def test_file_error_names_the_file(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("oops\n")
    with pytest.raises(ConfigError) as err:
        parse_config(p)
    assert str(p) in str(err.value)
