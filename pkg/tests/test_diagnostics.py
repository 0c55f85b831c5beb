import importlib
import logging


def test_session_log_lives_in_the_state_dir(monkeypatch, tmp_path):
    monkeypatch.setenv("XDG_STATE_HOME", str(tmp_path / "state"))

    import gradleak.state as state
    import gradleak.diagnostics as diagnostics

    importlib.reload(state)
    importlib.reload(diagnostics)
    diagnostics.reset_logging_for_tests()

    diagnostics.log_info("hello %s", "world")
    path = diagnostics.session_log_path()
    content = path.read_text(encoding="utf-8")
    assert "Logging initialized" in content
    assert "hello world" in content
    assert path.name.startswith("session-") and path.parent == tmp_path / "state" / "gradleak"

    diagnostics.reset_logging_for_tests()


def test_enable_console_mirrors_records_to_stderr(capsys):
    from gradleak import diagnostics

    diagnostics.enable_console(logging.INFO)
    diagnostics.log_warning("degenerate samples=%s", 3)
    diagnostics.log_debug("hidden detail")

    err = capsys.readouterr().err
    assert "degenerate samples=3" in err
    assert "hidden detail" not in err


def test_last_run_pointer_round_trips(tmp_path):
    from gradleak.state import load_last_run, save_last_run

    assert load_last_run() is None
    save_last_run(tmp_path / "run", {"trials": 2})
    last = load_last_run()
    assert last["out_dir"] == str(tmp_path / "run")
    assert last["meta"] == {"trials": 2}
