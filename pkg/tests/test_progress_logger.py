from progress_logger import ProgressLogger, format_duration


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now


def test_first_and_last_updates_always_log():
    clock = FakeClock()
    progress = ProgressLogger(clock=clock)
    progress.start("n004", total=3)
    assert progress.advance("n004")
    assert not progress.advance("n004")
    assert progress.advance("n004")
    assert progress.get_done("n004") == 3


def test_milestones_throttle_updates():
    clock = FakeClock()
    progress = ProgressLogger(intervals=[2, 10], clock=clock)
    progress.start("n016", total=100)
    assert progress.advance("n016")
    clock.now = 1.0
    assert not progress.advance("n016")
    clock.now = 2.5
    assert progress.advance("n016")
    clock.now = 9.0
    assert not progress.advance("n016")
    clock.now = 10.0
    assert progress.advance("n016")
    # the last interval repeats: next milestone at 20s
    clock.now = 15.0
    assert not progress.advance("n016")
    clock.now = 20.0
    assert progress.advance("n016")


def test_unknown_key_and_reset():
    progress = ProgressLogger(clock=FakeClock())
    assert not progress.advance("missing")
    assert progress.format_progress("missing") == ""
    progress.start("n064", total=10)
    progress.advance("n064", 4)
    progress.reset("n064")
    assert progress.get_done("n064") == 0


def test_format_progress():
    clock = FakeClock()
    progress = ProgressLogger(clock=clock)
    progress.start("n016", total=2000)
    progress.advance("n016", 250)
    clock.now = 3.7
    assert progress.format_progress("n016") == "(250/2000, 12.5%, 3s elapsed, ~25s left)"
    clock.now = 150.0
    assert progress.format_progress("n016") == "(250/2000, 12.5%, 2m elapsed, ~17m left)"
    progress.advance("n016", 1750)
    assert progress.format_progress("n016") == "(2000/2000, 100.0%, 2m elapsed)"


def test_format_duration_units():
    assert [format_duration(s) for s in (59, 61, 7200, 90000)] == ["59s", "1m", "2h", "1d"]
