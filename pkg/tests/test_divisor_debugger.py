from debug_tools.divisor_debugger import debug_divisors, divisor_debugger


def entry(kind, value):
    return {"kind": kind, "divisor_value": value, "threshold": 1e-3, "indices": {"k": [1, 0]}}


def test_ledger_counts_and_smallest():
    assert debug_divisors([entry("scalar", 1e-4), entry("tensor4", -2e-5)], nu=1) == 2
    assert debug_divisors([entry("scalar", 3e-4)]) == 1
    stats = divisor_debugger.get_divisor_stats()
    assert stats["total_reports"] == 3
    assert stats["by_kind"] == {"scalar": 2, "tensor4": 1}
    assert stats["smallest"]["divisor_value"] == -2e-5
    assert stats["smallest"]["nu"] == 1


def test_empty_batch_writes_nothing():
    assert debug_divisors([]) == 0
    assert divisor_debugger.get_divisor_stats()["total_reports"] == 0


def test_clear_and_print(capsys):
    debug_divisors([entry("block_eigen", 5e-4)], nu=2)
    divisor_debugger.print_debug_info()
    out = capsys.readouterr().out
    assert "block_eigen: 1" in out
    assert "step 2" in out
    divisor_debugger.clear()
    assert divisor_debugger.get_divisor_stats()["total_reports"] == 0


def test_ledger_warning_has_plain_message(caplog):
    with caplog.at_level("WARNING", logger="divisor_debugger"):
        debug_divisors([entry("scalar", 1e-4)], nu=0)
    messages = [r.getMessage() for r in caplog.records if r.name == "divisor_debugger"]
    assert messages == ["1 small divisors logged ({'nu': 0})"]
