import time


def pytest_configure(config):
    config._caginalp_session_start = time.perf_counter()


def pytest_collection_modifyitems(config, items):
    # the CLI contract also checks the total suite runtime, so it runs last
    last = [it for it in items if it.name == "test_criterion_9_cli_contract"]
    items[:] = [it for it in items if it not in last] + last
