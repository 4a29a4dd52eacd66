import pytest

from icanet import dataio, pipeline

WEIGHT_SEED = 42
CLIP_SEED = 40


@pytest.fixture(scope="session")
def small_weights(tmp_path_factory):
    """Seeded Glorot weights for the small profile, one file per modality."""
    root = tmp_path_factory.mktemp("weights")
    profile = pipeline.PROFILES["small"]
    paths = {}
    for modality in pipeline.MODALITIES:
        net = profile.network(modality)
        paths[modality] = root / f"{net.name}.icaw"
        dataio.save_weights(dataio.glorot_weights(net.parameter_shapes(), WEIGHT_SEED), paths[modality])
    return paths


@pytest.fixture(scope="session")
def synth_manifest(tmp_path_factory):
    """Four synthetic clips (one per label) and their manifest."""
    return dataio.synth_dataset(CLIP_SEED, 4, tmp_path_factory.mktemp("clips"))



def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", help="also run full-resolution tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="full-resolution run; use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    item_text = _criterion_text.get(report.nodeid)
    if item_text is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _criteria[report.nodeid] = (status, item_text)


_criterion_text: dict[str, str] = {}


def pytest_itemcollected(item):
    mark = item.get_closest_marker("criterion")
    if mark:
        _criterion_text[item.nodeid] = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for status, text in _criteria.values():
        terminalreporter.write_line(f"[{status}] {text}")
