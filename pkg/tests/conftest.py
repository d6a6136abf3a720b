import sys
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from modbus_anomaly import capture, features, synth  # noqa: E402


@dataclass
class Generated:
    capture: capture.RawCapture
    sidecar: features.LabelSidecar
    records: list
    warnings: list
    dataset: features.LabeledDataset

    @property
    def matrix(self) -> features.FeatureMatrix:
        return features.encode(self.dataset)


def generate_builtin(name: str) -> Generated:
    cap, side = synth.load_scenario(name).generate()
    records, warnings = capture.records_from_capture(cap)
    return Generated(cap, side, records, warnings,
                     features.dataset_from_records(records, side, source_name=name))


@pytest.fixture(scope="session")
def ds1() -> Generated:
    return generate_builtin("ds1")


@pytest.fixture(scope="session")
def ds2() -> Generated:
    return generate_builtin("ds2")


@pytest.fixture(scope="session")
def ds3() -> Generated:
    return generate_builtin("ds3")


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.lines():
            terminalreporter.write_line(line)
