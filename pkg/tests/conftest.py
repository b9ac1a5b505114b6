import pytest

from cfpm.eventlog import enrich_durations, parse_csv
from cfpm.repair import TABLE1_CSV, i_repair, repair_csv_config, repair_plan, repair_sem
from cfpm.situations import build_table


@pytest.fixture(scope="session")
def table1_log():
    return parse_csv(TABLE1_CSV, repair_csv_config())


@pytest.fixture(scope="session")
def enriched_log(table1_log):
    return enrich_durations(table1_log, "duration", "hours")


@pytest.fixture(scope="session")
def repair_table(enriched_log):
    return build_table(enriched_log, repair_plan())


@pytest.fixture(scope="session")
def sem_repair():
    return repair_sem()


@pytest.fixture(scope="session")
def instance_repair():
    return i_repair()
