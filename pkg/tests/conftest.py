import pytest

from reggraph.ingest import TimeWindowing, build_graph
from reggraph.synthgen import GeneratorConfig, generate


@pytest.fixture(scope="session")
def small_config():
    return GeneratorConfig(n_accounts=800, seed=5)


@pytest.fixture(scope="session")
def small_records(small_config):
    return generate(small_config)


@pytest.fixture(scope="session")
def small_built(small_config, small_records):
    return build_graph(small_records, TimeWindowing(small_config.origin), T_max=small_config.T)
