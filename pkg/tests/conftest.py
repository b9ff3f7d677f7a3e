import pytest

from speech2sing.toy import make_toy_corpus


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    return make_toy_corpus(tmp_path_factory.mktemp("toy"))
