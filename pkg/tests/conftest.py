import pytest

from isla_forge.corpus import load_spec
from isla_forge.grammar import parse_grammar
from isla_forge.predicates import standard_registry

TINY_AB = """
<start> ::= <a> <b>
<a> ::= "x" | "y"
<b> ::= "0" | "1"
"""

TINY_LIST = """
<s> ::= "x" | "x" <s>
"""


@pytest.fixture(scope="session")
def registry():
    return standard_registry()


@pytest.fixture(scope="session")
def xml_spec():
    return load_spec("xml")


@pytest.fixture(scope="session")
def rest_spec():
    return load_spec("rest")


@pytest.fixture(scope="session")
def csv_spec():
    return load_spec("csv")


@pytest.fixture(scope="session")
def xml_grammar(xml_spec):
    return xml_spec.grammar


@pytest.fixture
def tiny_ab():
    return parse_grammar(TINY_AB)


@pytest.fixture
def tiny_list():
    return parse_grammar(TINY_LIST)
