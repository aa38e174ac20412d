from pathlib import Path

import pytest

from lib.audit.dataset import AttributeSchema, OutcomeColumn, ProtectedAttribute
from lib.audit.scenarios import gen_gerrymandering, gen_hiring_pipeline


@pytest.fixture
def gerrymandering():
    return gen_gerrymandering()


@pytest.fixture
def gerrymandering_with_truth():
    return gen_gerrymandering(ground_truth='predictions')


@pytest.fixture
def hiring():
    return gen_hiring_pipeline()


@pytest.fixture
def loan_schema():
    return AttributeSchema(
        attributes=(
            ProtectedAttribute(name='sex', domain=('Male', 'Female'), protected_value='Female'),
            ProtectedAttribute(name='age', kind='numeric'),
        ),
        label_column=OutcomeColumn(name='repaid', positive='yes', negative='no'),
        prediction_column=OutcomeColumn(name='approved', positive='1', negative='0'),
    )


@pytest.fixture
def write_text(tmp_path):
    def write(name: str, text: str) -> Path:
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return path

    return write
