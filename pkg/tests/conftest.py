import pytest

from casescribe.config import load_config
from casescribe.memory import FieldSpec, TabularSchema


@pytest.fixture(scope="session")
def cfg():
    """Default pipeline config: embedded taxonomy, bone-health schema."""
    return load_config()


@pytest.fixture(scope="session")
def small_schema():
    return TabularSchema(
        fields=(
            FieldSpec(name="age", edges=(0, 65, 80, 120)),
            FieldSpec(name="bmi", edges=(10, 18.5, 25, 60)),
            FieldSpec(name="sex", categories=("F", "M")),
        )
    )
