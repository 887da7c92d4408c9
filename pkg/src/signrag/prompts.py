"""Versioned prompt templates stored as package data."""
from functools import lru_cache
from importlib import resources
from string import Template

DEFAULT_VERSION = "v1"


@lru_cache(maxsize=None)
def load_template(name: str, version: str = DEFAULT_VERSION) -> Template:
    """Load ``templates/<name>_<version>.txt`` as a :class:`string.Template`."""
    filename = f"{name}_{version}.txt"
    try:
        text = resources.files("signrag").joinpath("templates").joinpath(filename).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"no prompt template {filename!r}") from None
    return Template(text)


def render(name: str, version: str = DEFAULT_VERSION, **values) -> str:
    return load_template(name, version).substitute(**values)
