from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signrag.catalog import (
    Catalog,
    SignClass,
    add_class,
    load_catalog,
    remove_class,
    validate_code,
    write_manifest,
)
from signrag.errors import EmptyStoreError, ManifestParseError, NotFoundError, ValidationError
from signrag.fixtures import make_image, synthetic_classes
from signrag.vector_store import VectorStore


def _manifest(tmp_path, codes, name="catalog.jsonl"):
    classes = []
    for code in codes:
        img = tmp_path / f"{code}.png"
        img.write_bytes(make_image(code))
        classes.append(SignClass(code, code, img, "regulatory"))
    path = tmp_path / name
    write_manifest(path, classes)
    return path


def test_load_three_entries(tmp_path):
    cat = load_catalog(_manifest(tmp_path, ["R1-1", "R2-1", "R5-1"]))
    assert len(cat) == 3
    assert cat.version == 1
    assert cat.codes == ["R1-1", "R2-1", "R5-1"]
    assert not cat.is_indexed


def test_duplicate_code_names_the_code(tmp_path):
    path = _manifest(tmp_path, ["R1-1", "R2-1"])
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines + [lines[-1]]) + "\n")
    with pytest.raises(ValidationError, match="R2-1"):
        load_catalog(path)


def test_missing_image_names_the_path(tmp_path):
    path = _manifest(tmp_path, ["R1-1"])
    (tmp_path / "R1-1.png").unlink()
    with pytest.raises(FileNotFoundError, match="R1-1.png"):
        load_catalog(path)


def test_malformed_line_reports_line_number(tmp_path):
    path = _manifest(tmp_path, ["R1-1", "R2-1"])
    with open(path, "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(ManifestParseError) as info:
        load_catalog(path)
    assert info.value.line == 4
    assert ":4:" in str(info.value)


def test_wrong_header_is_parse_error(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps({"format": "other", "version": 1}) + "\n")
    with pytest.raises(ManifestParseError):
        load_catalog(path)


def test_303_entries(tmp_path):
    codes = [c for c, _ in synthetic_classes(303)]
    cat = load_catalog(_manifest(tmp_path, codes))
    assert len(cat) == 303


@pytest.mark.parametrize("code", ["R1-1", "R2-1", "R5-1a", "R10-11", "W1-2", "STOP"])
def test_code_shape_accepts(code):
    assert validate_code(code) == code


@pytest.mark.parametrize("code", ["", "r1-1", "R1_1", "1-1", "R1-", "NONE", "REJECTED"])
def test_code_shape_rejects(code):
    with pytest.raises(ValidationError):
        validate_code(code)


def _three():
    return Catalog(tuple(SignClass(c, c, b"x") for c in ("R1-1", "R2-1", "R5-1")), dimension=4)


def test_add_and_remove():
    cat = _three()
    bigger = add_class(cat, SignClass("R3-1", "No Right Turn", b"y"))
    assert len(bigger) == 4 and bigger.version == 2
    with pytest.raises(ValidationError):
        add_class(cat, SignClass("R2-1", "dup", b"z"))
    back = remove_class(bigger, "R3-1")
    assert back.same_classes(cat)
    assert back.version == 3


def test_remove():
    cat = Catalog((SignClass("R1-1", "a", b"a"), SignClass("R2-1", "b", b"b")))
    assert remove_class(cat, "R2-1").codes == ["R1-1"]
    with pytest.raises(NotFoundError):
        remove_class(cat, "X9-9")


def test_remove_all_then_retrieval_errors():
    cat = _three()
    for code in list(cat.codes):
        cat = remove_class(cat, code)
    assert len(cat) == 0
    with pytest.raises(EmptyStoreError):
        VectorStore(cat.dimension).query([0.0] * cat.dimension, 1)


_codes = st.sampled_from([f"R{i}-{j}" for i in range(1, 5) for j in range(1, 4)])
_ops = st.lists(st.tuples(st.sampled_from(["add", "remove"]), _codes), max_size=40)


@settings(max_examples=100, deadline=None)
@given(_ops)
def test_mutations_match_set_oracle(ops):
    cat = Catalog(dimension=4)
    oracle = set()
    version = cat.version
    for op, code in ops:
        if op == "add":
            if code in oracle:
                with pytest.raises(ValidationError):
                    add_class(cat, SignClass(code, code, b"i"))
                continue
            cat = add_class(cat, SignClass(code, code, b"i"))
            oracle.add(code)
        else:
            if code not in oracle:
                with pytest.raises(NotFoundError):
                    remove_class(cat, code)
                continue
            cat = remove_class(cat, code)
            oracle.discard(code)
        assert cat.version > version
        version = cat.version
        assert set(cat.codes) == oracle


def test_with_index_checks_dimension():
    cat = _three()
    with pytest.raises(ValidationError):
        cat.with_index("R1-1", None, [0.0] * 3)
    done = cat.with_index("R1-1", None, [0.0] * 4)
    assert done.version == cat.version + 1
